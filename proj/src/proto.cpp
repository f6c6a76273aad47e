#include "gustwall/proto.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace gustwall::proto {

namespace {

void put_u16(Bytes& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(Bytes& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint16_t get_u16(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[at + i];
  return v;
}

std::uint64_t get_u64(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[at + i];
  return v;
}

bool known_type(std::uint8_t t) { return t >= 1 && t <= 4; }

std::size_t payload_size(MsgType type) {
  switch (type) {
    case MsgType::SetPwm:
    case MsgType::TachReport:
      return kFanPayloadSize;
    case MsgType::Ping:
    case MsgType::Pong:
      return 0;
  }
  return 0;
}

}  // namespace

FanId::FanId(int module_index, int fan_index) : module_(module_index), fan_(fan_index) {
  if (module_index < 0 || module_index >= kModules || fan_index < 0 || fan_index >= kFansPerModule) {
    throw std::out_of_range("FanId(" + std::to_string(module_index) + ", " +
                            std::to_string(fan_index) + ") outside 15 x 9 array");
  }
}

FanId FanId::from_global(int global_index) {
  if (global_index < 0 || global_index >= kFans) {
    throw std::out_of_range("global fan index " + std::to_string(global_index) + " outside 0..134");
  }
  return FanId(global_index / kFansPerModule, global_index % kFansPerModule);
}

std::string_view to_string(MsgType type) {
  switch (type) {
    case MsgType::SetPwm: return "SET_PWM";
    case MsgType::TachReport: return "TACH_REPORT";
    case MsgType::Ping: return "PING";
    case MsgType::Pong: return "PONG";
  }
  return "UNKNOWN";
}

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidPayload: return "InvalidPayload";
    case ErrorCode::Truncated: return "Truncated";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::BadVersion: return "BadVersion";
    case ErrorCode::UnknownType: return "UnknownType";
    case ErrorCode::BadLength: return "BadLength";
    case ErrorCode::BadCrc: return "BadCrc";
  }
  return "Unknown";
}

ProtoError::ProtoError(ErrorCode code, const std::string& detail)
    : Error(Category::InputData, std::string(to_string(code)) + ": " + detail), code_(code) {}

Frame make_set_pwm(std::uint8_t module, std::uint32_t seq, std::uint64_t timestamp_us,
                   const std::array<std::uint16_t, kFansPerModule>& duties) {
  return Frame{MsgType::SetPwm, module, seq, timestamp_us, SetPwmPayload{duties}};
}

Frame make_tach_report(std::uint8_t module, std::uint32_t seq, std::uint64_t timestamp_us,
                       const std::array<std::uint16_t, kFansPerModule>& rpms) {
  return Frame{MsgType::TachReport, module, seq, timestamp_us, TachPayload{rpms}};
}

Frame make_ping(std::uint8_t module, std::uint32_t seq, std::uint64_t timestamp_us) {
  return Frame{MsgType::Ping, module, seq, timestamp_us, std::monostate{}};
}

Frame make_pong(std::uint8_t module, std::uint32_t seq, std::uint64_t timestamp_us) {
  return Frame{MsgType::Pong, module, seq, timestamp_us, std::monostate{}};
}

std::size_t frame_size(MsgType type) { return kHeaderSize + payload_size(type) + kCrcSize; }

std::uint16_t crc16(std::span<const std::uint8_t> data) {
  std::uint16_t crc = 0xFFFF;
  for (std::uint8_t byte : data) {
    crc ^= static_cast<std::uint16_t>(byte) << 8;
    for (int bit = 0; bit < 8; ++bit) {
      crc = (crc & 0x8000) ? static_cast<std::uint16_t>((crc << 1) ^ 0x1021)
                           : static_cast<std::uint16_t>(crc << 1);
    }
  }
  return crc;
}

Bytes encode_frame(const Frame& frame) {
  if (!known_type(static_cast<std::uint8_t>(frame.type))) {
    throw ProtoError(ErrorCode::InvalidPayload, "unknown message type");
  }
  if (frame.module_index >= kModules) {
    throw ProtoError(ErrorCode::InvalidPayload,
                     "module_index " + std::to_string(frame.module_index) + " >= 15");
  }

  const std::array<std::uint16_t, kFansPerModule>* values = nullptr;
  switch (frame.type) {
    case MsgType::SetPwm: {
      const auto* p = std::get_if<SetPwmPayload>(&frame.payload);
      if (p == nullptr) throw ProtoError(ErrorCode::InvalidPayload, "SET_PWM needs a duty payload");
      for (auto d : p->duties) {
        if (d > kMaxDuty) {
          throw ProtoError(ErrorCode::InvalidPayload, "duty " + std::to_string(d) + " > 10000");
        }
      }
      values = &p->duties;
      break;
    }
    case MsgType::TachReport: {
      const auto* p = std::get_if<TachPayload>(&frame.payload);
      if (p == nullptr) throw ProtoError(ErrorCode::InvalidPayload, "TACH_REPORT needs an rpm payload");
      for (auto r : p->rpms) {
        if (r > kMaxTachRpm) {
          throw ProtoError(ErrorCode::InvalidPayload, "rpm " + std::to_string(r) + " > 4000");
        }
      }
      values = &p->rpms;
      break;
    }
    case MsgType::Ping:
    case MsgType::Pong:
      if (!std::holds_alternative<std::monostate>(frame.payload)) {
        throw ProtoError(ErrorCode::InvalidPayload, "PING/PONG carry no payload");
      }
      break;
  }

  Bytes out;
  out.reserve(frame_size(frame.type));
  out.push_back(kMagic0);
  out.push_back(kMagic1);
  out.push_back(kVersion);
  out.push_back(static_cast<std::uint8_t>(frame.type));
  out.push_back(frame.module_index);
  out.push_back(0);  // flags
  put_u16(out, static_cast<std::uint16_t>(payload_size(frame.type)));
  put_u32(out, frame.seq);
  put_u64(out, frame.timestamp_us);
  if (values != nullptr) {
    for (auto v : *values) put_u16(out, v);
  }
  put_u16(out, crc16(out));
  return out;
}

DecodeResult decode_frame(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderSize + kCrcSize) return ErrorCode::Truncated;
  if (bytes[0] != kMagic0 || bytes[1] != kMagic1) return ErrorCode::BadMagic;
  if (bytes[2] != kVersion || bytes[5] != 0) return ErrorCode::BadVersion;
  if (!known_type(bytes[3])) return ErrorCode::UnknownType;

  const auto type = static_cast<MsgType>(bytes[3]);
  const std::size_t expected = frame_size(type);
  if (get_u16(bytes, 6) != payload_size(type)) return ErrorCode::BadLength;
  if (bytes.size() < expected) return ErrorCode::Truncated;
  if (bytes.size() > expected) return ErrorCode::BadLength;

  const std::uint16_t stored = get_u16(bytes, expected - kCrcSize);
  if (crc16(bytes.first(expected - kCrcSize)) != stored) return ErrorCode::BadCrc;

  Frame frame;
  frame.type = type;
  frame.module_index = bytes[4];
  frame.seq = get_u32(bytes, 8);
  frame.timestamp_us = get_u64(bytes, 12);
  if (frame.module_index >= kModules) return ErrorCode::InvalidPayload;

  if (type == MsgType::SetPwm || type == MsgType::TachReport) {
    std::array<std::uint16_t, kFansPerModule> values{};
    for (int i = 0; i < kFansPerModule; ++i) values[i] = get_u16(bytes, kHeaderSize + 2 * i);
    const std::uint16_t limit = type == MsgType::SetPwm ? kMaxDuty : kMaxTachRpm;
    if (std::any_of(values.begin(), values.end(), [&](auto v) { return v > limit; })) {
      return ErrorCode::InvalidPayload;
    }
    if (type == MsgType::SetPwm) {
      frame.payload = SetPwmPayload{values};
    } else {
      frame.payload = TachPayload{values};
    }
  }
  return frame;
}

std::uint32_t seq_gap(std::uint32_t prev, std::uint32_t next) {
  return static_cast<std::uint32_t>(next - prev - 1u);
}

std::uint16_t duty_to_wire(double fraction) {
  if (!(fraction > 0.0)) return 0;  // also catches NaN
  const double clamped = std::min(fraction, 1.0);
  return static_cast<std::uint16_t>(std::lround(clamped * kMaxDuty));
}

double duty_from_wire(std::uint16_t wire) { return static_cast<double>(wire) / kMaxDuty; }

}  // namespace gustwall::proto
