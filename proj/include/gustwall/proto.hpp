#pragma once

// Binary wire protocol between the controller and the fan-module endpoints.
//
// Every frame is little-endian and fixed-length for its message type:
//
//   offset  size  field
//   0       2     magic "GW" (0x47 0x57)
//   2       1     version (1)
//   3       1     msg_type (SET_PWM=1, TACH_REPORT=2, PING=3, PONG=4)
//   4       1     module_index (0..14)
//   5       1     flags (must be 0)
//   6       2     payload_len (18 for SET_PWM/TACH_REPORT, 0 otherwise)
//   8       4     seq
//   12      8     timestamp_us
//   20      n     payload: 9 x u16 (duty in 1/100 %, or rpm)
//   20+n    2     crc16 (CCITT-FALSE) over bytes [0, 20+n)
//
// docs/protocol.md carries the same table and is normative.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include "gustwall/error.hpp"

namespace gustwall::proto {

inline constexpr int kModules = 15;
inline constexpr int kFansPerModule = 9;
inline constexpr int kFans = kModules * kFansPerModule;

inline constexpr std::uint8_t kMagic0 = 0x47;  // 'G'
inline constexpr std::uint8_t kMagic1 = 0x57;  // 'W'
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::size_t kHeaderSize = 20;
inline constexpr std::size_t kCrcSize = 2;
inline constexpr std::size_t kFanPayloadSize = kFansPerModule * 2;

inline constexpr std::uint16_t kMaxDuty = 10000;  // hundredths of a percent
inline constexpr std::uint16_t kMaxTachRpm = 4000;

using Bytes = std::vector<std::uint8_t>;

class FanId {
 public:
  FanId(int module_index, int fan_index);
  static FanId from_global(int global_index);

  int module_index() const noexcept { return module_; }
  int fan_index() const noexcept { return fan_; }
  int global() const noexcept { return module_ * kFansPerModule + fan_; }

  friend bool operator==(const FanId&, const FanId&) = default;

 private:
  int module_;
  int fan_;
};

enum class MsgType : std::uint8_t { SetPwm = 1, TachReport = 2, Ping = 3, Pong = 4 };

std::string_view to_string(MsgType type);

struct SetPwmPayload {
  std::array<std::uint16_t, kFansPerModule> duties{};
  friend bool operator==(const SetPwmPayload&, const SetPwmPayload&) = default;
};

struct TachPayload {
  std::array<std::uint16_t, kFansPerModule> rpms{};
  friend bool operator==(const TachPayload&, const TachPayload&) = default;
};

using Payload = std::variant<std::monostate, SetPwmPayload, TachPayload>;

struct Frame {
  MsgType type = MsgType::Ping;
  std::uint8_t module_index = 0;
  std::uint32_t seq = 0;
  std::uint64_t timestamp_us = 0;
  Payload payload;

  friend bool operator==(const Frame&, const Frame&) = default;
};

Frame make_set_pwm(std::uint8_t module, std::uint32_t seq, std::uint64_t timestamp_us,
                   const std::array<std::uint16_t, kFansPerModule>& duties);
Frame make_tach_report(std::uint8_t module, std::uint32_t seq, std::uint64_t timestamp_us,
                       const std::array<std::uint16_t, kFansPerModule>& rpms);
Frame make_ping(std::uint8_t module, std::uint32_t seq, std::uint64_t timestamp_us);
Frame make_pong(std::uint8_t module, std::uint32_t seq, std::uint64_t timestamp_us);

enum class ErrorCode {
  InvalidPayload,
  Truncated,
  BadMagic,
  BadVersion,
  UnknownType,
  BadLength,
  BadCrc,
};

std::string_view to_string(ErrorCode code);

class ProtoError : public Error {
 public:
  ProtoError(ErrorCode code, const std::string& detail);
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Total encoded size for a message type.
std::size_t frame_size(MsgType type);

// CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no final xor.
std::uint16_t crc16(std::span<const std::uint8_t> data);

// Throws ProtoError{InvalidPayload} when a field is out of range or the
// payload alternative does not match the message type.
Bytes encode_frame(const Frame& frame);

// Never throws; returns either the decoded frame or the reason it was rejected.
using DecodeResult = std::variant<Frame, ErrorCode>;
DecodeResult decode_frame(std::span<const std::uint8_t> bytes);

// Number of frames missing between two received sequence numbers, with
// 32-bit wraparound.
std::uint32_t seq_gap(std::uint32_t prev, std::uint32_t next);

// Duty as a fraction in [0, 1] <-> wire units.
std::uint16_t duty_to_wire(double fraction);
double duty_from_wire(std::uint16_t wire);

}  // namespace gustwall::proto
