#include "gustwall/net.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstdlib>
#include <cstring>

#include "gustwall/util.hpp"
#include "json.hpp"

namespace gustwall::net {

using nlohmann::json;

namespace {

sockaddr_in resolve(const std::string& host, int port) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (host.empty() || host == "0.0.0.0") {
    addr.sin_addr.s_addr = htonl(INADDR_ANY);
    return addr;
  }
  if (inet_pton(AF_INET, host.c_str(), &addr.sin_addr) == 1) return addr;
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_DGRAM;
  addrinfo* res = nullptr;
  if (getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr) {
    throw NetError("cannot resolve host '" + host + "'");
  }
  addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  freeaddrinfo(res);
  return addr;
}

std::string errno_text() { return std::strerror(errno); }

}  // namespace

UdpSocket::UdpSocket(const std::string& host, int port) {
  if (port < 0 || port > 65535) throw NetError("port " + std::to_string(port) + " out of range");
  fd_ = ::socket(AF_INET, SOCK_DGRAM | SOCK_CLOEXEC, 0);
  if (fd_ < 0) throw NetError("socket: " + errno_text());
  const sockaddr_in addr = resolve(host, port);
  if (::bind(fd_, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0) {
    const std::string why = errno_text();
    ::close(fd_);
    fd_ = -1;
    throw NetError("cannot bind " + host + ":" + std::to_string(port) + ": " + why);
  }
}

UdpSocket::~UdpSocket() {
  if (fd_ >= 0) ::close(fd_);
}

UdpSocket::UdpSocket(UdpSocket&& other) noexcept : fd_(other.fd_) { other.fd_ = -1; }

UdpSocket& UdpSocket::operator=(UdpSocket&& other) noexcept {
  if (this != &other) {
    if (fd_ >= 0) ::close(fd_);
    fd_ = other.fd_;
    other.fd_ = -1;
  }
  return *this;
}

int UdpSocket::local_port() const {
  sockaddr_in addr{};
  socklen_t len = sizeof addr;
  if (::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len) != 0) throw NetError("getsockname: " + errno_text());
  return ntohs(addr.sin_port);
}

void UdpSocket::send_to(const Address& to, std::span<const std::uint8_t> data) const {
  const sockaddr_in addr = resolve(to.host, to.port);
  const auto n = ::sendto(fd_, data.data(), data.size(), 0, reinterpret_cast<const sockaddr*>(&addr), sizeof addr);
  if (n < 0) throw NetError("sendto " + to.host + ":" + std::to_string(to.port) + ": " + errno_text());
}

std::optional<proto::Bytes> UdpSocket::receive(int timeout_ms, Address* from) const {
  pollfd pfd{fd_, POLLIN, 0};
  const int ready = ::poll(&pfd, 1, timeout_ms);
  if (ready <= 0) return std::nullopt;
  proto::Bytes buf(2048);
  sockaddr_in addr{};
  socklen_t len = sizeof addr;
  const auto n = ::recvfrom(fd_, buf.data(), buf.size(), 0, reinterpret_cast<sockaddr*>(&addr), &len);
  if (n < 0) return std::nullopt;
  buf.resize(static_cast<std::size_t>(n));
  if (from) {
    char text[INET_ADDRSTRLEN] = {};
    ::inet_ntop(AF_INET, &addr.sin_addr, text, sizeof text);
    from->host = text;
    from->port = ntohs(addr.sin_port);
  }
  return buf;
}

// ---------------------------------------------------------------------------

EndpointTable EndpointTable::local(int base_port, const std::string& host) {
  EndpointTable t;
  for (int m = 0; m < proto::kModules; ++m) t.modules[m] = Address{host, base_port + m};
  return t;
}

int default_base_port() {
  if (const char* env = std::getenv("GUSTWALL_BASE_PORT")) {
    try {
      const auto v = parse_int(env, 0);
      if (v > 0 && v + proto::kModules - 1 <= 65535) return static_cast<int>(v);
    } catch (const DataError&) {
    }
    throw Error(Error::Category::Usage, std::string("GUSTWALL_BASE_PORT is not a usable port: ") + env);
  }
  return 47100;
}

EndpointTable parse_endpoint_table(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("endpoints file: ") + e.what());
  }
  if (!j.is_object()) throw DataError("endpoints file must hold a JSON object");
  if (j.contains("modules")) {
    EndpointTable t;
    std::bitset<proto::kModules> seen;
    for (const auto& e : j["modules"]) {
      const int m = e.at("module").get<int>();
      if (m < 0 || m >= proto::kModules) throw DataError("endpoint module index " + std::to_string(m));
      t.modules[m] = Address{e.value("host", std::string("127.0.0.1")), e.at("port").get<int>()};
      seen.set(static_cast<std::size_t>(m));
    }
    if (!seen.all()) throw DataError("endpoints file must list all 15 modules");
    return t;
  }
  const int base = j.value("base_port", default_base_port());
  return EndpointTable::local(base, j.value("host", std::string("127.0.0.1")));
}

EndpointTable load_endpoint_table(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw Error(Error::Category::Usage, "endpoints file not found: " + path.string());
  }
  return parse_endpoint_table(read_file(path));
}

std::string endpoint_table_json(const EndpointTable& table) {
  json mods = json::array();
  for (int m = 0; m < proto::kModules; ++m) {
    mods.push_back({{"module", m}, {"host", table.modules[m].host}, {"port", table.modules[m].port}});
  }
  return json{{"modules", mods}}.dump(2);
}

// ---------------------------------------------------------------------------

UdpLink::UdpLink(EndpointTable table, ctl::TelemetryStore& store)
    : table_(std::move(table)),
      store_(store),
      socket_("0.0.0.0", 0),
      origin_ns_(Clock::now().time_since_epoch().count()) {
  receiver_ = std::thread([this] { receive_loop(); });
}

UdpLink::~UdpLink() {
  running_ = false;
  if (receiver_.joinable()) receiver_.join();
}

std::int64_t UdpLink::now_us() const {
  const auto now = Clock::now().time_since_epoch().count();
  return std::chrono::duration_cast<std::chrono::microseconds>(Clock::duration(now - origin_ns_.load())).count();
}

void UdpLink::send(int module_index, const proto::Bytes& datagram) {
  try {
    socket_.send_to(table_.modules.at(module_index), datagram);
  } catch (const NetError&) {
    // A dead endpoint must not stop the others from being commanded.
    ++send_errors_;
  }
}

void UdpLink::receive_loop() {
  while (running_) {
    if (auto d = socket_.receive(20)) store_.ingest(*d, now_us());
  }
}

std::bitset<proto::kModules> ping_all(UdpLink& link, ctl::TelemetryStore& store,
                                      std::chrono::milliseconds timeout) {
  store.clear_pongs();
  const auto deadline = Clock::now() + timeout;
  std::uint32_t seq = 0;
  for (;;) {
    const auto ponged = store.snapshot().ponged;
    if (ponged.all()) return {};
    if (Clock::now() >= deadline) return ~ponged;
    for (int m = 0; m < proto::kModules; ++m) {
      if (ponged.test(static_cast<std::size_t>(m))) continue;
      link.send(m, proto::encode_frame(proto::make_ping(static_cast<std::uint8_t>(m), seq, 0)));
    }
    ++seq;
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
}

namespace {

std::string module_list(const std::bitset<proto::kModules>& modules) {
  std::string out;
  for (int m = 0; m < proto::kModules; ++m) {
    if (!modules.test(static_cast<std::size_t>(m))) continue;
    if (!out.empty()) out += ", ";
    out += std::to_string(m);
  }
  return out;
}

}  // namespace

ctl::SessionResult run_session_udp(const ctl::Schedule& schedule, const calib::Calibration& calib,
                                   const EndpointTable& endpoints, const UdpRunOptions& options,
                                   const std::atomic<bool>* abort,
                                   const std::function<void(const ctl::TelemetryRecord&)>& on_tick) {
  ctl::TelemetryStore store;
  UdpLink link(endpoints, store);

  const auto silent = ping_all(link, store, options.ping_timeout);
  if (silent.any()) {
    std::array<std::uint32_t, proto::kModules> seq{};
    ctl::zero_wall(link, seq, 0);
    throw ctl::ControlError(ctl::ErrorCode::EndpointUnreachable,
                            "no PONG from module(s) " + module_list(silent));
  }

  const auto t0 = Clock::now();
  link.set_origin(t0);
  ctl::Session session(schedule, calib, options.session, link);
  auto status = ctl::SessionStatus::Completed;
  std::string message;
  const auto stale_after = std::llround(3e6 / options.session.telemetry_rate_hz);
  std::bitset<proto::kModules> lost;

  while (!session.done_ticking()) {
    const auto due = t0 + std::chrono::microseconds(session.tick_time_us(session.next_tick()));
    std::this_thread::sleep_until(due);
    if (abort && abort->load()) {
      status = ctl::SessionStatus::Aborted;
      message = "aborted by operator";
      break;
    }
    const auto snapshot = store.snapshot();
    const auto& rec = session.step(snapshot, link.now_us());
    if (on_tick) on_tick(rec);
    if (session.next_tick() > 1) {
      // Modules that reported once and then fell quiet.
      for (int m = 0; m < proto::kModules; ++m) {
        const auto& mod = snapshot.modules[m];
        if (mod.last_rx_us && link.now_us() - *mod.last_rx_us > stale_after) lost.set(static_cast<std::size_t>(m));
      }
    }
  }
  if (status == ctl::SessionStatus::Completed) {
    std::this_thread::sleep_until(t0 + std::chrono::microseconds(session.tick_time_us(session.next_tick())));
  }
  const auto snapshot = store.snapshot();
  const auto stale = snapshot.stale(link.now_us(), stale_after);
  lost |= stale;
  if (status == ctl::SessionStatus::Completed && lost.any()) {
    status = ctl::SessionStatus::Degraded;
    message = "module(s) went silent: " + module_list(lost);
  }
  session.stop(status, snapshot, link.now_us(), message);
  auto result = session.take_result();
  result.silent_modules = lost;
  // Give the receiver a moment for late datagrams before the link closes.
  std::this_thread::sleep_for(std::chrono::milliseconds(20));
  return result;
}

// ---------------------------------------------------------------------------

EndpointServer::EndpointServer(const emu::EmulatorConfig& config, const calib::Calibration& calib,
                               std::vector<int> modules)
    : modules_(std::move(modules)) {
  if (modules_.empty()) {
    for (int m = 0; m < proto::kModules; ++m) modules_.push_back(m);
  }
  for (int m : modules_) {
    if (m < 0 || m >= proto::kModules) throw Error(Error::Category::Usage, "module index " + std::to_string(m));
    slots_.push_back(std::make_unique<Slot>(Slot{
        m, UdpSocket(config.host, config.base_port + m),
        emu::ModuleEndpoint(m, config.endpoint, calib.duty_rpm, emu::module_seed(config.seed, m)), std::nullopt}));
  }
}

EndpointServer::~EndpointServer() { stop(); }

void EndpointServer::start() {
  if (running_.exchange(true)) return;
  origin_ = Clock::now();
  thread_ = std::thread([this] { serve(); });
}

void EndpointServer::stop() {
  running_ = false;
  if (thread_.joinable()) thread_.join();
}

int EndpointServer::port_of(int module_index) const {
  for (const auto& s : slots_) {
    if (s->module == module_index) return s->socket.local_port();
  }
  throw Error(Error::Category::Usage, "module " + std::to_string(module_index) + " is not served here");
}

std::vector<std::pair<int, std::array<double, proto::kFansPerModule>>> EndpointServer::duties() const {
  std::lock_guard lock(mu_);
  std::vector<std::pair<int, std::array<double, proto::kFansPerModule>>> out;
  for (const auto& s : slots_) out.emplace_back(s->module, s->endpoint.duties());
  return out;
}

void EndpointServer::serve() {
  std::vector<pollfd> fds;
  for (const auto& s : slots_) fds.push_back(pollfd{s->socket.fd(), POLLIN, 0});
  auto now_us = [this] {
    return std::chrono::duration_cast<std::chrono::microseconds>(Clock::now() - origin_).count();
  };
  auto flush = [](Slot& s, std::vector<proto::Bytes> frames) {
    if (!s.peer) return;
    for (const auto& f : frames) {
      try {
        s.socket.send_to(*s.peer, f);
      } catch (const NetError&) {
      }
    }
  };

  while (running_) {
    for (auto& p : fds) p.revents = 0;
    ::poll(fds.data(), fds.size(), 5);
    std::lock_guard lock(mu_);
    for (std::size_t i = 0; i < slots_.size(); ++i) {
      Slot& s = *slots_[i];
      if (fds[i].revents & POLLIN) {
        Address from;
        while (auto d = s.socket.receive(0, &from)) {
          s.peer = from;
          if (auto reply = s.endpoint.handle(*d, now_us())) flush(s, {std::move(*reply)});
        }
      }
      flush(s, s.endpoint.advance(now_us()));
    }
  }
}

}  // namespace gustwall::net
