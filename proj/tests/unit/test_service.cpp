#include <chrono>
#include <thread>

#include "doctest.h"
#include "gustwall/api.hpp"
#include "gustwall/net.hpp"
#include "gustwall/service.hpp"
#include "httplib.h"
#include "json.hpp"
#include "support.hpp"

using namespace gustwall;
using nlohmann::json;

namespace {

const calib::Calibration kCal = calib::default_calibration();
constexpr const char* kSquare = R"({"kind":"square","unit":"speed","lo":1.3,"hi":3.4,"frequency":0.5,"duration":10})";

std::unique_ptr<service::ControllerService> make_service(service::SimBackend** backend = nullptr,
                                                         service::ServiceOptions o = {}) {
  auto b = std::make_unique<service::SimBackend>(emu::EmulatorConfig{}, kCal);
  if (backend) *backend = b.get();
  return std::make_unique<service::ControllerService>(kCal, std::move(b), o);
}

// Ports for the UDP tests: pick a base whose 15 ports are currently free.
int free_base_port() {
  for (int base = 48000; base < 60000; base += 50) {
    try {
      std::vector<net::UdpSocket> probe;
      for (int m = 0; m < proto::kModules; ++m) probe.emplace_back("127.0.0.1", base + m);
      return base;
    } catch (const net::NetError&) {
    }
  }
  throw std::runtime_error("no free port range");
}

}  // namespace

TEST_SUITE("service") {
  TEST_CASE("start, busy, invalid") {
    auto svc = make_service();
    const auto ok = svc->request_start(kSquare);
    CHECK(ok.http_status == 200);
    CHECK(svc->state().status == "running");
    CHECK(svc->state().profile->kind == ctl::ProfileKind::Square);
    CHECK(svc->request_start(kSquare).http_status == 409);
    auto other = make_service();
    CHECK(other->request_start("{").http_status == 400);
    CHECK(other->request_start(R"({"kind":"steady","level":9})").http_status == 400);
    CHECK_FALSE(other->busy());
  }

  TEST_CASE("runs to completion on the emulated clock") {
    service::SimBackend* backend = nullptr;
    service::ServiceOptions o;
    o.out_dir = testsupport::scratch_dir("service-runs");
    auto svc = make_service(&backend, o);
    svc->request_start(R"({"kind":"steady","unit":"duty","level":1.0,"duration":2})");
    for (std::int64_t t = 0; t <= 2'200'000; t += 10'000) svc->advance(t);
    const auto s = svc->state();
    CHECK(s.status == "completed");
    CHECK_FALSE(svc->busy());
    CHECK(std::filesystem::exists(std::filesystem::path(s.last_run_dir) / "manifest.json"));
    for (double d : backend->wall().fan_duties()) CHECK(d == 0.0);
  }

  TEST_CASE("abort zeroes every fan within one command period") {
    service::SimBackend* backend = nullptr;
    auto svc = make_service(&backend);
    svc->request_start(kSquare);
    std::int64_t t = 0;
    for (; t <= 3'000'000; t += 10'000) svc->advance(t);
    double on = 0;
    for (double d : backend->wall().fan_duties()) on += d;
    CHECK(on > 0);
    CHECK(svc->request_abort());
    svc->advance(t + 50'000);
    for (double d : backend->wall().fan_duties()) CHECK(d == 0.0);
    CHECK(svc->state().status == "aborted");
    CHECK_FALSE(svc->request_abort());
    // Free again.
    CHECK(svc->request_start(kSquare).http_status == 200);
  }

  TEST_CASE("state JSON shape") {
    auto svc = make_service();
    svc->request_start(kSquare);
    for (std::int64_t t = 0; t <= 500'000; t += 50'000) svc->advance(t);
    const auto j = json::parse(svc->state_json());
    CHECK(j["status"] == "running");
    CHECK(j["kind"] == "square");
    CHECK(j["fans"].size() == 135);
    CHECK(j["modules"].size() == 15);
    CHECK(j["fans"][0].contains("duty"));
    CHECK(j["fans"][0].contains("rpm"));
    CHECK(j.contains("phase"));
    const auto [seq, rec] = svc->latest_record();
    CHECK(seq > 0);
    REQUIRE(rec);
    const auto r = json::parse(service::record_json(*rec));
    CHECK(r["duty"].size() == 135);
  }

  TEST_CASE("periodic profile without a duration runs until the cap") {
    service::ServiceOptions o;
    o.max_duration_s = 1.0;
    auto svc = make_service(nullptr, o);
    CHECK(svc->request_start(R"({"kind":"square","unit":"duty","lo":0.5,"hi":1,"frequency":1})").http_status == 200);
    for (std::int64_t t = 0; t <= 1'200'000; t += 50'000) svc->advance(t);
    CHECK(svc->state().status == "completed");
  }
}

TEST_SUITE("api") {
  TEST_CASE("HTTP endpoints") {
    auto svc = make_service();
    std::atomic<bool> stop{false};
    std::thread sched([&] { svc->run_realtime(stop); });
    api::ApiServer server(*svc, "127.0.0.1", 0);
    server.start();
    httplib::Client cli("127.0.0.1", server.port());
    cli.set_read_timeout(5, 0);

    auto res = cli.Get("/state");
    REQUIRE(res);
    CHECK(res->status == 200);
    CHECK(json::parse(res->body)["status"] == "idle");

    res = cli.Post("/profile", kSquare, "application/json");
    REQUIRE(res);
    CHECK(res->status == 200);
    CHECK(json::parse(res->body)["kind"] == "square");

    res = cli.Post("/profile", kSquare, "application/json");
    REQUIRE(res);
    CHECK(res->status == 409);
    CHECK(json::parse(res->body).contains("error"));

    res = cli.Post("/profile", "{\"kind\":", "application/json");
    REQUIRE(res);
    CHECK(res->status == 400);

    // Server-sent telemetry, decimated to <= 10 Hz.
    int events = 0;
    const auto t0 = std::chrono::steady_clock::now();
    httplib::Client stream("127.0.0.1", server.port());
    stream.Get("/telemetry", [&](const char* data, std::size_t len) {
      const std::string chunk(data, len);
      std::size_t pos = 0;
      while ((pos = chunk.find("data: ", pos)) != std::string::npos) {
        const auto end = chunk.find("\n\n", pos);
        CHECK(json::parse(chunk.substr(pos + 6, end - pos - 6))["duty"].size() == 135);
        ++events;
        pos = end;
      }
      return std::chrono::steady_clock::now() - t0 < std::chrono::milliseconds(1200);
    });
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    CHECK(events >= 3);
    CHECK(events <= 10 * elapsed + 1);

    res = cli.Post("/abort", "", "application/json");
    REQUIRE(res);
    CHECK(json::parse(res->body)["aborted"] == true);
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
    const auto state = json::parse(cli.Get("/state")->body);
    CHECK(state["status"] == "aborted");
    for (const auto& f : state["fans"]) CHECK(f["duty"] == 0.0);

    server.stop();
    stop = true;
    sched.join();
  }

  TEST_CASE("concurrent readers") {
    auto svc = make_service();
    std::atomic<bool> stop{false};
    std::thread sched([&] { svc->run_realtime(stop); });
    api::ApiServer server(*svc, "127.0.0.1", 0);
    server.start();
    svc->request_start(kSquare);
    std::vector<std::thread> readers;
    std::atomic<int> ok{0};
    for (int i = 0; i < 4; ++i) {
      readers.emplace_back([&] {
        httplib::Client c("127.0.0.1", server.port());
        for (int k = 0; k < 20; ++k) {
          auto r = c.Get("/state");
          if (r && r->status == 200 && json::parse(r->body)["fans"].size() == 135) ++ok;
        }
      });
    }
    for (auto& t : readers) t.join();
    CHECK(ok == 80);
    server.stop();
    stop = true;
    sched.join();
  }
}

TEST_SUITE("net") {
  TEST_CASE("endpoint tables") {
    const auto t = net::parse_endpoint_table(R"({"host":"10.0.0.2","base_port":5000})");
    CHECK(t.modules[14].port == 5014);
    CHECK(t.modules[3].host == "10.0.0.2");
    const auto back = net::parse_endpoint_table(net::endpoint_table_json(t));
    CHECK(back.modules[14].port == 5014);
    CHECK_THROWS(net::parse_endpoint_table(R"({"modules":[{"module":0,"host":"a","port":1}]})"));
  }

  TEST_CASE("base port from the environment") {
    ::setenv("GUSTWALL_BASE_PORT", "51000", 1);
    CHECK(net::default_base_port() == 51000);
    ::unsetenv("GUSTWALL_BASE_PORT");
    CHECK(net::default_base_port() == 47100);
  }

  TEST_CASE("loopback datagrams and bind conflicts") {
    net::UdpSocket a("127.0.0.1", 0), b("127.0.0.1", 0);
    const proto::Bytes msg{1, 2, 3};
    a.send_to({"127.0.0.1", b.local_port()}, msg);
    net::Address from;
    const auto got = b.receive(1000, &from);
    REQUIRE(got);
    CHECK(*got == msg);
    CHECK(from.port == a.local_port());
    CHECK_FALSE(b.receive(10));
    CHECK_THROWS_AS(net::UdpSocket("127.0.0.1", a.local_port()), net::NetError);
  }

  TEST_CASE("UDP session against the endpoint server") {
    emu::EmulatorConfig cfg;
    cfg.base_port = free_base_port();
    net::EndpointServer server(cfg, kCal, {});
    server.start();
    ctl::GustProfile p;
    p.kind = ctl::ProfileKind::Square;
    p.unit = ctl::Unit::Duty;
    p.lo = 0.5;
    p.hi = 1.0;
    p.frequency_hz = 1.0;
    p.duration_s = 1.5;
    net::UdpRunOptions o;
    const auto r = net::run_session_udp(ctl::compile_profile(p, kCal), kCal,
                                        net::EndpointTable::local(cfg.base_port), o);
    CHECK(r.status == ctl::SessionStatus::Completed);
    CHECK(r.records.size() == 31);
    CHECK(r.events.size() == 4);
    CHECK(r.records[25].measured_rpm[0] > 1000);
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    for (const auto& [m, d] : server.duties()) {
      for (double v : d) CHECK(v == 0.0);
    }
  }

  TEST_CASE("silent endpoint is named and the rest are zeroed") {
    emu::EmulatorConfig cfg;
    cfg.base_port = free_base_port();
    std::vector<int> all_but_7;
    for (int m = 0; m < 15; ++m) {
      if (m != 7) all_but_7.push_back(m);
    }
    net::EndpointServer server(cfg, kCal, all_but_7);
    server.start();
    ctl::GustProfile p;
    p.kind = ctl::ProfileKind::Steady;
    p.unit = ctl::Unit::Duty;
    p.lo = p.hi = 0.5;
    p.duration_s = 1;
    net::UdpRunOptions o;
    o.ping_timeout = std::chrono::milliseconds(300);
    try {
      net::run_session_udp(ctl::compile_profile(p, kCal), kCal, net::EndpointTable::local(cfg.base_port), o);
      FAIL("expected EndpointUnreachable");
    } catch (const ctl::ControlError& e) {
      CHECK(e.code() == ctl::ErrorCode::EndpointUnreachable);
      CHECK(e.category() == Error::Category::Network);
      CHECK(std::string(e.what()).find("7") != std::string::npos);
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    for (const auto& [m, d] : server.duties()) {
      for (double v : d) CHECK(v == 0.0);
    }
  }
}
