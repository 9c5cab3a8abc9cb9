#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <thread>
#include <unistd.h>

#include "support.hpp"
#include "svff/qmp_server.hpp"

using namespace svff;
using qmp::Json;
using svff::testing::kPf;
using svff::testing::vf;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct QmpFixture : ::testing::Test {
  Host host;
  qmp::Dispatcher dispatcher{host.vmm()};

  void SetUp() override {
    host.bus().set_num_vfs(kPf, 3);
    host.drivers().register_vfio_id(0x10EE, 0xA03F);
    for (unsigned i = 0; i < 3; ++i) host.drivers().bind_vfio(vf(i));
    host.vmm().define_vm("vm1");
    host.vmm().start_vm("vm1");
  }

  Json run(const std::string& line) { return Json::parse(dispatcher.handle_line(line)); }

  std::string socket_path() {
    return (std::filesystem::temp_directory_path() /
            ("svff-qmp-" + std::to_string(::getpid()) + "-" +
             ::testing::UnitTest::GetInstance()->current_test_info()->name() + ".sock"))
        .string();
  }
};

}  // namespace

TEST(QmpErrors, ClassMappingIsClosedAndInvertible) {
  std::set<std::string> classes;
  for (Errc code : kAllErrc) {
    auto cls = std::string(qmp::error_class(code));
    EXPECT_TRUE(classes.insert(cls).second) << cls;
    EXPECT_EQ(qmp::errc_from_class(cls), code);
  }
  EXPECT_EQ(qmp::error_class(Errc::UnknownDevice), "DeviceNotFound");
  EXPECT_FALSE(qmp::errc_from_class("NoSuchClass"));
}

TEST_F(QmpFixture, GreetingListsCapabilities) {
  EXPECT_EQ(dispatcher.greeting(),
            R"({"QMP":{"capabilities":["device_pause","device_add","device_del","query-devices"]}})");
}

TEST_F(QmpFixture, DevicePauseRoundTrip) {
  run(R"({"execute":"device_add","arguments":{"driver":"vfio-pci","host":"0000:03:00.1","id":"hostdev0"}})");
  auto r = run(R"({"execute":"device_pause","arguments":{"id":"hostdev0","paused":true}})");
  EXPECT_EQ(r.dump(), R"({"return":{}})");
  EXPECT_EQ(host.vmm().device("vm1", "hostdev0").state, GuestDeviceState::Paused);
  r = run(R"({"execute":"device_pause","arguments":{"id":"hostdev0","paused":true}})");
  EXPECT_EQ(r["error"]["class"], "AlreadyPaused");
  r = run(R"({"execute":"device_pause","arguments":{"id":"nope","paused":true}})");
  EXPECT_EQ(r["error"]["class"], "DeviceNotFound");
  r = run(R"({"execute":"query-devices"})");
  EXPECT_EQ(r["return"][0]["status"], "paused");
  r = run(R"({"execute":"device_del","arguments":{"id":"hostdev0"}})");
  EXPECT_EQ(r["error"]["class"], "PausedDevice");
  r = run(R"({"execute":"device_pause","arguments":{"id":"hostdev0","paused":false}})");
  EXPECT_EQ(r.dump(), R"({"return":{}})");
  r = run(R"({"execute":"device_pause","arguments":{"id":"hostdev0","paused":false}})");
  EXPECT_EQ(r["error"]["class"], "NotPaused");
}

TEST_F(QmpFixture, ArgumentValidation) {
  auto cls = [&](const std::string& line) { return run(line)["error"]["class"].get<std::string>(); };
  EXPECT_EQ(cls(R"({"execute":"device_add","arguments":{"driver":"e1000","host":"0000:03:00.1","id":"x"}})"),
            "InvalidParameter");
  EXPECT_EQ(cls(R"({"execute":"device_add","arguments":{"host":"bogus","id":"x"}})"),
            "InvalidParameter");
  EXPECT_EQ(cls(R"({"execute":"device_add","arguments":{"host":"0000:03:00.1"}})"),
            "InvalidParameter");
  EXPECT_EQ(cls(R"({"execute":"device_add","arguments":{"host":"0000:03:00.0","id":"pf"}})"),
            "NotBoundToVfio");
  EXPECT_EQ(cls(R"({"execute":"device_add","arguments":{"host":"0000:03:00.1","id":"x","vm":"vm9"}})"),
            "UnknownVm");
  run(R"({"execute":"device_add","arguments":{"host":"0000:03:00.1","id":"x"}})");
  EXPECT_EQ(cls(R"({"execute":"device_pause","arguments":{"id":"x","paused":"yes"}})"),
            "InvalidParameter");
  EXPECT_EQ(cls(R"({"execute":"device_pause","arguments":{"id":"x"}})"), "InvalidParameter");
  EXPECT_EQ(cls(R"({"execute":"device_del","arguments":"x"})"), "InvalidParameter");
  EXPECT_EQ(cls(R"({"arguments":{}})"), "GenericError");
  EXPECT_EQ(cls(R"([1,2])"), "GenericError");
  EXPECT_EQ(cls(R"({"execute":"quit"})"), "CommandNotFound");
  auto r = run(R"({"execute":"quit","id":{"nested":[1]}})");
  EXPECT_EQ(r["id"], Json::parse(R"({"nested":[1]})"));
}

TEST_F(QmpFixture, SeveralVmsNeedDisambiguation) {
  host.vmm().define_vm("vm2");
  host.vmm().start_vm("vm2");
  auto r = run(R"({"execute":"device_add","arguments":{"host":"0000:03:00.1","id":"d"}})");
  EXPECT_EQ(r["error"]["class"], "InvalidParameter");
  run(R"({"execute":"device_add","arguments":{"host":"0000:03:00.1","id":"d","vm":"vm1"}})");
  run(R"({"execute":"device_add","arguments":{"host":"0000:03:00.2","id":"d","vm":"vm2"}})");
  r = run(R"({"execute":"device_pause","arguments":{"id":"d","paused":true}})");
  EXPECT_EQ(r["error"]["class"], "InvalidParameter");
  r = run(R"({"execute":"device_pause","arguments":{"id":"d","paused":true,"vm":"vm2"}})");
  EXPECT_TRUE(r.contains("return"));
  EXPECT_EQ(host.vmm().device("vm2", "d").state, GuestDeviceState::Paused);
  EXPECT_EQ(host.vmm().device("vm1", "d").state, GuestDeviceState::Realized);
  r = run(R"({"execute":"query-devices","arguments":{"vm":"vm2"}})");
  EXPECT_EQ(r["return"].size(), 1u);
}

TEST_F(QmpFixture, NotPausableDeviceClass) {
  Host h([] {
    auto p = DeviceProfile::default_profile();
    p.pausable = false;
    return p;
  }());
  h.bus().set_num_vfs(kPf, 1);
  h.drivers().register_vfio_id(0x10EE, 0xA03F);
  h.drivers().bind_vfio(vf(0));
  h.vmm().define_vm("vm");
  h.vmm().start_vm("vm");
  qmp::Dispatcher d(h.vmm());
  d.handle_line(R"({"execute":"device_add","arguments":{"host":"0000:03:00.1","id":"d"}})");
  auto r = Json::parse(d.handle_line(R"({"execute":"device_pause","arguments":{"id":"d","paused":true}})"));
  EXPECT_EQ(r["error"]["class"], "NotPausable");
}

TEST_F(QmpFixture, InProcessChannelRaisesTypedErrors) {
  qmp::InProcessChannel ch(dispatcher);
  ch.execute("device_add", Json{{"host", "0000:03:00.1"}, {"id", "a"}});
  EXPECT_ERRC(ch.execute("device_add", Json{{"host", "0000:03:00.1"}, {"id", "b"}}),
              Errc::AlreadyAttached);
  EXPECT_ERRC(ch.execute("device_del", Json{{"id", "zz"}}), Errc::UnknownDevice);
  EXPECT_EQ(ch.execute("query-devices", Json::object()).size(), 1u);
}

TEST(QmpGolden, TranscriptMatches) {
  auto in = read_file(SVFF_SOURCE_DIR "/tests/golden/qmp_transcript.in");
  auto want = read_file(SVFF_SOURCE_DIR "/tests/golden/qmp_transcript.out");
  ASSERT_FALSE(want.empty());
  EXPECT_EQ(svff::testing::run_transcript(in), want);
  EXPECT_EQ(svff::testing::run_transcript(in), svff::testing::run_transcript(in));
}

TEST_F(QmpFixture, SocketServesSequentialClients) {
  auto path = socket_path();
  qmp::UnixServer server(dispatcher, path);
  int after = 0;
  server.set_after_command([&] { ++after; });
  {
    qmp::UnixClient a(path);
    EXPECT_EQ(a.greeting().dump(), dispatcher.greeting());
    a.execute("device_add", Json{{"host", "0000:03:00.1"}, {"id", "a"}});
    auto bad = Json::parse(a.roundtrip("{oops"));
    EXPECT_EQ(bad["error"]["class"], "GenericError");
    // The connection survives a malformed line.
    EXPECT_EQ(a.execute("query-devices", Json::object()).size(), 1u);
  }
  {
    qmp::UnixClient b(path);
    b.execute("device_pause", Json{{"id", "a"}, {"paused", true}});
    EXPECT_ERRC(b.execute("device_pause", Json{{"id", "a"}, {"paused", true}}), Errc::AlreadyPaused);
  }
  server.stop();
  server.wait();
  EXPECT_GE(after, 4);
  EXPECT_EQ(host.vmm().device("vm1", "a").state, GuestDeviceState::Paused);
}

TEST_F(QmpFixture, ConcurrentClientsAreSerialized) {
  auto path = socket_path();
  qmp::UnixServer server(dispatcher, path);
  std::vector<std::thread> threads;
  std::atomic<int> ok{0}, failed{0};
  for (unsigned t = 0; t < 3; ++t) {
    threads.emplace_back([&, t] {
      qmp::UnixClient c(path);
      std::string id = "d" + std::to_string(t);
      c.execute("device_add", Json{{"host", vf(t).to_string()}, {"id", id}});
      for (int i = 0; i < 50; ++i) {
        try {
          c.execute("device_pause", Json{{"id", id}, {"paused", i % 2 == 0}});
          ++ok;
        } catch (const Error&) {
          ++failed;
        }
        auto line = c.roundtrip(R"({"execute":"query-devices","id":)" + std::to_string(i) + "}");
        auto r = Json::parse(line);
        EXPECT_EQ(r["id"], i);
      }
    });
  }
  for (auto& th : threads) th.join();
  server.stop();
  server.wait();
  EXPECT_EQ(ok, 150);
  EXPECT_EQ(failed, 0);
}

TEST(QmpServer, BindFailure) {
  Host host;
  qmp::Dispatcher d(host.vmm());
  EXPECT_ERRC(qmp::UnixServer(d, "/nonexistent-dir/x.sock"), Errc::BindFailure);
  EXPECT_ERRC(qmp::UnixClient("/nonexistent-dir/x.sock"), Errc::BindFailure);
}
