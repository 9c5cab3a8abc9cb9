#include <gtest/gtest.h>

#include <random>

#include "support.hpp"
#include "svff/state.hpp"

using namespace svff;
using svff::testing::kPf;
using svff::testing::vf;

namespace {

struct VmmFixture : ::testing::Test {
  Host host;
  Vmm& vmm = host.vmm();

  void SetUp() override {
    host.bus().set_num_vfs(kPf, 4);
    auto dm = host.drivers();
    dm.register_vfio_id(0x10EE, 0xA03F);
    for (unsigned i = 0; i < 4; ++i) dm.bind_vfio(vf(i));
    for (const char* n : {"vm1", "vm2"}) {
      vmm.define_vm(n);
      vmm.start_vm(n);
    }
  }

  GuestStatus status(const std::string& vm, const std::string& id) {
    for (const auto& e : vmm.guest_view(vm))
      if (e.guest_id == id) return e.status;
    ADD_FAILURE() << id << " not in guest view";
    return GuestStatus::Attached;
  }
};

}  // namespace

TEST_F(VmmFixture, VmLifecycle) {
  vmm.define_vm("vm3");
  EXPECT_FALSE(vmm.vm("vm3").live);
  vmm.start_vm("vm3");
  EXPECT_TRUE(vmm.vm("vm3").live);
  EXPECT_TRUE(vmm.vm("vm3").devices.empty());
  EXPECT_ERRC(vmm.define_vm("vm3"), Errc::DuplicateName);
  EXPECT_ERRC(vmm.start_vm("nope"), Errc::UnknownVm);
  EXPECT_ERRC(vmm.stop_vm("nope"), Errc::UnknownVm);
}

TEST_F(VmmFixture, StopExitsRealizedAndDropsPaused) {
  vmm.realize("vm1", vf(0), "a");
  vmm.realize("vm1", vf(1), "b");
  vmm.pause("vm1", "b");
  vmm.stop_vm("vm1");
  EXPECT_TRUE(vmm.vm("vm1").devices.empty());
  EXPECT_FALSE(vmm.vm("vm1").live);
  EXPECT_FALSE(host.bus().present_node(vf(0)).vfio_open);
  EXPECT_EQ(host.bus().present_node(vf(0)).bound_driver, Driver::Vfio);
  EXPECT_FALSE(vmm.is_attached(vf(1)));
}

TEST_F(VmmFixture, RealizeAndExclusivity) {
  const auto& dev = vmm.realize("vm1", vf(0), "hostdev0");
  EXPECT_EQ(dev.state, GuestDeviceState::Realized);
  EXPECT_TRUE(dev.iommu_member);
  EXPECT_EQ(dev.emulated_config.size(), 64u);
  EXPECT_EQ(status("vm1", "hostdev0"), GuestStatus::Attached);
  EXPECT_EQ(vmm.guest_view("vm1")[0].vendor_id, 0x10EE);
  EXPECT_EQ(vmm.guest_view("vm1")[0].device_id, 0xA03F);
  EXPECT_ERRC(vmm.realize("vm2", vf(0), "hostdev0"), Errc::AlreadyAttached);
  EXPECT_ERRC(vmm.realize("vm1", vf(1), "hostdev0"), Errc::DuplicateDeviceId);
  EXPECT_ERRC(vmm.realize("vm1", kPf, "pf"), Errc::NotBoundToVfio);
  EXPECT_ERRC(vmm.realize("ghost", vf(1), "x"), Errc::UnknownVm);
  vmm.define_vm("cold");
  EXPECT_ERRC(vmm.realize("cold", vf(1), "x"), Errc::VmNotLive);
}

TEST_F(VmmFixture, RealizeProgramsBarsInsideGuestWindow) {
  vmm.realize("vm1", vf(2), "d");
  auto w = guest_window(host.bus(), vf(2));
  const auto& c = host.bus().present_node(vf(2)).config;
  EXPECT_EQ(c.read32(cfg::bar_offset(0)), w.base);
  EXPECT_EQ(c.read32(cfg::bar_offset(1)), w.base + 524288);
  EXPECT_EQ(c.read16(cfg::kCommand) & 0x6, 0x6);
  const auto& map = vmm.device("vm1", "d").region_map;
  ASSERT_EQ(map.size(), 2u);
  EXPECT_EQ(map[0], (RegionMapping{"bram-fast", w.base, 524288}));
  EXPECT_EQ(map[1], (RegionMapping{"bram-slow", w.base + 524288, 32768}));
}

TEST_F(VmmFixture, ExitDevice) {
  vmm.realize("vm1", vf(0), "hostdev0");
  vmm.exit_device("vm1", "hostdev0");
  EXPECT_TRUE(vmm.guest_view("vm1").empty());
  EXPECT_EQ(host.bus().present_node(vf(0)).bound_driver, Driver::Vfio);
  EXPECT_TRUE(vmm.iommu_members().empty());
  EXPECT_ERRC(vmm.exit_device("vm1", "hostdev0"), Errc::UnknownDevice);
  vmm.realize("vm1", vf(0), "hostdev0");
  vmm.pause("vm1", "hostdev0");
  EXPECT_ERRC(vmm.exit_device("vm1", "hostdev0"), Errc::PausedDevice);
}

TEST_F(VmmFixture, PauseKeepsDeviceVisibleButIsolated) {
  vmm.realize("vm1", vf(0), "hostdev0");
  vmm.pause("vm1", "hostdev0");
  const auto& dev = vmm.device("vm1", "hostdev0");
  EXPECT_EQ(dev.state, GuestDeviceState::Paused);
  EXPECT_TRUE(dev.snapshot.has_value());
  EXPECT_FALSE(dev.iommu_member);
  EXPECT_FALSE(dev.notifiers_registered);
  EXPECT_EQ(status("vm1", "hostdev0"), GuestStatus::Paused);
  EXPECT_FALSE(vmm.iommu_members().contains(vf(0)));
  EXPECT_FALSE(vmm.active_mappings().contains(vf(0)));
  EXPECT_FALSE(host.bus().present_node(vf(0)).vfio_open);
  EXPECT_ERRC(vmm.pause("vm1", "hostdev0"), Errc::AlreadyPaused);
  EXPECT_ERRC(vmm.pause("vm1", "nope"), Errc::UnknownDevice);
}

TEST_F(VmmFixture, PausedDeviceIgnoresIoButShowsEmulatedRegisters) {
  vmm.realize("vm1", vf(0), "hostdev0");
  std::vector<std::uint8_t> data = {1, 2, 3, 4};
  EXPECT_FALSE(vmm.guest_io("vm1", "hostdev0", "bram-fast", IoOp::Write, 0, data).ignored);
  EXPECT_EQ(vmm.guest_io("vm1", "hostdev0", "bram-fast", IoOp::Read, 0, {}, 4).data, data);
  vmm.pause("vm1", "hostdev0");
  auto calls = host.bus().io_calls(vf(0));
  EXPECT_TRUE(vmm.guest_io("vm1", "hostdev0", "bram-fast", IoOp::Read, 0, {}, 4).ignored);
  EXPECT_TRUE(vmm.guest_io("vm1", "hostdev0", "bram-slow", IoOp::Write, 0, data).ignored);
  EXPECT_TRUE(vmm.guest_config_write("vm1", "hostdev0", 0x40, data).ignored);
  EXPECT_TRUE(vmm.guest_config_read("vm1", "hostdev0", 0x100, 4).ignored);
  auto ids = vmm.guest_config_read("vm1", "hostdev0", 0, 4);
  EXPECT_FALSE(ids.ignored);
  EXPECT_EQ(ids.data, (std::vector<std::uint8_t>{0xEE, 0x10, 0x3F, 0xA0}));
  EXPECT_EQ(host.bus().io_calls(vf(0)), calls);
  EXPECT_EQ(vmm.device("vm1", "hostdev0").ignored_requests, 4u);
}

TEST_F(VmmFixture, PauseAndUnpauseRunObservablePhasesInOrder) {
  vmm.realize("vm1", vf(0), "hostdev0");
  MsiState msi{true, 1, {{0xFEE00000, 0x41, false}}};
  vmm.guest_set_msi("vm1", "hostdev0", msi);
  std::vector<TransitionPhase> seen;
  vmm.set_phase_observer([&](TransitionPhase p, const GuestDevice& d) {
    seen.push_back(p);
    switch (p) {
      case TransitionPhase::SnapshotCaptured:
        EXPECT_TRUE(d.snapshot.has_value());
        EXPECT_FALSE(d.region_map.empty());
        EXPECT_TRUE(d.iommu_member);
        break;
      case TransitionPhase::PciUnregistered:
        EXPECT_TRUE(d.region_map.empty());
        EXPECT_EQ(host.bus().present_node(vf(0)).config.read16(cfg::kMsiControl) & cfg::kMsiEnable,
                  0);
        EXPECT_TRUE(d.notifiers_registered);
        break;
      case TransitionPhase::VfioUnregistered:
        EXPECT_FALSE(d.notifiers_registered);
        EXPECT_FALSE(d.iommu_member);
        EXPECT_FALSE(d.msi.enabled);
        break;
      case TransitionPhase::IoReconnected:
        EXPECT_TRUE(d.iommu_member);
        EXPECT_TRUE(d.notifiers_registered);
        EXPECT_EQ(d.emulated_config, d.snapshot->emulated_copy);
        // Config not yet restored.
        EXPECT_EQ(host.bus().present_node(vf(0)).config.read16(cfg::kMsiControl) & cfg::kMsiEnable,
                  0);
        break;
      case TransitionPhase::ConfigRestored:
        EXPECT_EQ(host.bus().present_node(vf(0)).config.read16(cfg::kMsiControl) & cfg::kMsiEnable,
                  cfg::kMsiEnable);
        EXPECT_FALSE(d.snapshot.has_value());
        break;
    }
  });
  vmm.pause("vm1", "hostdev0");
  vmm.unpause("vm1", "hostdev0");
  EXPECT_EQ(seen, (std::vector<TransitionPhase>{
                      TransitionPhase::SnapshotCaptured, TransitionPhase::PciUnregistered,
                      TransitionPhase::VfioUnregistered, TransitionPhase::IoReconnected,
                      TransitionPhase::ConfigRestored}));
  EXPECT_EQ(vmm.device("vm1", "hostdev0").msi, msi);
}

TEST_F(VmmFixture, UnpauseErrors) {
  vmm.realize("vm1", vf(0), "hostdev0");
  EXPECT_ERRC(vmm.unpause("vm1", "hostdev0"), Errc::NotPaused);
  vmm.pause("vm1", "hostdev0");
  host.drivers().unbind(vf(0));
  EXPECT_ERRC(vmm.unpause("vm1", "hostdev0"), Errc::NotBoundToVfio);
  host.bus().set_num_vfs(kPf, 0);
  EXPECT_ERRC(vmm.unpause("vm1", "hostdev0"), Errc::HostDeviceGone);
  EXPECT_EQ(vmm.device("vm1", "hostdev0").state, GuestDeviceState::Paused);
}

TEST_F(VmmFixture, UnpauseAfterVfRecreationRestoresConfig) {
  vmm.realize("vm1", vf(1), "d");
  std::mt19937_64 rng(5);
  svff::testing::scramble_device(vmm, "vm1", "d", rng);
  ConfigSpace before = host.bus().present_node(vf(1)).config;
  auto map = vmm.device("vm1", "d").region_map;
  vmm.pause("vm1", "d");
  host.drivers().unbind(vf(1));
  host.bus().set_num_vfs(kPf, 0);
  host.bus().set_num_vfs(kPf, 4);
  EXPECT_NE(host.bus().present_node(vf(1)).config, before);
  host.drivers().bind_vfio(vf(1));
  vmm.unpause("vm1", "d");
  EXPECT_EQ(host.bus().present_node(vf(1)).config, before);
  EXPECT_EQ(vmm.device("vm1", "d").region_map, map);
}

TEST_F(VmmFixture, PausedPropertyIsIdempotent) {
  vmm.realize("vm1", vf(0), "hostdev0");
  EXPECT_FALSE(vmm.set_paused_property("vm1", "hostdev0", false));
  EXPECT_TRUE(vmm.set_paused_property("vm1", "hostdev0", true));
  Host before = host;
  EXPECT_FALSE(vmm.set_paused_property("vm1", "hostdev0", true));
  EXPECT_EQ(host, before);
  EXPECT_TRUE(vmm.set_paused_property("vm1", "hostdev0", false));
}

TEST_F(VmmFixture, PauseLeavesOtherDevicesAlone) {
  vmm.realize("vm1", vf(0), "a");
  vmm.realize("vm2", vf(1), "b");
  vmm.realize("vm2", vf(2), "c");
  auto others = [&] {
    return std::make_tuple(vmm.vm("vm2"), host.bus().present_node(vf(1)),
                           host.bus().present_node(vf(2)));
  };
  auto before = others();
  vmm.pause("vm1", "a");
  EXPECT_EQ(others(), before);
  vmm.unpause("vm1", "a");
  EXPECT_EQ(others(), before);
}

TEST_F(VmmFixture, NotPausableProfile) {
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
  h.vmm().realize("vm", vf(0), "d");
  EXPECT_FALSE(h.vmm().is_pausable("vm", "d"));
  EXPECT_ERRC(h.vmm().pause("vm", "d"), Errc::NotPausable);
}

TEST_F(VmmFixture, MsiValidation) {
  vmm.realize("vm1", vf(0), "d");
  MsiState bad{true, 2, {{1, 2, false}}};
  EXPECT_ERRC(vmm.guest_set_msi("vm1", "d", bad), Errc::InvalidArgument);
  MsiState big;
  big.vector_count = 33;
  big.vectors.resize(33);
  EXPECT_ERRC(vmm.guest_set_msi("vm1", "d", big), Errc::InvalidArgument);
}

TEST(GuestWindow, PacksLargestFirstAndFitsFourGiB) {
  Bus bus(DeviceProfile::default_profile());
  auto w = guest_window(bus, kPf);
  EXPECT_EQ(w.base, 0x80000000u);
  EXPECT_EQ(w.region_offsets, (std::vector<std::uint64_t>{0, 524288}));
  auto w1 = guest_window(bus, vf(0));
  EXPECT_EQ(w1.base, 0x80000000u + 1048576u);
  auto p = DeviceProfile::default_profile();
  p.memory_regions = {{"big", 1u << 30, LatencyClass::Fast}};
  Bus big(p);
  EXPECT_NO_THROW(guest_window(big, kPf));
  EXPECT_ERRC(guest_window(big, vf(1)), Errc::OutOfRange);
}

// Randomized realized states survive pause/unpause byte-exactly.
TEST(VmmProperty, SnapshotRoundTrip) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    Host host;
    host.bus().set_num_vfs(kPf, 2);
    host.drivers().register_vfio_id(0x10EE, 0xA03F);
    host.drivers().bind_vfio(vf(0));
    host.vmm().define_vm("vm");
    host.vmm().start_vm("vm");
    host.vmm().realize("vm", vf(0), "d");
    svff::testing::scramble_device(host.vmm(), "vm", "d", rng);
    GuestDevice before = host.vmm().device("vm", "d");
    ConfigSpace config = host.bus().present_node(vf(0)).config;
    host.vmm().pause("vm", "d");
    host.vmm().unpause("vm", "d");
    const GuestDevice& after = host.vmm().device("vm", "d");
    ASSERT_EQ(host.bus().present_node(vf(0)).config, config);
    ASSERT_EQ(after.emulated_config, before.emulated_config);
    ASSERT_EQ(after.msi, before.msi);
    ASSERT_EQ(after.region_map, before.region_map);
    ASSERT_EQ(after, before);
  }
}
