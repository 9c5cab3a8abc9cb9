#include <gtest/gtest.h>

#include <random>

#include "support.hpp"
#include "svff/state.hpp"

using namespace svff;
using svff::testing::kPf;
using svff::testing::vf;

namespace {

struct DriverFixture : ::testing::Test {
  Host host;
  DriverManager dm = host.drivers();

  void SetUp() override { host.bus().set_num_vfs(kPf, 4); }
  void allow_vfio() {
    const auto& p = host.bus().profile();
    dm.register_vfio_id(p.vendor_id, p.vf_device_id);
  }
};

}  // namespace

TEST_F(DriverFixture, UnbindClearsDriver) {
  allow_vfio();
  dm.bind_vfio(vf(0));
  dm.unbind(vf(0));
  EXPECT_EQ(host.bus().present_node(vf(0)).bound_driver, Driver::None);
  EXPECT_ERRC(dm.unbind(vf(0)), Errc::NotBound);
  EXPECT_ERRC(dm.unbind(vf(9)), Errc::NotPresent);
}

TEST_F(DriverFixture, UnboundPfLosesVfControl) {
  host.bus().set_num_vfs(kPf, 0);
  dm.unbind(kPf);
  EXPECT_ERRC(host.bus().set_num_vfs(kPf, 2), Errc::NotBound);
  dm.bind_pf_driver(kPf);
  EXPECT_NO_THROW(host.bus().set_num_vfs(kPf, 2));
}

TEST_F(DriverFixture, VfioBindNeedsRegisteredId) {
  EXPECT_ERRC(dm.bind_vfio(vf(0)), Errc::IdNotRegistered);
  allow_vfio();
  dm.bind_vfio(vf(0));
  EXPECT_EQ(host.bus().present_node(vf(0)).bound_driver, Driver::Vfio);
  EXPECT_ERRC(dm.bind_vfio(vf(0)), Errc::AlreadyBound);
  EXPECT_ERRC(dm.bind_vfio(kPf), Errc::AlreadyBound);
}

TEST_F(DriverFixture, PfDriverIsHostOnlyForPfs) {
  EXPECT_ERRC(dm.bind_pf_driver(vf(0)), Errc::NotAPf);
  EXPECT_ERRC(dm.bind_pf_driver(kPf), Errc::AlreadyBound);
}

TEST_F(DriverFixture, BindUnbindAreInverse) {
  allow_vfio();
  for (unsigned i = 0; i < 4; ++i) {
    Bus before = host.bus();
    dm.bind_vfio(vf(i));
    dm.unbind(vf(i));
    EXPECT_EQ(host.bus(), before);
  }
}

TEST_F(DriverFixture, RemovePfCascades) {
  auto removed = dm.remove_device(kPf);
  EXPECT_EQ(removed.size(), 5u);
  EXPECT_EQ(removed.back(), kPf);
  for (const auto& [a, n] : host.bus().nodes()) {
    EXPECT_FALSE(n.present_on_bus) << a.to_string();
    EXPECT_EQ(n.bound_driver, Driver::None);
  }
  EXPECT_ERRC(dm.remove_device(kPf), Errc::Detached);
}

TEST_F(DriverFixture, RemoveVfTakesOnlyThatVf) {
  dm.remove_device(vf(2));
  EXPECT_FALSE(host.bus().is_present(vf(2)));
  EXPECT_EQ(host.bus().present_node(kPf).num_vfs, 3u);
  EXPECT_EQ(dm.find_related_vfs(kPf), (std::vector<PciAddress>{vf(0), vf(1), vf(3)}));
}

TEST_F(DriverFixture, RemoveAttachedPfIsInUse) {
  allow_vfio();
  dm.bind_vfio(vf(1));
  host.vmm().define_vm("vm1");
  host.vmm().start_vm("vm1");
  host.vmm().realize("vm1", vf(1), "hostdev0");
  Bus before = host.bus();
  EXPECT_ERRC(dm.remove_device(kPf), Errc::InUse);
  EXPECT_ERRC(dm.remove_device(vf(1)), Errc::InUse);
  EXPECT_ERRC(dm.unbind(vf(1)), Errc::InUse);
  EXPECT_EQ(host.bus(), before);
  // Paused devices are still attached.
  host.vmm().pause("vm1", "hostdev0");
  EXPECT_ERRC(dm.remove_device(vf(1)), Errc::InUse);
}

TEST_F(DriverFixture, RescanRestoresPfsOnly) {
  EXPECT_TRUE(dm.rescan_bus().empty());
  dm.remove_device(kPf);
  EXPECT_EQ(dm.rescan_bus(), std::vector<PciAddress>{kPf});
  EXPECT_TRUE(dm.rescan_bus().empty());
  const auto& pf = host.bus().present_node(kPf);
  EXPECT_EQ(pf.bound_driver, Driver::QdmaPf);
  EXPECT_EQ(pf.num_vfs, 0u);
  EXPECT_TRUE(dm.find_related_vfs(kPf).empty());
  for (unsigned i = 0; i < 4; ++i) EXPECT_FALSE(host.bus().is_present(vf(i)));
}

TEST_F(DriverFixture, FindRelatedVfs) {
  EXPECT_EQ(dm.find_related_vfs(kPf), (std::vector<PciAddress>{vf(0), vf(1), vf(2), vf(3)}));
  host.bus().set_num_vfs(kPf, 0);
  EXPECT_TRUE(dm.find_related_vfs(kPf).empty());
  EXPECT_ERRC(dm.find_related_vfs(vf(0)), Errc::NotAPf);
}

TEST_F(DriverFixture, ValidateChecksPresenceIdsAndDriver) {
  allow_vfio();
  dm.bind_vfio(vf(0));
  EXPECT_NO_THROW(dm.validate(vf(0), Driver::Vfio));
  EXPECT_ERRC(dm.validate(vf(0), Driver::QdmaPf), Errc::DriverMismatch);
  EXPECT_ERRC(dm.validate(vf(7), Driver::Vfio), Errc::NotPresent);
  EXPECT_NO_THROW(dm.validate(kPf, Driver::QdmaPf));

  Host other = host;
  ConfigSpace c = other.bus().present_node(vf(1)).config;
  c.write16(cfg::kDeviceId, 0x1234);
  other.bus().restore_config(vf(1), c);
  Bus before = other.bus();
  EXPECT_ERRC(other.drivers().validate(vf(1), Driver::None), Errc::IdMismatch);
  EXPECT_EQ(other.bus(), before);
}

// Random driver operations never leave a VF whose PF is gone.
TEST(DriverProperty, NoDanglingVfs) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    Host host;
    MemoryRecordStore none;
    auto dm = host.drivers();
    dm.register_vfio_id(0x10EE, 0xA03F);
    for (int step = 0; step < 30; ++step) {
      PciAddress target = rng() % 3 == 0 ? kPf : vf(rng() % 5);
      try {
        switch (rng() % 6) {
          case 0: host.bus().set_num_vfs(kPf, rng() % 5); break;
          case 1: dm.remove_device(target); break;
          case 2: dm.rescan_bus(); break;
          case 3: dm.bind_vfio(target); break;
          case 4: dm.unbind(target); break;
          case 5: dm.bind_pf_driver(target); break;
        }
      } catch (const Error&) {
      }
      auto v = check_invariants(host, none);
      ASSERT_TRUE(v.empty()) << v.front();
    }
  }
}
