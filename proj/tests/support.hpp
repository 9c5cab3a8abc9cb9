#pragma once

#include <random>
#include <sstream>
#include <string>

#include "svff/error.hpp"
#include "svff/host.hpp"
#include "svff/orchestrator.hpp"
#include "svff/qmp.hpp"
#include "svff/qmp_server.hpp"
#include "svff/records.hpp"

namespace svff::testing {

inline std::string fixed_clock() { return "2024-01-01T00:00:00Z"; }

// A host wired to an in-process QMP dispatcher and an orchestrator.
struct Rig {
  explicit Rig(DeviceProfile profile = DeviceProfile::default_profile())
      : host(std::move(profile)) {}

  Host host;
  MemoryRecordStore records;
  qmp::Dispatcher dispatcher{host.vmm()};
  qmp::InProcessChannel channel{dispatcher};
  Orchestrator orch{host, records, channel, fixed_clock};

  Bus& bus() { return host.bus(); }
  Vmm& vmm() { return host.vmm(); }

  void live_vms(std::initializer_list<const char*> names) {
    for (const char* n : names) {
      vmm().define_vm(n);
      vmm().start_vm(n);
    }
  }
};

inline const PciAddress kPf{0, 3, 0, 0};

// Drives a realized device into a random guest-reachable state: config
// writes (BARs included), MSI programming and region I/O.
inline void scramble_device(Vmm& vmm, const std::string& vm, const std::string& id,
                            std::mt19937_64& rng) {
  auto pick = [&rng](std::uint64_t lo, std::uint64_t hi) {
    return std::uniform_int_distribution<std::uint64_t>(lo, hi)(rng);
  };
  int writes = static_cast<int>(pick(1, 12));
  for (int i = 0; i < writes; ++i) {
    std::size_t len = pick(1, 8);
    std::size_t offset = pick(4, kConfigSpaceSize - len);
    std::vector<std::uint8_t> data(len);
    for (auto& b : data) b = static_cast<std::uint8_t>(rng());
    vmm.guest_config_write(vm, id, offset, data);
  }
  if (pick(0, 1)) {
    std::uint32_t bar = static_cast<std::uint32_t>(rng());
    std::uint8_t raw[4] = {static_cast<std::uint8_t>(bar), static_cast<std::uint8_t>(bar >> 8),
                           static_cast<std::uint8_t>(bar >> 16),
                           static_cast<std::uint8_t>(bar >> 24)};
    vmm.guest_config_write(vm, id, cfg::bar_offset(pick(0, 5)), raw);
  }
  MsiState msi;
  msi.enabled = pick(0, 1);
  msi.vector_count = static_cast<unsigned>(pick(0, kMaxMsiVectors));
  for (unsigned v = 0; v < msi.vector_count; ++v)
    msi.vectors.push_back({rng(), static_cast<std::uint32_t>(rng()), pick(0, 1) == 1});
  vmm.guest_set_msi(vm, id, msi);
  std::vector<std::uint8_t> data(pick(1, 16), static_cast<std::uint8_t>(rng()));
  vmm.guest_io(vm, id, "bram-fast", IoOp::Write, pick(0, 524288 - data.size()), data);
}

// The protocol transcript fixture: one live VM "vm1" and two vfio-bound VFs.
inline std::string run_transcript(const std::string& requests) {
  Host host;
  host.bus().set_num_vfs(PciAddress{0, 3, 0, 0}, 2);
  host.drivers().register_vfio_id(0x10EE, 0xA03F);
  host.drivers().bind_vfio(PciAddress::from_routing_id(0, 0x0301));
  host.drivers().bind_vfio(PciAddress::from_routing_id(0, 0x0302));
  host.vmm().define_vm("vm1");
  host.vmm().start_vm("vm1");
  qmp::Dispatcher dispatcher(host.vmm());
  std::istringstream in(requests);
  std::ostringstream out;
  qmp::serve_stream(dispatcher, in, out);
  return out.str();
}

inline PciAddress vf(unsigned i) { return PciAddress::from_routing_id(0, 0x0301 + i); }

}  // namespace svff::testing

// Asserts that `stmt` throws svff::Error with the given code.
#define EXPECT_ERRC(stmt, errc)                                              \
  do {                                                                       \
    try {                                                                    \
      stmt;                                                                  \
      ADD_FAILURE() << #stmt " did not throw";                               \
    } catch (const ::svff::Error& e) {                                       \
      EXPECT_EQ(::svff::errc_name(e.code()), ::svff::errc_name(errc)) << e.what(); \
    }                                                                        \
  } while (0)
