#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "svff/config_space.hpp"
#include "svff/device_profile.hpp"
#include "svff/pci_address.hpp"

namespace svff {

enum class DeviceKind { Pf, Vf };
enum class Driver { None, QdmaPf, QdmaVf, Vfio };

std::string_view driver_name(Driver d) noexcept;
std::optional<Driver> driver_from_name(std::string_view name) noexcept;

// Byte store backing one BAR region, allocated a page at a time on write.
class RegionMemory {
 public:
  static constexpr std::size_t kPageSize = 4096;

  void read(std::uint64_t offset, std::span<std::uint8_t> out) const;
  void write(std::uint64_t offset, std::span<const std::uint8_t> data);

  const std::map<std::uint64_t, std::array<std::uint8_t, kPageSize>>& pages() const {
    return pages_;
  }
  void set_page(std::uint64_t index, const std::array<std::uint8_t, kPageSize>& page) {
    pages_[index] = page;
  }

  friend bool operator==(const RegionMemory&, const RegionMemory&) = default;

 private:
  std::map<std::uint64_t, std::array<std::uint8_t, kPageSize>> pages_;
};

struct DeviceNode {
  PciAddress address;
  DeviceKind kind = DeviceKind::Pf;
  std::optional<PciAddress> parent;  // VF only
  unsigned vf_index = 0;             // VF only
  ConfigSpace config;
  Driver bound_driver = Driver::None;
  unsigned num_vfs = 0;  // PF only
  unsigned queue_count = 0;  // PF only; recorded, no behavior
  bool present_on_bus = true;
  std::optional<std::uint32_t> iommu_group;
  // A VMM holds the VFIO device open (realized passthrough).
  bool vfio_open = false;
  std::vector<RegionMemory> memory;  // parallel to profile.memory_regions

  bool is_pf() const { return kind == DeviceKind::Pf; }
  bool is_vf() const { return kind == DeviceKind::Vf; }

  friend bool operator==(const DeviceNode&, const DeviceNode&) = default;
};

struct FlrAck {
  PciAddress device;
  bool acknowledged = true;
};

enum class IoOp { Read, Write };

// The simulated PCIe segment: SR-IOV PFs and VFs of one QDMA-like device.
//
// VF routing: PFs occupy routing ids 0x0300 + pf_index; VF i of PF p sits at
// 0x0300 + num_pfs + p * max_vfs_per_pf + i, so VFs fill the remaining
// functions of bus 3 and overflow into bus 4, 5, ...
class Bus {
 public:
  static constexpr std::uint32_t kFirstRoutingId = 0x0300;

  // create_bus: every PF present, bound to qdma-pf, num_vfs = 0.
  // Throws Error(InvalidProfile).
  explicit Bus(DeviceProfile profile);

  const DeviceProfile& profile() const { return profile_; }
  const std::map<PciAddress, DeviceNode>& nodes() const { return nodes_; }

  std::vector<PciAddress> pf_addresses() const;
  PciAddress vf_address(PciAddress pf, unsigned index) const;
  // Index of a PF within the profile, if the address is a PF slot.
  std::optional<unsigned> pf_index(PciAddress addr) const;

  const DeviceNode* find(PciAddress addr) const;
  bool is_present(PciAddress addr) const;
  // Throws NotPresent (unknown address) or Detached (removed from the bus).
  const DeviceNode& present_node(PciAddress addr) const;

  // Sysfs sriov_numvfs. Throws NotPresent, NotAPf, NotBound,
  // ExceedsCapability, NonZeroTransition, InUse (a VF is held open by a VMM).
  void set_num_vfs(PciAddress pf, unsigned n);
  void set_queue_count(PciAddress pf, unsigned queues);

  std::vector<std::uint8_t> read_config(PciAddress dev, std::size_t offset,
                                        std::size_t len) const;
  // Vendor and device id are read-only; BARs keep only size-aligned bits.
  void write_config(PciAddress dev, std::size_t offset,
                    std::span<const std::uint8_t> data);
  // Whole-space restore bypassing register semantics (VFIO config restore).
  void restore_config(PciAddress dev, const ConfigSpace& config);

  // Acknowledged immediately; no reset action is performed.
  FlrAck flr_request(PciAddress dev) const;

  // Read returns `len` bytes; write returns an empty vector.
  std::vector<std::uint8_t> device_io(PciAddress dev, const std::string& region,
                                      IoOp op, std::uint64_t offset,
                                      std::span<const std::uint8_t> data,
                                      std::size_t len = 0);
  // Number of device_io calls that reached this address (instrumentation).
  std::uint64_t io_calls(PciAddress dev) const;

  // Primitives used by the driver manager and VMM.
  void set_driver(PciAddress dev, Driver driver);
  void set_vfio_open(PciAddress dev, bool open);
  // Takes a device off the bus; a PF takes its VFs with it. Returns the
  // affected addresses, VFs first.
  std::vector<PciAddress> remove_from_bus(PciAddress dev);
  // Brings every profile PF back (fresh config, qdma-pf); returns those that
  // were absent.
  std::vector<PciAddress> rediscover_pfs();
  // Swaps the device profile. Requires every device to be off the bus.
  void flash(DeviceProfile profile);

  friend bool operator==(const Bus& a, const Bus& b) {
    return a.profile_ == b.profile_ && a.nodes_ == b.nodes_;
  }

  // Used by state restore.
  void replace_nodes(std::map<PciAddress, DeviceNode> nodes) { nodes_ = std::move(nodes); }

 private:
  DeviceNode& mutable_present(PciAddress addr);
  DeviceNode make_pf(unsigned index) const;
  DeviceNode make_vf(PciAddress pf, unsigned pf_index, unsigned vf_index) const;
  ConfigSpace make_config(bool is_vf) const;

  DeviceProfile profile_;
  std::map<PciAddress, DeviceNode> nodes_;
  std::map<PciAddress, std::uint64_t> io_calls_;
};

}  // namespace svff
