#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "svff/bus.hpp"

namespace svff {

inline constexpr unsigned kMaxMsiVectors = 32;

struct MsiVector {
  std::uint64_t address = 0;
  std::uint32_t data = 0;
  bool masked = false;

  friend bool operator==(const MsiVector&, const MsiVector&) = default;
};

struct MsiState {
  bool enabled = false;
  unsigned vector_count = 0;
  std::vector<MsiVector> vectors;

  // Throws Error(InvalidArgument) unless vector_count == vectors.size() <= 32.
  void validate() const;

  friend bool operator==(const MsiState&, const MsiState&) = default;
};

struct RegionMapping {
  std::string name;
  std::uint64_t guest_base = 0;
  std::uint64_t size = 0;

  friend bool operator==(const RegionMapping&, const RegionMapping&) = default;
};

// Everything pause() saves and unpause() puts back.
struct PauseSnapshot {
  ConfigSpace config_copy;
  std::vector<std::uint8_t> emulated_copy;
  MsiState msi;
  std::vector<RegionMapping> region_map;

  friend bool operator==(const PauseSnapshot&, const PauseSnapshot&) = default;
};

enum class GuestDeviceState { Realized, Paused };

// A vfio-pci passthrough device as the VMM tracks it.
struct GuestDevice {
  std::string guest_id;
  PciAddress host_addr;
  GuestDeviceState state = GuestDeviceState::Realized;
  std::vector<std::uint8_t> emulated_config;
  std::optional<PauseSnapshot> snapshot;
  bool iommu_member = false;

  MsiState msi;
  std::vector<RegionMapping> region_map;  // active guest mappings
  bool notifiers_registered = false;      // request + error notifiers
  bool pausable = true;
  std::uint64_t ignored_requests = 0;

  friend bool operator==(const GuestDevice&, const GuestDevice&) = default;
};

struct VmDomain {
  std::string name;
  bool live = false;
  std::map<std::string, GuestDevice> devices;

  friend bool operator==(const VmDomain&, const VmDomain&) = default;
};

enum class TransitionPhase {
  SnapshotCaptured,  // pause 1
  PciUnregistered,   // pause 2
  VfioUnregistered,  // pause 3
  IoReconnected,     // unpause 1
  ConfigRestored,    // unpause 2
};

std::string_view phase_name(TransitionPhase p) noexcept;

using PhaseObserver = std::function<void(TransitionPhase, const GuestDevice&)>;

enum class GuestStatus { Attached, Paused };

struct GuestViewEntry {
  std::string guest_id;
  GuestStatus status = GuestStatus::Attached;
  std::uint16_t vendor_id = 0;  // read from the emulated header
  std::uint16_t device_id = 0;
  PciAddress host_addr;

  friend bool operator==(const GuestViewEntry&, const GuestViewEntry&) = default;
};

struct IoResult {
  bool ignored = false;  // guest request dropped because the device is paused
  std::vector<std::uint8_t> data;
};

// Guest-physical window for a host device: one power-of-two window per
// routing slot above 2 GiB, regions packed largest first.
struct GuestWindow {
  std::uint64_t base = 0;
  std::vector<std::uint64_t> region_offsets;  // parallel to profile regions
};
GuestWindow guest_window(const Bus& bus, PciAddress host);

// VMs and the VFIO device lifecycle: realize, exit, pause, unpause.
class Vmm {
 public:
  explicit Vmm(Bus& bus) : bus_(&bus) {}

  // Points the VMM at another bus (used when the owning Host is copied).
  void rebind(Bus& bus) { bus_ = &bus; }

  void define_vm(const std::string& name);
  void start_vm(const std::string& name);
  // Exits realized devices host-side and discards paused snapshots.
  void stop_vm(const std::string& name);

  bool has_vm(const std::string& name) const { return vms_.contains(name); }
  const VmDomain& vm(const std::string& name) const;
  const std::map<std::string, VmDomain>& vms() const { return vms_; }
  const GuestDevice& device(const std::string& vm, const std::string& guest_id) const;

  const GuestDevice& realize(const std::string& vm, PciAddress host,
                             const std::string& guest_id);
  void exit_device(const std::string& vm, const std::string& guest_id);

  void pause(const std::string& vm, const std::string& guest_id);
  void unpause(const std::string& vm, const std::string& guest_id);
  // The `paused` device property: setting the current value is a no-op.
  // Returns whether the state changed.
  bool set_paused_property(const std::string& vm, const std::string& guest_id,
                           bool paused);
  bool is_pausable(const std::string& vm, const std::string& guest_id) const;

  std::vector<GuestViewEntry> guest_view(const std::string& vm) const;

  IoResult guest_io(const std::string& vm, const std::string& guest_id,
                    const std::string& region, IoOp op, std::uint64_t offset,
                    std::span<const std::uint8_t> data, std::size_t len = 0);
  IoResult guest_config_read(const std::string& vm, const std::string& guest_id,
                             std::size_t offset, std::size_t len);
  IoResult guest_config_write(const std::string& vm, const std::string& guest_id,
                              std::size_t offset, std::span<const std::uint8_t> data);
  IoResult guest_set_msi(const std::string& vm, const std::string& guest_id,
                         const MsiState& msi);

  // (vm, guest_id) holding this host device, realized or paused.
  std::optional<std::pair<std::string, std::string>> find_attachment(PciAddress host) const;
  bool is_attached(PciAddress host) const { return find_attachment(host).has_value(); }

  std::set<PciAddress> iommu_members() const;
  std::map<PciAddress, std::vector<RegionMapping>> active_mappings() const;

  void set_phase_observer(PhaseObserver observer) { observer_ = std::move(observer); }

  friend bool operator==(const Vmm& a, const Vmm& b) { return a.vms_ == b.vms_; }

  // Used by state restore.
  void replace_vms(std::map<std::string, VmDomain> vms) { vms_ = std::move(vms); }

 private:
  VmDomain& mutable_vm(const std::string& name);
  GuestDevice& mutable_device(const std::string& vm, const std::string& guest_id);
  std::vector<RegionMapping> mappings_from_bars(const ConfigSpace& config) const;
  void notify(TransitionPhase phase, const GuestDevice& dev) const;

  Bus* bus_;
  std::map<std::string, VmDomain> vms_;
  PhaseObserver observer_;
};

}  // namespace svff
