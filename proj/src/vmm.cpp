#include "svff/vmm.hpp"

#include <algorithm>
#include <bit>
#include <numeric>

#include "svff/error.hpp"

namespace svff {

void MsiState::validate() const {
  if (vector_count != vectors.size())
    throw Error(Errc::InvalidArgument, "MSI vector_count does not match vectors");
  if (vector_count > kMaxMsiVectors)
    throw Error(Errc::InvalidArgument, "at most 32 MSI vectors");
}

std::string_view phase_name(TransitionPhase p) noexcept {
  switch (p) {
    case TransitionPhase::SnapshotCaptured: return "snapshot-captured";
    case TransitionPhase::PciUnregistered: return "pci-unregistered";
    case TransitionPhase::VfioUnregistered: return "vfio-unregistered";
    case TransitionPhase::IoReconnected: return "io-reconnected";
    case TransitionPhase::ConfigRestored: return "config-restored";
  }
  return "unknown";
}

GuestWindow guest_window(const Bus& bus, PciAddress host) {
  const auto& regions = bus.profile().memory_regions;
  std::vector<std::size_t> order(regions.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return regions[a].size > regions[b].size;
  });
  GuestWindow w;
  w.region_offsets.resize(regions.size());
  std::uint64_t cursor = 0;
  for (auto i : order) {
    w.region_offsets[i] = cursor;
    cursor += regions[i].size;
  }
  std::uint64_t window = std::bit_ceil(cursor);
  std::uint64_t slot = host.routing_id() - Bus::kFirstRoutingId;
  w.base = 0x80000000ULL + slot * window;
  if (w.base + window > 0x100000000ULL)
    throw Error(Errc::OutOfRange, "guest window for " + host.to_string() +
                                      " does not fit 32-bit BARs");
  return w;
}

VmDomain& Vmm::mutable_vm(const std::string& name) {
  auto it = vms_.find(name);
  if (it == vms_.end()) throw Error(Errc::UnknownVm, "no VM named '" + name + "'");
  return it->second;
}

const VmDomain& Vmm::vm(const std::string& name) const {
  return const_cast<Vmm*>(this)->mutable_vm(name);
}

GuestDevice& Vmm::mutable_device(const std::string& vm, const std::string& guest_id) {
  auto& domain = mutable_vm(vm);
  auto it = domain.devices.find(guest_id);
  if (it == domain.devices.end())
    throw Error(Errc::UnknownDevice, "no device '" + guest_id + "' in " + vm);
  return it->second;
}

const GuestDevice& Vmm::device(const std::string& vm, const std::string& guest_id) const {
  return const_cast<Vmm*>(this)->mutable_device(vm, guest_id);
}

void Vmm::notify(TransitionPhase phase, const GuestDevice& dev) const {
  if (observer_) observer_(phase, dev);
}

void Vmm::define_vm(const std::string& name) {
  if (name.empty()) throw Error(Errc::InvalidArgument, "VM name must not be empty");
  if (vms_.contains(name)) throw Error(Errc::DuplicateName, "VM '" + name + "' exists");
  vms_.emplace(name, VmDomain{name, false, {}});
}

void Vmm::start_vm(const std::string& name) { mutable_vm(name).live = true; }

void Vmm::stop_vm(const std::string& name) {
  auto& domain = mutable_vm(name);
  for (auto& [id, dev] : domain.devices)
    if (dev.state == GuestDeviceState::Realized && bus_->is_present(dev.host_addr))
      bus_->set_vfio_open(dev.host_addr, false);
  domain.devices.clear();
  domain.live = false;
}

std::vector<RegionMapping> Vmm::mappings_from_bars(const ConfigSpace& config) const {
  std::vector<RegionMapping> out;
  const auto& regions = bus_->profile().memory_regions;
  for (std::size_t i = 0; i < regions.size(); ++i)
    out.push_back({regions[i].name, config.read32(cfg::bar_offset(i)) & ~0xFu,
                   regions[i].size});
  return out;
}

const GuestDevice& Vmm::realize(const std::string& vm, PciAddress host,
                                const std::string& guest_id) {
  auto& domain = mutable_vm(vm);
  if (!domain.live) throw Error(Errc::VmNotLive, vm + " is not running");
  if (guest_id.empty()) throw Error(Errc::InvalidArgument, "device id must not be empty");
  if (domain.devices.contains(guest_id))
    throw Error(Errc::DuplicateDeviceId, "'" + guest_id + "' already used in " + vm);
  const DeviceNode& node = bus_->present_node(host);
  if (node.bound_driver != Driver::Vfio)
    throw Error(Errc::NotBoundToVfio, host.to_string() + " is bound to " +
                                          std::string(driver_name(node.bound_driver)));
  if (auto owner = find_attachment(host))
    throw Error(Errc::AlreadyAttached,
                host.to_string() + " is attached to " + owner->first);
  if (node.vfio_open)
    throw Error(Errc::AlreadyAttached, host.to_string() + " is held open");

  // Guest firmware programs the BARs and enables decoding.
  GuestWindow window = guest_window(*bus_, host);
  for (std::size_t i = 0; i < window.region_offsets.size(); ++i) {
    std::uint32_t bar = static_cast<std::uint32_t>(window.base + window.region_offsets[i]);
    std::uint8_t raw[4] = {static_cast<std::uint8_t>(bar), static_cast<std::uint8_t>(bar >> 8),
                           static_cast<std::uint8_t>(bar >> 16),
                           static_cast<std::uint8_t>(bar >> 24)};
    bus_->write_config(host, cfg::bar_offset(i), raw);
  }
  std::uint16_t command = bus_->present_node(host).config.read16(cfg::kCommand) | 0x0006;
  std::uint8_t cmd_raw[2] = {static_cast<std::uint8_t>(command),
                             static_cast<std::uint8_t>(command >> 8)};
  bus_->write_config(host, cfg::kCommand, cmd_raw);
  bus_->set_vfio_open(host, true);

  const ConfigSpace& config = bus_->present_node(host).config;
  GuestDevice dev;
  dev.guest_id = guest_id;
  dev.host_addr = host;
  dev.state = GuestDeviceState::Realized;
  dev.emulated_config = config.read(0, bus_->profile().emulated_header_bytes);
  dev.iommu_member = true;
  dev.region_map = mappings_from_bars(config);
  dev.notifiers_registered = true;
  dev.pausable = bus_->profile().pausable;
  return domain.devices.emplace(guest_id, std::move(dev)).first->second;
}

void Vmm::exit_device(const std::string& vm, const std::string& guest_id) {
  auto& dev = mutable_device(vm, guest_id);
  if (dev.state == GuestDeviceState::Paused)
    throw Error(Errc::PausedDevice, "'" + guest_id + "' is paused; unpause it first");
  if (bus_->is_present(dev.host_addr)) bus_->set_vfio_open(dev.host_addr, false);
  mutable_vm(vm).devices.erase(guest_id);
}

bool Vmm::is_pausable(const std::string& vm, const std::string& guest_id) const {
  return device(vm, guest_id).pausable;
}

void Vmm::pause(const std::string& vm, const std::string& guest_id) {
  auto& domain = mutable_vm(vm);
  auto& dev = mutable_device(vm, guest_id);
  if (!domain.live) throw Error(Errc::VmNotLive, vm + " is not running");
  if (!dev.pausable)
    throw Error(Errc::NotPausable, "'" + guest_id + "' device class has no pause()");
  if (dev.state == GuestDeviceState::Paused)
    throw Error(Errc::AlreadyPaused, "'" + guest_id + "' is already paused");

  // 1. Save config space, emulated config and MSI state.
  dev.snapshot = PauseSnapshot{bus_->present_node(dev.host_addr).config,
                               dev.emulated_config, dev.msi, dev.region_map};
  notify(TransitionPhase::SnapshotCaptured, dev);

  // 2. PCI-level unregister: memory subregions and interrupt enable bits.
  dev.region_map.clear();
  std::uint16_t control =
      bus_->present_node(dev.host_addr).config.read16(cfg::kMsiControl) &
      static_cast<std::uint16_t>(~cfg::kMsiEnable);
  std::uint8_t raw[2] = {static_cast<std::uint8_t>(control),
                         static_cast<std::uint8_t>(control >> 8)};
  bus_->write_config(dev.host_addr, cfg::kMsiControl, raw);
  notify(TransitionPhase::PciUnregistered, dev);

  // 3. VFIO-level unregister: notifiers, interrupts, IOMMU group.
  dev.notifiers_registered = false;
  dev.msi.enabled = false;
  dev.iommu_member = false;
  bus_->set_vfio_open(dev.host_addr, false);
  dev.state = GuestDeviceState::Paused;
  notify(TransitionPhase::VfioUnregistered, dev);
}

void Vmm::unpause(const std::string& vm, const std::string& guest_id) {
  auto& dev = mutable_device(vm, guest_id);
  if (dev.state != GuestDeviceState::Paused)
    throw Error(Errc::NotPaused, "'" + guest_id + "' is not paused");
  const DeviceNode* node = bus_->find(dev.host_addr);
  if (!node || !node->present_on_bus)
    throw Error(Errc::HostDeviceGone, dev.host_addr.to_string() + " is no longer on the bus");
  if (node->bound_driver != Driver::Vfio)
    throw Error(Errc::NotBoundToVfio, dev.host_addr.to_string() + " is bound to " +
                                          std::string(driver_name(node->bound_driver)));
  if (node->vfio_open)
    throw Error(Errc::AlreadyAttached, dev.host_addr.to_string() + " is held open");

  const PauseSnapshot& snap = *dev.snapshot;
  // 1. Reconnect I/O; the emulated registers are left alone.
  dev.region_map = snap.region_map;
  dev.iommu_member = true;
  dev.notifiers_registered = true;
  dev.msi = snap.msi;
  bus_->set_vfio_open(dev.host_addr, true);
  notify(TransitionPhase::IoReconnected, dev);

  // 2. Restore config registers and refresh the mappings they describe.
  bus_->restore_config(dev.host_addr, snap.config_copy);
  dev.region_map = mappings_from_bars(snap.config_copy);
  dev.state = GuestDeviceState::Realized;
  dev.snapshot.reset();
  notify(TransitionPhase::ConfigRestored, dev);
}

bool Vmm::set_paused_property(const std::string& vm, const std::string& guest_id,
                              bool paused) {
  bool current = device(vm, guest_id).state == GuestDeviceState::Paused;
  if (current == paused) return false;
  if (paused)
    pause(vm, guest_id);
  else
    unpause(vm, guest_id);
  return true;
}

std::vector<GuestViewEntry> Vmm::guest_view(const std::string& vm) const {
  std::vector<GuestViewEntry> out;
  for (const auto& [id, dev] : this->vm(vm).devices) {
    GuestViewEntry e;
    e.guest_id = id;
    e.status = dev.state == GuestDeviceState::Paused ? GuestStatus::Paused
                                                     : GuestStatus::Attached;
    e.vendor_id = static_cast<std::uint16_t>(dev.emulated_config[cfg::kVendorId] |
                                             dev.emulated_config[cfg::kVendorId + 1] << 8);
    e.device_id = static_cast<std::uint16_t>(dev.emulated_config[cfg::kDeviceId] |
                                             dev.emulated_config[cfg::kDeviceId + 1] << 8);
    e.host_addr = dev.host_addr;
    out.push_back(e);
  }
  return out;
}

IoResult Vmm::guest_io(const std::string& vm, const std::string& guest_id,
                       const std::string& region, IoOp op, std::uint64_t offset,
                       std::span<const std::uint8_t> data, std::size_t len) {
  auto& dev = mutable_device(vm, guest_id);
  if (dev.state == GuestDeviceState::Paused) {
    ++dev.ignored_requests;
    return IoResult{true, {}};
  }
  return IoResult{false, bus_->device_io(dev.host_addr, region, op, offset, data, len)};
}

IoResult Vmm::guest_config_read(const std::string& vm, const std::string& guest_id,
                                std::size_t offset, std::size_t len) {
  auto& dev = mutable_device(vm, guest_id);
  if (offset > kConfigSpaceSize || len > kConfigSpaceSize - offset)
    throw Error(Errc::OutOfRange, "config read beyond 4096 bytes");
  if (offset + len <= dev.emulated_config.size())
    return IoResult{false, {dev.emulated_config.begin() + static_cast<std::ptrdiff_t>(offset),
                            dev.emulated_config.begin() +
                                static_cast<std::ptrdiff_t>(offset + len)}};
  if (dev.state == GuestDeviceState::Paused) {
    ++dev.ignored_requests;
    return IoResult{true, {}};
  }
  return IoResult{false, bus_->read_config(dev.host_addr, offset, len)};
}

IoResult Vmm::guest_config_write(const std::string& vm, const std::string& guest_id,
                                 std::size_t offset, std::span<const std::uint8_t> data) {
  auto& dev = mutable_device(vm, guest_id);
  if (dev.state == GuestDeviceState::Paused) {
    ++dev.ignored_requests;
    return IoResult{true, {}};
  }
  bus_->write_config(dev.host_addr, offset, data);
  const ConfigSpace& config = bus_->present_node(dev.host_addr).config;
  dev.emulated_config = config.read(0, dev.emulated_config.size());
  if (offset < cfg::bar_offset(cfg::kBarCount) && offset + data.size() > cfg::kBar0)
    dev.region_map = mappings_from_bars(config);
  return IoResult{false, {}};
}

IoResult Vmm::guest_set_msi(const std::string& vm, const std::string& guest_id,
                            const MsiState& msi) {
  msi.validate();
  auto& dev = mutable_device(vm, guest_id);
  if (dev.state == GuestDeviceState::Paused) {
    ++dev.ignored_requests;
    return IoResult{true, {}};
  }
  // The capability registers carry the enable bit and the first vector.
  ConfigSpace config = bus_->present_node(dev.host_addr).config;
  std::uint16_t control = config.read16(cfg::kMsiControl);
  control = msi.enabled ? (control | cfg::kMsiEnable)
                        : (control & static_cast<std::uint16_t>(~cfg::kMsiEnable));
  config.write16(cfg::kMsiControl, control);
  if (!msi.vectors.empty()) {
    config.write32(cfg::kMsiAddressLo, static_cast<std::uint32_t>(msi.vectors[0].address));
    config.write32(cfg::kMsiAddressHi, static_cast<std::uint32_t>(msi.vectors[0].address >> 32));
    config.write16(cfg::kMsiData, static_cast<std::uint16_t>(msi.vectors[0].data));
  }
  auto block = config.read(cfg::kMsiCap, 16);
  bus_->write_config(dev.host_addr, cfg::kMsiCap, block);
  dev.msi = msi;
  return IoResult{false, {}};
}

std::optional<std::pair<std::string, std::string>> Vmm::find_attachment(PciAddress host) const {
  for (const auto& [name, domain] : vms_)
    for (const auto& [id, dev] : domain.devices)
      if (dev.host_addr == host) return std::make_pair(name, id);
  return std::nullopt;
}

std::set<PciAddress> Vmm::iommu_members() const {
  std::set<PciAddress> out;
  for (const auto& [name, domain] : vms_)
    for (const auto& [id, dev] : domain.devices)
      if (dev.iommu_member) out.insert(dev.host_addr);
  return out;
}

std::map<PciAddress, std::vector<RegionMapping>> Vmm::active_mappings() const {
  std::map<PciAddress, std::vector<RegionMapping>> out;
  for (const auto& [name, domain] : vms_)
    for (const auto& [id, dev] : domain.devices)
      if (!dev.region_map.empty()) out[dev.host_addr] = dev.region_map;
  return out;
}

}  // namespace svff
