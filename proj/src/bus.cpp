#include "svff/bus.hpp"

#include <algorithm>

#include "svff/error.hpp"

namespace svff {

std::string_view driver_name(Driver d) noexcept {
  switch (d) {
    case Driver::None: return "none";
    case Driver::QdmaPf: return "qdma-pf";
    case Driver::QdmaVf: return "qdma-vf";
    case Driver::Vfio: return "vfio";
  }
  return "none";
}

std::optional<Driver> driver_from_name(std::string_view name) noexcept {
  if (name == "none") return Driver::None;
  if (name == "qdma-pf") return Driver::QdmaPf;
  if (name == "qdma-vf") return Driver::QdmaVf;
  if (name == "vfio" || name == "vfio-pci") return Driver::Vfio;
  return std::nullopt;
}

void RegionMemory::read(std::uint64_t offset, std::span<std::uint8_t> out) const {
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t at = offset + i;
    auto it = pages_.find(at / kPageSize);
    out[i] = it == pages_.end() ? 0 : it->second[at % kPageSize];
  }
}

void RegionMemory::write(std::uint64_t offset, std::span<const std::uint8_t> data) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::uint64_t at = offset + i;
    auto [it, inserted] = pages_.try_emplace(at / kPageSize);
    if (inserted) it->second.fill(0);
    it->second[at % kPageSize] = data[i];
  }
}

Bus::Bus(DeviceProfile profile) : profile_(std::move(profile)) {
  profile_.validate();
  for (unsigned i = 0; i < profile_.num_pfs; ++i) {
    DeviceNode pf = make_pf(i);
    nodes_.emplace(pf.address, std::move(pf));
  }
}

std::vector<PciAddress> Bus::pf_addresses() const {
  std::vector<PciAddress> out;
  for (unsigned i = 0; i < profile_.num_pfs; ++i)
    out.push_back(PciAddress::from_routing_id(0, kFirstRoutingId + i));
  return out;
}

std::optional<unsigned> Bus::pf_index(PciAddress addr) const {
  if (addr.domain != 0) return std::nullopt;
  auto rid = addr.routing_id();
  if (rid < kFirstRoutingId || rid >= kFirstRoutingId + profile_.num_pfs)
    return std::nullopt;
  return rid - kFirstRoutingId;
}

PciAddress Bus::vf_address(PciAddress pf, unsigned index) const {
  auto pf_idx = pf_index(pf);
  if (!pf_idx) throw Error(Errc::NotAPf, pf.to_string() + " is not a PF slot");
  if (index >= profile_.max_vfs_per_pf)
    throw Error(Errc::ExceedsCapability,
                "VF index " + std::to_string(index) + " beyond max_vfs_per_pf");
  return PciAddress::from_routing_id(
      0, kFirstRoutingId + profile_.num_pfs + *pf_idx * profile_.max_vfs_per_pf + index);
}

const DeviceNode* Bus::find(PciAddress addr) const {
  auto it = nodes_.find(addr);
  return it == nodes_.end() ? nullptr : &it->second;
}

bool Bus::is_present(PciAddress addr) const {
  const auto* n = find(addr);
  return n && n->present_on_bus;
}

const DeviceNode& Bus::present_node(PciAddress addr) const {
  const auto* n = find(addr);
  if (!n) throw Error(Errc::NotPresent, addr.to_string() + " not on the bus");
  if (!n->present_on_bus)
    throw Error(Errc::Detached, addr.to_string() + " was removed from the bus");
  return *n;
}

DeviceNode& Bus::mutable_present(PciAddress addr) {
  present_node(addr);
  return nodes_.at(addr);
}

ConfigSpace Bus::make_config(bool is_vf) const {
  ConfigSpace c;
  c.write16(cfg::kVendorId, profile_.vendor_id);
  c.write16(cfg::kDeviceId, is_vf ? profile_.vf_device_id : profile_.pf_device_id);
  c.write16(cfg::kStatus, cfg::kStatusCapList);
  c.write8(cfg::kClassCode + 1, cfg::kSubclassOtherMemory);
  c.write8(cfg::kClassCode + 2, cfg::kClassMemoryController);
  c.write16(cfg::kSubsystemVendorId, profile_.vendor_id);
  c.write16(cfg::kSubsystemId, is_vf ? profile_.vf_device_id : profile_.pf_device_id);
  c.write8(cfg::kCapPointer, static_cast<std::uint8_t>(cfg::kMsiCap));
  c.write8(cfg::kInterruptPin, is_vf ? 0 : 1);  // VFs have no INTx
  // MSI: 64-bit capable, 32 vectors capable, disabled.
  c.write8(cfg::kMsiCap, 0x05);
  c.write8(cfg::kMsiCap + 1, static_cast<std::uint8_t>(cfg::kVendorCap));
  c.write16(cfg::kMsiControl, 0x0080 | (5 << 1));
  c.write8(cfg::kVendorCap, 0x09);
  c.write8(cfg::kVendorCap + 1, 0x00);
  c.write8(cfg::kVendorCap + 2, 0x08);
  c.write8(cfg::kVendorCapFlags, is_vf ? cfg::kVfFlag : 0);
  return c;
}

DeviceNode Bus::make_pf(unsigned index) const {
  DeviceNode n;
  n.address = PciAddress::from_routing_id(0, kFirstRoutingId + index);
  n.kind = DeviceKind::Pf;
  n.config = make_config(false);
  n.bound_driver = Driver::QdmaPf;
  n.queue_count = profile_.queue_count;
  n.iommu_group = n.address.routing_id();
  n.memory.resize(profile_.memory_regions.size());
  return n;
}

DeviceNode Bus::make_vf(PciAddress pf, unsigned pf_idx, unsigned vf_index) const {
  (void)pf_idx;
  DeviceNode n;
  n.address = vf_address(pf, vf_index);
  n.kind = DeviceKind::Vf;
  n.parent = pf;
  n.vf_index = vf_index;
  n.config = make_config(true);
  n.iommu_group = n.address.routing_id();
  n.memory.resize(profile_.memory_regions.size());
  return n;
}

void Bus::set_num_vfs(PciAddress pf, unsigned n) {
  DeviceNode& node = mutable_present(pf);
  if (!node.is_pf()) throw Error(Errc::NotAPf, pf.to_string() + " is a VF");
  if (node.bound_driver != Driver::QdmaPf)
    throw Error(Errc::NotBound, pf.to_string() + " has no qdma-pf driver");
  if (n > profile_.max_vfs_per_pf)
    throw Error(Errc::ExceedsCapability,
                std::to_string(n) + " VFs requested, capability is " +
                    std::to_string(profile_.max_vfs_per_pf));
  if (n > 0 && node.num_vfs > 0)
    throw Error(Errc::NonZeroTransition,
                "num_vfs must be set to 0 before changing it from " +
                    std::to_string(node.num_vfs));
  if (n == node.num_vfs) return;

  std::vector<PciAddress> children;
  for (const auto& [addr, dev] : nodes_)
    if (dev.is_vf() && dev.parent == pf) children.push_back(addr);

  if (n == 0) {
    for (auto addr : children)
      if (nodes_.at(addr).vfio_open)
        throw Error(Errc::InUse, addr.to_string() + " is held open by a VMM");
    for (auto addr : children) nodes_.erase(addr);
    node.num_vfs = 0;
    return;
  }

  // Stale children are tombstones of earlier removals.
  for (auto addr : children) nodes_.erase(addr);
  unsigned pf_idx = *pf_index(pf);
  for (unsigned i = 0; i < n; ++i) {
    DeviceNode vf = make_vf(pf, pf_idx, i);
    nodes_.emplace(vf.address, std::move(vf));
  }
  nodes_.at(pf).num_vfs = n;
}

void Bus::set_queue_count(PciAddress pf, unsigned queues) {
  DeviceNode& node = mutable_present(pf);
  if (!node.is_pf()) throw Error(Errc::NotAPf, pf.to_string() + " is a VF");
  if (queues < 1 || queues > kMaxQueues)
    throw Error(Errc::ExceedsCapability,
                "queue count must be in 1.." + std::to_string(kMaxQueues));
  node.queue_count = queues;
}

std::vector<std::uint8_t> Bus::read_config(PciAddress dev, std::size_t offset,
                                           std::size_t len) const {
  return present_node(dev).config.read(offset, len);
}

void Bus::write_config(PciAddress dev, std::size_t offset,
                       std::span<const std::uint8_t> data) {
  DeviceNode& node = mutable_present(dev);
  ConfigSpace updated = node.config;
  updated.write(offset, data);  // range check
  if (!data.empty() && offset < cfg::kDeviceId + 2)
    throw Error(Errc::ReadOnlyField, "vendor/device id are read-only");

  // BARs decode only the address bits above the region size; unimplemented
  // BARs read as zero.
  const auto& regions = profile_.memory_regions;
  for (std::size_t i = 0; i < cfg::kBarCount; ++i) {
    std::size_t bar = cfg::bar_offset(i);
    if (offset + data.size() <= bar || offset >= bar + 4) continue;
    std::uint32_t value = updated.read32(bar);
    if (i < regions.size())
      value &= ~static_cast<std::uint32_t>(regions[i].size - 1) & ~0xFu;
    else
      value = 0;
    updated.write32(bar, value);
  }
  node.config = updated;
}

void Bus::restore_config(PciAddress dev, const ConfigSpace& config) {
  mutable_present(dev).config = config;
}

FlrAck Bus::flr_request(PciAddress dev) const {
  present_node(dev);
  return FlrAck{dev, true};
}

std::vector<std::uint8_t> Bus::device_io(PciAddress dev, const std::string& region,
                                         IoOp op, std::uint64_t offset,
                                         std::span<const std::uint8_t> data,
                                         std::size_t len) {
  ++io_calls_[dev];
  DeviceNode& node = mutable_present(dev);
  if (node.bound_driver == Driver::None)
    throw Error(Errc::NotBound, dev.to_string() + " has no driver");
  const auto& regions = profile_.memory_regions;
  auto it = std::find_if(regions.begin(), regions.end(),
                         [&](const MemoryRegion& r) { return r.name == region; });
  if (it == regions.end())
    throw Error(Errc::OutOfRange, "no region named " + region);
  std::size_t count = op == IoOp::Read ? len : data.size();
  if (offset >= it->size || count > it->size - offset)
    throw Error(Errc::OutOfRange, "access at " + std::to_string(offset) + " beyond " +
                                      region + " (" + std::to_string(it->size) + " bytes)");
  auto& mem = node.memory.at(static_cast<std::size_t>(it - regions.begin()));
  if (op == IoOp::Write) {
    mem.write(offset, data);
    return {};
  }
  std::vector<std::uint8_t> out(count);
  mem.read(offset, out);
  return out;
}

std::uint64_t Bus::io_calls(PciAddress dev) const {
  auto it = io_calls_.find(dev);
  return it == io_calls_.end() ? 0 : it->second;
}

void Bus::set_driver(PciAddress dev, Driver driver) {
  mutable_present(dev).bound_driver = driver;
}

void Bus::set_vfio_open(PciAddress dev, bool open) {
  mutable_present(dev).vfio_open = open;
}

std::vector<PciAddress> Bus::remove_from_bus(PciAddress dev) {
  DeviceNode& node = mutable_present(dev);
  std::vector<PciAddress> removed;
  auto take_off = [&](DeviceNode& n) {
    n.present_on_bus = false;
    n.bound_driver = Driver::None;
    n.vfio_open = false;
    removed.push_back(n.address);
  };
  if (node.is_pf()) {
    for (auto& [addr, child] : nodes_)
      if (child.is_vf() && child.parent == dev && child.present_on_bus) take_off(child);
    node.num_vfs = 0;
  } else {
    DeviceNode& parent = nodes_.at(*node.parent);
    if (parent.num_vfs > 0) --parent.num_vfs;
  }
  take_off(node);
  return removed;
}

std::vector<PciAddress> Bus::rediscover_pfs() {
  std::vector<PciAddress> found;
  for (unsigned i = 0; i < profile_.num_pfs; ++i) {
    DeviceNode fresh = make_pf(i);
    auto it = nodes_.find(fresh.address);
    if (it != nodes_.end() && it->second.present_on_bus) continue;
    found.push_back(fresh.address);
    nodes_[fresh.address] = std::move(fresh);
  }
  return found;
}

void Bus::flash(DeviceProfile profile) {
  profile.validate();
  for (const auto& [addr, n] : nodes_)
    if (n.present_on_bus)
      throw Error(Errc::InUse, addr.to_string() + " is still on the bus");
  profile_ = std::move(profile);
  nodes_.clear();
}

}  // namespace svff
