#include "svff/driver_manager.hpp"

#include <cstdio>

#include "svff/error.hpp"

namespace svff {

namespace {

std::pair<std::uint16_t, std::uint16_t> ids_of(const DeviceNode& n) {
  return {n.config.read16(cfg::kVendorId), n.config.read16(cfg::kDeviceId)};
}

}  // namespace

void DriverManager::unbind(PciAddress dev) {
  const DeviceNode& node = bus_->present_node(dev);
  if (node.bound_driver == Driver::None)
    throw Error(Errc::NotBound, dev.to_string() + " has no driver");
  if (node.vfio_open)
    throw Error(Errc::InUse, dev.to_string() + " is held open by a VMM");
  bus_->set_driver(dev, Driver::None);
}

void DriverManager::register_vfio_id(std::uint16_t vendor, std::uint16_t device) {
  registry_->vfio_new_ids.insert({vendor, device});
}

void DriverManager::bind_vfio(PciAddress dev) {
  const DeviceNode& node = bus_->present_node(dev);
  if (node.bound_driver != Driver::None)
    throw Error(Errc::AlreadyBound, dev.to_string() + " is bound to " +
                                        std::string(driver_name(node.bound_driver)));
  auto [vendor, device] = ids_of(node);
  if (!registry_->accepts(vendor, device)) {
    char ids[16];
    std::snprintf(ids, sizeof(ids), "%04x:%04x", vendor, device);
    throw Error(Errc::IdNotRegistered, std::string("vfio-pci has no new_id ") + ids);
  }
  bus_->set_driver(dev, Driver::Vfio);
}

void DriverManager::bind_pf_driver(PciAddress pf) {
  const DeviceNode& node = bus_->present_node(pf);
  if (!node.is_pf())
    throw Error(Errc::NotAPf, pf.to_string() + ": qdma-vf is guest-side only");
  if (node.bound_driver != Driver::None)
    throw Error(Errc::AlreadyBound, pf.to_string() + " is bound to " +
                                        std::string(driver_name(node.bound_driver)));
  bus_->set_driver(pf, Driver::QdmaPf);
}

std::vector<PciAddress> DriverManager::remove_device(PciAddress dev) {
  const DeviceNode& node = bus_->present_node(dev);
  std::vector<PciAddress> affected;
  if (node.is_pf())
    affected = find_related_vfs(dev);
  affected.push_back(dev);
  for (auto addr : affected) {
    if (attached_ && attached_(addr))
      throw Error(Errc::InUse, addr.to_string() + " is attached to a VM");
    if (bus_->find(addr)->vfio_open)
      throw Error(Errc::InUse, addr.to_string() + " is held open by a VMM");
  }
  return bus_->remove_from_bus(dev);
}

std::vector<PciAddress> DriverManager::rescan_bus() { return bus_->rediscover_pfs(); }

std::vector<PciAddress> DriverManager::find_related_vfs(PciAddress pf) const {
  if (!bus_->pf_index(pf))
    throw Error(Errc::NotAPf, pf.to_string() + " is not a PF");
  std::vector<PciAddress> out;
  for (const auto& [addr, n] : bus_->nodes())
    if (n.is_vf() && n.parent == pf && n.present_on_bus) out.push_back(addr);
  return out;  // std::map iteration is already address order
}

void DriverManager::validate(PciAddress dev, Driver expected) const {
  const DeviceNode& node = bus_->present_node(dev);
  const auto& profile = bus_->profile();
  auto [vendor, device] = ids_of(node);
  std::uint16_t want = node.is_pf() ? profile.pf_device_id : profile.vf_device_id;
  if (vendor != profile.vendor_id || device != want)
    throw Error(Errc::IdMismatch, dev.to_string() + " ids do not match the profile");
  if (node.bound_driver != expected)
    throw Error(Errc::DriverMismatch,
                dev.to_string() + " is bound to " +
                    std::string(driver_name(node.bound_driver)) + ", expected " +
                    std::string(driver_name(expected)));
}

}  // namespace svff
