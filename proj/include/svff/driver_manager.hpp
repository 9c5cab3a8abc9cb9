#pragma once

#include <cstdint>
#include <functional>
#include <set>
#include <utility>
#include <vector>

#include "svff/bus.hpp"

namespace svff {

// Host-side driver state: which (vendor, device) pairs vfio-pci accepts.
struct DriverRegistry {
  using IdPair = std::pair<std::uint16_t, std::uint16_t>;

  std::set<IdPair> vfio_new_ids;

  bool accepts(std::uint16_t vendor, std::uint16_t device) const {
    return vfio_new_ids.contains({vendor, device});
  }

  friend bool operator==(const DriverRegistry&, const DriverRegistry&) = default;
};

// Reports whether a host device is attached (realized or paused) to a VM.
using AttachmentProbe = std::function<bool(PciAddress)>;

// The QDMA manager: bind/unbind, VFIO new ids, removal, rescan, VF discovery
// and the device-id / driver-name safety check.
class DriverManager {
 public:
  DriverManager(Bus& bus, DriverRegistry& registry, AttachmentProbe attached)
      : bus_(&bus), registry_(&registry), attached_(std::move(attached)) {}

  // Throws NotPresent/Detached, NotBound, InUse (held open by a VMM).
  void unbind(PciAddress dev);

  void register_vfio_id(std::uint16_t vendor, std::uint16_t device);
  // Throws NotPresent/Detached, AlreadyBound, IdNotRegistered.
  void bind_vfio(PciAddress dev);
  // Re-probes the host PF driver after an unbind. qdma-vf is guest-only and
  // never bindable here. Throws NotAPf, AlreadyBound.
  void bind_pf_driver(PciAddress pf);

  // A PF goes with all its VFs. Throws InUse if any affected device is
  // attached or paused in a VM.
  std::vector<PciAddress> remove_device(PciAddress dev);

  // PFs only; VFs come back solely through sriov_numvfs.
  std::vector<PciAddress> rescan_bus();

  // Present VF children in address order. Throws NotAPf.
  std::vector<PciAddress> find_related_vfs(PciAddress pf) const;

  // Throws NotPresent/Detached, IdMismatch, DriverMismatch. No side effects.
  void validate(PciAddress dev, Driver expected) const;

 private:
  Bus* bus_;
  DriverRegistry* registry_;
  AttachmentProbe attached_;
};

}  // namespace svff
