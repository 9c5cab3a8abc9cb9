#pragma once

#include "svff/bus.hpp"
#include "svff/driver_manager.hpp"
#include "svff/vmm.hpp"

namespace svff {

// One simulated host: the PCIe segment, host driver state and the VMM.
// Copyable; a copy is an independent machine.
class Host {
 public:
  explicit Host(DeviceProfile profile = DeviceProfile::default_profile())
      : bus_(std::move(profile)), vmm_(bus_) {}

  Host(const Host& other)
      : bus_(other.bus_), registry_(other.registry_), vmm_(other.vmm_) {
    vmm_.rebind(bus_);
  }
  Host& operator=(const Host& other) {
    if (this != &other) {
      bus_ = other.bus_;
      registry_ = other.registry_;
      vmm_ = other.vmm_;
      vmm_.rebind(bus_);
    }
    return *this;
  }

  Bus& bus() { return bus_; }
  const Bus& bus() const { return bus_; }
  DriverRegistry& registry() { return registry_; }
  const DriverRegistry& registry() const { return registry_; }
  Vmm& vmm() { return vmm_; }
  const Vmm& vmm() const { return vmm_; }

  DriverManager drivers() {
    const Vmm* vmm = &vmm_;
    return DriverManager(bus_, registry_,
                         [vmm](PciAddress a) { return vmm->is_attached(a); });
  }

  friend bool operator==(const Host& a, const Host& b) {
    return a.bus_ == b.bus_ && a.registry_ == b.registry_ && a.vmm_ == b.vmm_;
  }

 private:
  Bus bus_;
  DriverRegistry registry_;
  Vmm vmm_;
};

}  // namespace svff
