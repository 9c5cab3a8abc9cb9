#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace svff {

// QDMA capability limits.
inline constexpr unsigned kMaxPfs = 4;
inline constexpr unsigned kMaxVfsPerPf = 252;
inline constexpr unsigned kMaxQueues = 2048;

enum class LatencyClass { Fast, Slow };

struct MemoryRegion {
  std::string name;
  std::uint64_t size = 0;  // bytes, power of two; encoded by the BAR
  LatencyClass latency = LatencyClass::Fast;

  friend bool operator==(const MemoryRegion&, const MemoryRegion&) = default;
};

// What the flashed bitstream exposes. Region i is decoded by BAR i.
struct DeviceProfile {
  unsigned num_pfs = 1;
  unsigned max_vfs_per_pf = 32;
  unsigned queue_count = 512;
  std::vector<MemoryRegion> memory_regions;

  std::uint16_t vendor_id = 0x10EE;
  std::uint16_t pf_device_id = 0x903F;
  std::uint16_t vf_device_id = 0xA03F;
  // Leading config bytes the VMM emulates for the guest.
  std::size_t emulated_header_bytes = 64;
  // Whether the passthrough device class exposes pause().
  bool pausable = true;

  // One PF (memory controller class), 32 VFs, 512 queues, a fast 512 KiB and
  // a slow 32 KiB BRAM.
  static DeviceProfile default_profile();

  // Throws Error(InvalidProfile).
  void validate() const;

  const MemoryRegion* find_region(const std::string& name) const;

  friend bool operator==(const DeviceProfile&, const DeviceProfile&) = default;
};

void to_json(nlohmann::json& j, const MemoryRegion& r);
void from_json(const nlohmann::json& j, MemoryRegion& r);
void to_json(nlohmann::json& j, const DeviceProfile& p);
// Missing optional fields keep their defaults; the result is validated.
void from_json(const nlohmann::json& j, DeviceProfile& p);

DeviceProfile load_profile_file(const std::string& path);

}  // namespace svff
