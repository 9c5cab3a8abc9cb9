#include "svff/device_profile.hpp"

#include <fstream>
#include <set>

#include "svff/error.hpp"

namespace svff {

namespace {

bool is_power_of_two(std::uint64_t v) { return v != 0 && (v & (v - 1)) == 0; }

}  // namespace

DeviceProfile DeviceProfile::default_profile() {
  DeviceProfile p;
  p.memory_regions = {{"bram-fast", 524288, LatencyClass::Fast},
                      {"bram-slow", 32768, LatencyClass::Slow}};
  return p;
}

void DeviceProfile::validate() const {
  auto fail = [](const std::string& why) { throw Error(Errc::InvalidProfile, why); };
  if (num_pfs < 1 || num_pfs > kMaxPfs)
    fail("num_pfs must be in 1.." + std::to_string(kMaxPfs));
  if (max_vfs_per_pf > kMaxVfsPerPf)
    fail("max_vfs_per_pf must be <= " + std::to_string(kMaxVfsPerPf));
  if (queue_count < 1 || queue_count > kMaxQueues)
    fail("queue_count must be in 1.." + std::to_string(kMaxQueues));
  if (memory_regions.empty() || memory_regions.size() > 6)
    fail("between 1 and 6 memory regions are required");
  std::set<std::string> names;
  for (const auto& r : memory_regions) {
    if (r.name.empty()) fail("memory region without a name");
    if (!names.insert(r.name).second) fail("duplicate memory region " + r.name);
    // 32-bit memory BARs: power of two, at least 16 bytes, at most 1 GiB.
    if (!is_power_of_two(r.size) || r.size < 16 || r.size > (1ULL << 30))
      fail("region " + r.name + " size must be a power of two in [16, 1 GiB]");
  }
  if (emulated_header_bytes < 64 || emulated_header_bytes > 256 ||
      emulated_header_bytes % 4 != 0)
    fail("emulated_header_bytes must be a multiple of 4 in [64, 256]");
  if (vendor_id == 0xFFFF || vendor_id == 0) fail("invalid vendor id");
}

const MemoryRegion* DeviceProfile::find_region(const std::string& name) const {
  for (const auto& r : memory_regions)
    if (r.name == name) return &r;
  return nullptr;
}

void to_json(nlohmann::json& j, const MemoryRegion& r) {
  j = nlohmann::json{{"name", r.name},
                     {"size", r.size},
                     {"latency", r.latency == LatencyClass::Fast ? "fast" : "slow"}};
}

void from_json(const nlohmann::json& j, MemoryRegion& r) {
  r.name = j.at("name").get<std::string>();
  r.size = j.at("size").get<std::uint64_t>();
  auto latency = j.value("latency", std::string("fast"));
  if (latency == "fast")
    r.latency = LatencyClass::Fast;
  else if (latency == "slow")
    r.latency = LatencyClass::Slow;
  else
    throw Error(Errc::InvalidProfile, "latency must be fast or slow");
}

void to_json(nlohmann::json& j, const DeviceProfile& p) {
  j = nlohmann::json{{"num_pfs", p.num_pfs},
                     {"max_vfs_per_pf", p.max_vfs_per_pf},
                     {"queue_count", p.queue_count},
                     {"memory_regions", p.memory_regions},
                     {"vendor_id", p.vendor_id},
                     {"pf_device_id", p.pf_device_id},
                     {"vf_device_id", p.vf_device_id},
                     {"emulated_header_bytes", p.emulated_header_bytes},
                     {"pausable", p.pausable}};
}

void from_json(const nlohmann::json& j, DeviceProfile& p) {
  try {
    DeviceProfile out = DeviceProfile::default_profile();
    out.num_pfs = j.value("num_pfs", out.num_pfs);
    out.max_vfs_per_pf = j.value("max_vfs_per_pf", out.max_vfs_per_pf);
    out.queue_count = j.value("queue_count", out.queue_count);
    if (j.contains("memory_regions"))
      out.memory_regions = j.at("memory_regions").get<std::vector<MemoryRegion>>();
    out.vendor_id = j.value("vendor_id", out.vendor_id);
    out.pf_device_id = j.value("pf_device_id", out.pf_device_id);
    out.vf_device_id = j.value("vf_device_id", out.vf_device_id);
    out.emulated_header_bytes =
        j.value("emulated_header_bytes", out.emulated_header_bytes);
    out.pausable = j.value("pausable", out.pausable);
    out.validate();
    p = std::move(out);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidProfile, e.what());
  }
}

DeviceProfile load_profile_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::InvalidProfile, "cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidProfile, path + ": " + e.what());
  }
  return j.get<DeviceProfile>();
}

}  // namespace svff
