#include "svff/state.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include "svff/error.hpp"

namespace svff {

namespace {

using nlohmann::json;

std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0xF]);
  }
  return out;
}

std::vector<std::uint8_t> from_hex(const std::string& s) {
  if (s.size() % 2) throw Error(Errc::StorageError, "odd-length hex string");
  auto nibble = [](char c) -> std::uint8_t {
    if (c >= '0' && c <= '9') return static_cast<std::uint8_t>(c - '0');
    if (c >= 'a' && c <= 'f') return static_cast<std::uint8_t>(c - 'a' + 10);
    if (c >= 'A' && c <= 'F') return static_cast<std::uint8_t>(c - 'A' + 10);
    throw Error(Errc::StorageError, std::string("bad hex digit '") + c + "'");
  };
  std::vector<std::uint8_t> out(s.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<std::uint8_t>(nibble(s[2 * i]) << 4 | nibble(s[2 * i + 1]));
  return out;
}

// Config spaces are mostly zero; trailing zeros are dropped.
std::string config_hex(const ConfigSpace& c) {
  auto bytes = c.bytes();
  std::size_t end = bytes.size();
  while (end > 0 && bytes[end - 1] == 0) --end;
  return to_hex(bytes.first(end));
}

ConfigSpace config_from_hex(const std::string& s) {
  ConfigSpace c;
  auto bytes = from_hex(s);
  if (bytes.size() > kConfigSpaceSize) throw Error(Errc::StorageError, "config space too long");
  c.write(0, bytes);
  return c;
}

json msi_to_json(const MsiState& m) {
  json vectors = json::array();
  for (const auto& v : m.vectors)
    vectors.push_back({{"address", v.address}, {"data", v.data}, {"masked", v.masked}});
  return {{"enabled", m.enabled}, {"vector_count", m.vector_count}, {"vectors", vectors}};
}

MsiState msi_from_json(const json& j) {
  MsiState m;
  m.enabled = j.at("enabled").get<bool>();
  m.vector_count = j.at("vector_count").get<unsigned>();
  for (const auto& v : j.at("vectors"))
    m.vectors.push_back({v.at("address").get<std::uint64_t>(), v.at("data").get<std::uint32_t>(),
                         v.at("masked").get<bool>()});
  return m;
}

json mappings_to_json(const std::vector<RegionMapping>& maps) {
  json out = json::array();
  for (const auto& m : maps)
    out.push_back({{"name", m.name}, {"guest_base", m.guest_base}, {"size", m.size}});
  return out;
}

std::vector<RegionMapping> mappings_from_json(const json& j) {
  std::vector<RegionMapping> out;
  for (const auto& m : j)
    out.push_back({m.at("name").get<std::string>(), m.at("guest_base").get<std::uint64_t>(),
                   m.at("size").get<std::uint64_t>()});
  return out;
}

json node_to_json(const DeviceNode& n) {
  json memory = json::array();
  for (const auto& region : n.memory) {
    json pages = json::object();
    for (const auto& [index, page] : region.pages()) pages[std::to_string(index)] = to_hex(page);
    memory.push_back(pages);
  }
  json j{{"address", n.address.to_string()},
         {"kind", n.is_pf() ? "pf" : "vf"},
         {"vf_index", n.vf_index},
         {"config", config_hex(n.config)},
         {"driver", driver_name(n.bound_driver)},
         {"num_vfs", n.num_vfs},
         {"queue_count", n.queue_count},
         {"present", n.present_on_bus},
         {"vfio_open", n.vfio_open},
         {"memory", memory}};
  j["parent"] = n.parent ? json(n.parent->to_string()) : json();
  j["iommu_group"] = n.iommu_group ? json(*n.iommu_group) : json();
  return j;
}

DeviceNode node_from_json(const json& j) {
  DeviceNode n;
  n.address = PciAddress::parse(j.at("address").get<std::string>());
  n.kind = j.at("kind").get<std::string>() == "pf" ? DeviceKind::Pf : DeviceKind::Vf;
  if (!j.at("parent").is_null()) n.parent = PciAddress::parse(j.at("parent").get<std::string>());
  n.vf_index = j.at("vf_index").get<unsigned>();
  n.config = config_from_hex(j.at("config").get<std::string>());
  auto driver = driver_from_name(j.at("driver").get<std::string>());
  if (!driver) throw Error(Errc::StorageError, "unknown driver " + j.at("driver").dump());
  n.bound_driver = *driver;
  n.num_vfs = j.at("num_vfs").get<unsigned>();
  n.queue_count = j.at("queue_count").get<unsigned>();
  n.present_on_bus = j.at("present").get<bool>();
  if (!j.at("iommu_group").is_null()) n.iommu_group = j.at("iommu_group").get<std::uint32_t>();
  n.vfio_open = j.at("vfio_open").get<bool>();
  for (const auto& pages : j.at("memory")) {
    RegionMemory region;
    for (const auto& [key, hex] : pages.items()) {
      auto bytes = from_hex(hex.get<std::string>());
      if (bytes.size() != RegionMemory::kPageSize) throw Error(Errc::StorageError, "bad page size");
      std::array<std::uint8_t, RegionMemory::kPageSize> page{};
      std::copy(bytes.begin(), bytes.end(), page.begin());
      region.set_page(std::stoull(key), page);
    }
    n.memory.push_back(std::move(region));
  }
  return n;
}

json device_to_json(const GuestDevice& d) {
  json j{{"guest_id", d.guest_id},
         {"host", d.host_addr.to_string()},
         {"state", d.state == GuestDeviceState::Paused ? "paused" : "realized"},
         {"emulated_config", to_hex(d.emulated_config)},
         {"iommu_member", d.iommu_member},
         {"msi", msi_to_json(d.msi)},
         {"region_map", mappings_to_json(d.region_map)},
         {"notifiers_registered", d.notifiers_registered},
         {"pausable", d.pausable},
         {"ignored_requests", d.ignored_requests}};
  if (d.snapshot) {
    j["snapshot"] = {{"config", config_hex(d.snapshot->config_copy)},
                     {"emulated", to_hex(d.snapshot->emulated_copy)},
                     {"msi", msi_to_json(d.snapshot->msi)},
                     {"region_map", mappings_to_json(d.snapshot->region_map)}};
  } else {
    j["snapshot"] = nullptr;
  }
  return j;
}

GuestDevice device_from_json(const json& j) {
  GuestDevice d;
  d.guest_id = j.at("guest_id").get<std::string>();
  d.host_addr = PciAddress::parse(j.at("host").get<std::string>());
  d.state = j.at("state").get<std::string>() == "paused" ? GuestDeviceState::Paused
                                                         : GuestDeviceState::Realized;
  d.emulated_config = from_hex(j.at("emulated_config").get<std::string>());
  d.iommu_member = j.at("iommu_member").get<bool>();
  d.msi = msi_from_json(j.at("msi"));
  d.region_map = mappings_from_json(j.at("region_map"));
  d.notifiers_registered = j.at("notifiers_registered").get<bool>();
  d.pausable = j.at("pausable").get<bool>();
  d.ignored_requests = j.at("ignored_requests").get<std::uint64_t>();
  const auto& s = j.at("snapshot");
  if (!s.is_null()) {
    d.snapshot = PauseSnapshot{config_from_hex(s.at("config").get<std::string>()),
                               from_hex(s.at("emulated").get<std::string>()),
                               msi_from_json(s.at("msi")), mappings_from_json(s.at("region_map"))};
  }
  return d;
}

class Fnv {
 public:
  void bytes(const void* data, std::size_t len) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ull;
    }
  }
  void u64(std::uint64_t v) { bytes(&v, sizeof v); }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  void addr(PciAddress a) { u64(a.routing_id() | std::uint64_t{a.domain} << 32); }
  void msi(const MsiState& m) {
    u64(m.enabled);
    u64(m.vector_count);
    for (const auto& v : m.vectors) {
      u64(v.address);
      u64(v.data);
      u64(v.masked);
    }
  }
  void maps(const std::vector<RegionMapping>& maps) {
    u64(maps.size());
    for (const auto& m : maps) {
      str(m.name);
      u64(m.guest_base);
      u64(m.size);
    }
  }
  std::uint64_t value() const { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ull;
};

}  // namespace

json host_to_json(const Host& host) {
  json nodes = json::array();
  for (const auto& [addr, node] : host.bus().nodes()) nodes.push_back(node_to_json(node));
  json ids = json::array();
  for (const auto& [vendor, device] : host.registry().vfio_new_ids) ids.push_back({vendor, device});
  json vms = json::array();
  for (const auto& [name, vm] : host.vmm().vms()) {
    json devices = json::array();
    for (const auto& [id, dev] : vm.devices) devices.push_back(device_to_json(dev));
    vms.push_back({{"name", name}, {"live", vm.live}, {"devices", devices}});
  }
  return {{"profile", host.bus().profile()},
          {"nodes", nodes},
          {"vfio_new_ids", ids},
          {"vms", vms}};
}

Host host_from_json(const json& j) {
  try {
    Host host(j.at("profile").get<DeviceProfile>());
    std::map<PciAddress, DeviceNode> nodes;
    for (const auto& n : j.at("nodes")) {
      auto node = node_from_json(n);
      nodes.emplace(node.address, std::move(node));
    }
    host.bus().replace_nodes(std::move(nodes));
    for (const auto& id : j.at("vfio_new_ids"))
      host.registry().vfio_new_ids.insert({id.at(0).get<std::uint16_t>(), id.at(1).get<std::uint16_t>()});
    std::map<std::string, VmDomain> vms;
    for (const auto& v : j.at("vms")) {
      VmDomain vm{v.at("name").get<std::string>(), v.at("live").get<bool>(), {}};
      for (const auto& d : v.at("devices")) {
        auto dev = device_from_json(d);
        vm.devices.emplace(dev.guest_id, std::move(dev));
      }
      vms.emplace(vm.name, std::move(vm));
    }
    host.vmm().replace_vms(std::move(vms));
    return host;
  } catch (const json::exception& e) {
    throw Error(Errc::StorageError, std::string("state document: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == Errc::StorageError) throw;
    throw Error(Errc::StorageError, "state document: " + e.detail());
  }
}

void save_host(const Host& host, const std::filesystem::path& file) {
  std::error_code ec;
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path(), ec);
  auto tmp = file;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw Error(Errc::StorageError, "cannot write " + tmp.string());
    out << host_to_json(host).dump(1) << '\n';
    if (!out) throw Error(Errc::StorageError, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, file, ec);
  if (ec) throw Error(Errc::StorageError, "rename " + tmp.string() + ": " + ec.message());
}

Host load_host(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(Errc::StorageError, "cannot open " + file.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(Errc::StorageError, file.string() + ": " + e.what());
  }
  return host_from_json(j);
}

std::uint64_t state_hash(const Host& host, const RecordStore& records) {
  Fnv h;
  const auto& p = host.bus().profile();
  h.u64(p.num_pfs);
  h.u64(p.max_vfs_per_pf);
  h.u64(p.queue_count);
  for (const auto& r : p.memory_regions) {
    h.str(r.name);
    h.u64(r.size);
    h.u64(static_cast<std::uint64_t>(r.latency));
  }
  h.u64(p.vendor_id);
  h.u64(p.pf_device_id);
  h.u64(p.vf_device_id);
  h.u64(p.emulated_header_bytes);
  h.u64(p.pausable);

  for (const auto& [addr, n] : host.bus().nodes()) {
    h.addr(addr);
    h.u64(static_cast<std::uint64_t>(n.kind));
    h.u64(n.parent ? n.parent->routing_id() + 1 : 0);
    h.u64(n.vf_index);
    auto cfg = n.config.bytes();
    h.bytes(cfg.data(), cfg.size());
    h.u64(static_cast<std::uint64_t>(n.bound_driver));
    h.u64(n.num_vfs);
    h.u64(n.queue_count);
    h.u64(n.present_on_bus);
    h.u64(n.iommu_group ? *n.iommu_group + 1ull : 0);
    h.u64(n.vfio_open);
    for (const auto& region : n.memory) {
      h.u64(region.pages().size());
      for (const auto& [index, page] : region.pages()) {
        h.u64(index);
        h.bytes(page.data(), page.size());
      }
    }
  }
  for (const auto& [vendor, device] : host.registry().vfio_new_ids) h.u64(vendor << 16 | device);
  for (const auto& [name, vm] : host.vmm().vms()) {
    h.str(name);
    h.u64(vm.live);
    for (const auto& [id, d] : vm.devices) {
      h.str(id);
      h.addr(d.host_addr);
      h.u64(static_cast<std::uint64_t>(d.state));
      h.bytes(d.emulated_config.data(), d.emulated_config.size());
      h.u64(d.iommu_member);
      h.msi(d.msi);
      h.maps(d.region_map);
      h.u64(d.notifiers_registered);
      h.u64(d.pausable);
      h.u64(d.ignored_requests);
      h.u64(d.snapshot.has_value());
      if (d.snapshot) {
        auto cfg = d.snapshot->config_copy.bytes();
        h.bytes(cfg.data(), cfg.size());
        h.bytes(d.snapshot->emulated_copy.data(), d.snapshot->emulated_copy.size());
        h.msi(d.snapshot->msi);
        h.maps(d.snapshot->region_map);
      }
    }
  }
  for (const auto& r : records.list()) {
    h.addr(r.vf);
    h.addr(r.pf);
    h.str(r.vm);
    h.str(r.guest_id);
    h.str(r.guest_slot);
  }
  return h.value();
}

std::vector<std::string> check_invariants(const Host& host, const RecordStore& records) {
  std::vector<std::string> out;
  auto fail = [&out](std::string msg) { out.push_back(std::move(msg)); };
  const Bus& bus = host.bus();

  std::map<PciAddress, unsigned> children;
  for (const auto& [addr, n] : bus.nodes()) {
    if (!n.is_vf() || !n.present_on_bus) continue;
    const DeviceNode* parent = n.parent ? bus.find(*n.parent) : nullptr;
    if (!parent || !parent->present_on_bus)
      fail("dangling VF " + addr.to_string() + " without a present PF");
    else
      ++children[*n.parent];
  }
  for (const auto& [addr, n] : bus.nodes()) {
    if (!n.is_pf() || !n.present_on_bus) continue;
    if (n.num_vfs != children[addr])
      fail(addr.to_string() + " num_vfs " + std::to_string(n.num_vfs) + " but " +
           std::to_string(children[addr]) + " VFs present");
  }

  std::map<PciAddress, std::string> owner;
  std::set<PciAddress> realized_hosts;
  for (const auto& [name, vm] : host.vmm().vms()) {
    if (!vm.live && !vm.devices.empty()) fail("stopped VM " + name + " has devices");
    for (const auto& [id, d] : vm.devices) {
      std::string who = name + "/" + id;
      auto [it, fresh] = owner.emplace(d.host_addr, who);
      if (!fresh)
        fail(d.host_addr.to_string() + " held by both " + it->second + " and " + who);
      const DeviceNode* node = bus.find(d.host_addr);
      bool present = node && node->present_on_bus;
      if (d.state == GuestDeviceState::Paused) {
        if (d.iommu_member) fail(who + " paused but still an IOMMU group member");
        if (!d.region_map.empty()) fail(who + " paused with active mappings");
        if (!d.snapshot) fail(who + " paused without a snapshot");
        if (present && node->vfio_open) fail(who + " paused but its VF is held open");
      } else {
        realized_hosts.insert(d.host_addr);
        if (!d.iommu_member) fail(who + " realized outside the IOMMU group");
        if (d.snapshot) fail(who + " realized with a stale snapshot");
        if (!present)
          fail(who + " realized on an absent VF");
        else if (node->bound_driver != Driver::Vfio || !node->vfio_open)
          fail(who + " realized on a VF not held by vfio-pci");
      }
    }
  }
  for (const auto& [addr, n] : bus.nodes())
    if (n.present_on_bus && n.vfio_open && !realized_hosts.contains(addr))
      fail(addr.to_string() + " held open without a realized device");

  std::set<std::pair<std::string, std::string>> recorded;
  for (const auto& r : records.list()) {
    recorded.insert({r.vm, r.guest_id});
    if (!host.vmm().has_vm(r.vm)) {
      fail("record for " + r.vf.to_string() + " names unknown VM " + r.vm);
      continue;
    }
    const VmDomain& vm = host.vmm().vm(r.vm);
    if (!vm.live) continue;
    auto it = vm.devices.find(r.guest_id);
    if (it == vm.devices.end())
      fail("record for " + r.vf.to_string() + " has no device in live VM " + r.vm);
    else if (it->second.host_addr != r.vf)
      fail("record for " + r.vf.to_string() + " points at a device on " +
           it->second.host_addr.to_string());
  }
  for (const auto& [name, vm] : host.vmm().vms())
    for (const auto& [id, d] : vm.devices)
      if (!recorded.contains({name, id})) fail(name + "/" + id + " has no attachment record");
  return out;
}

}  // namespace svff
