#include "svff/records.hpp"

#include <chrono>
#include <ctime>
#include <fstream>

#include "svff/error.hpp"

namespace svff {

void to_json(nlohmann::json& j, const AttachmentRecord& r) {
  j = nlohmann::json{{"type", r.device_type},     {"driver", r.driver},
                     {"address", r.vf.to_string()}, {"pf", r.pf.to_string()},
                     {"vm", r.vm},                  {"guest_id", r.guest_id},
                     {"guest_slot", r.guest_slot},  {"created_at", r.created_at}};
}

void from_json(const nlohmann::json& j, AttachmentRecord& r) {
  r.device_type = j.value("type", std::string("hostdev"));
  r.driver = j.value("driver", std::string("vfio"));
  r.vf = PciAddress::parse(j.at("address").get<std::string>());
  r.pf = PciAddress::parse(j.at("pf").get<std::string>());
  r.vm = j.at("vm").get<std::string>();
  r.guest_id = j.at("guest_id").get<std::string>();
  r.guest_slot = j.value("guest_slot", std::string());
  r.created_at = j.value("created_at", std::string());
}

std::optional<AttachmentRecord> MemoryRecordStore::get(PciAddress vf) const {
  auto it = records_.find(vf);
  if (it == records_.end()) return std::nullopt;
  return it->second;
}

void MemoryRecordStore::put(const AttachmentRecord& record) {
  if (!records_.emplace(record.vf, record).second)
    throw Error(Errc::RecordExists, "a record for " + record.vf.to_string() + " exists");
}

void MemoryRecordStore::erase(PciAddress vf) {
  if (records_.erase(vf) == 0)
    throw Error(Errc::RecordMissing, "no record for " + vf.to_string());
}

std::vector<AttachmentRecord> MemoryRecordStore::list() const {
  std::vector<AttachmentRecord> out;
  for (const auto& [addr, r] : records_) out.push_back(r);
  return out;
}

DirectoryRecordStore::DirectoryRecordStore(std::filesystem::path dir)
    : dir_(std::move(dir)) {
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  if (ec) throw Error(Errc::StorageError, "cannot create " + dir_.string() + ": " + ec.message());
}

std::filesystem::path DirectoryRecordStore::path_for(PciAddress vf) const {
  std::string name = vf.to_string();
  for (auto& c : name)
    if (c == ':') c = '-';
  return dir_ / (name + ".json");
}

std::optional<AttachmentRecord> DirectoryRecordStore::get(PciAddress vf) const {
  std::ifstream in(path_for(vf));
  if (!in) return std::nullopt;
  try {
    return nlohmann::json::parse(in).get<AttachmentRecord>();
  } catch (const std::exception& e) {
    throw Error(Errc::StorageError, path_for(vf).string() + ": " + e.what());
  }
}

void DirectoryRecordStore::put(const AttachmentRecord& record) {
  auto path = path_for(record.vf);
  if (std::filesystem::exists(path))
    throw Error(Errc::RecordExists, "a record for " + record.vf.to_string() + " exists");
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp);
    out << nlohmann::json(record).dump(2) << '\n';
    if (!out) throw Error(Errc::StorageError, "cannot write " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(Errc::StorageError, "cannot write " + path.string() + ": " + ec.message());
}

void DirectoryRecordStore::erase(PciAddress vf) {
  std::error_code ec;
  if (!std::filesystem::remove(path_for(vf), ec))
    throw Error(Errc::RecordMissing, "no record for " + vf.to_string());
}

std::vector<AttachmentRecord> DirectoryRecordStore::list() const {
  std::map<PciAddress, AttachmentRecord> sorted;
  for (const auto& entry : std::filesystem::directory_iterator(dir_)) {
    if (entry.path().extension() != ".json") continue;
    std::ifstream in(entry.path());
    try {
      auto r = nlohmann::json::parse(in).get<AttachmentRecord>();
      sorted.emplace(r.vf, std::move(r));
    } catch (const std::exception& e) {
      throw Error(Errc::StorageError, entry.path().string() + ": " + e.what());
    }
  }
  std::vector<AttachmentRecord> out;
  for (auto& [addr, r] : sorted) out.push_back(std::move(r));
  return out;
}

std::string utc_now_iso8601() {
  auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace svff
