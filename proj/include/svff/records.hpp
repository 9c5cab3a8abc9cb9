#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "svff/pci_address.hpp"

namespace svff {

// Persisted VF <-> VM association, the libvirt hostdev XML analog.
struct AttachmentRecord {
  PciAddress vf;
  PciAddress pf;
  std::string vm;
  std::string guest_id;
  std::string guest_slot;
  std::string created_at;  // ISO-8601 UTC
  std::string device_type = "hostdev";
  std::string driver = "vfio";

  // Same binding, ignoring when it was written.
  bool same_binding(const AttachmentRecord& o) const {
    return vf == o.vf && pf == o.pf && vm == o.vm && guest_id == o.guest_id &&
           guest_slot == o.guest_slot && device_type == o.device_type &&
           driver == o.driver;
  }

  friend bool operator==(const AttachmentRecord&, const AttachmentRecord&) = default;
};

void to_json(nlohmann::json& j, const AttachmentRecord& r);
void from_json(const nlohmann::json& j, AttachmentRecord& r);

// One record per VF. Listing is in VF address order.
class RecordStore {
 public:
  virtual ~RecordStore() = default;

  virtual std::optional<AttachmentRecord> get(PciAddress vf) const = 0;
  // Throws Error(RecordExists).
  virtual void put(const AttachmentRecord& record) = 0;
  // Throws Error(RecordMissing).
  virtual void erase(PciAddress vf) = 0;
  virtual std::vector<AttachmentRecord> list() const = 0;
};

class MemoryRecordStore final : public RecordStore {
 public:
  std::optional<AttachmentRecord> get(PciAddress vf) const override;
  void put(const AttachmentRecord& record) override;
  void erase(PciAddress vf) override;
  std::vector<AttachmentRecord> list() const override;

 private:
  std::map<PciAddress, AttachmentRecord> records_;
};

// A directory holding one <address>.json document per VF.
class DirectoryRecordStore final : public RecordStore {
 public:
  explicit DirectoryRecordStore(std::filesystem::path dir);

  std::optional<AttachmentRecord> get(PciAddress vf) const override;
  void put(const AttachmentRecord& record) override;
  void erase(PciAddress vf) override;
  std::vector<AttachmentRecord> list() const override;

  std::filesystem::path path_for(PciAddress vf) const;

 private:
  std::filesystem::path dir_;
};

// Timestamp source for created_at.
using RecordClock = std::function<std::string()>;
std::string utc_now_iso8601();

}  // namespace svff
