#pragma once

#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "svff/host.hpp"
#include "svff/qmp.hpp"
#include "svff/records.hpp"

namespace svff {

struct Assignment {
  std::string vm;
  unsigned count = 1;

  friend bool operator==(const Assignment&, const Assignment&) = default;
};

struct PlanConfig {
  PciAddress pf = PciAddress{0, 3, 0, 0};
  unsigned num_vfs = 0;
  unsigned queue_count = 512;
  std::vector<Assignment> assignments;
  bool pause_mode = true;
  // "default" or a path to a profile JSON document.
  std::optional<std::string> flash;
};

void to_json(nlohmann::json& j, const PlanConfig& p);
void from_json(const nlohmann::json& j, PlanConfig& p);
PlanConfig load_plan_file(const std::string& path);

// VF index -> VM, dealing VMs round-robin until each count is used up.
// Throws Error(PlanInvalid) if the counts exceed num_vfs or names repeat.
std::map<unsigned, std::string> distribute(const std::vector<Assignment>& assignments,
                                           unsigned num_vfs);

enum class Phase {
  Detach,
  RemovePf,
  Flash,
  Rescan,
  Configure,
  Attach,
  RemoveVfs,
  ChangeNumVfs,
  AddVfs,
};

std::string_view phase_name(Phase p) noexcept;

struct StepOutcome {
  Phase phase = Phase::Rescan;
  std::string action;
  std::string target;
  bool ok = true;
  std::string error;  // Errc name when !ok
  std::string detail;
};

struct OperationReport {
  std::string operation;
  bool ok = true;
  std::vector<StepOutcome> steps;
  std::optional<Errc> error;
  std::string error_detail;
  // Paused guest devices whose VF no longer exists (left paused).
  std::vector<std::string> vanished;
};

void to_json(nlohmann::json& j, const OperationReport& r);

struct OrchestratorHooks {
  std::function<void(const StepOutcome&)> on_step;
  std::function<void(Phase)> on_phase_end;
};

// Deterministic names the orchestrator gives a VF inside a guest.
std::string guest_id_for(PciAddress vf);
std::string guest_slot_for(PciAddress vf);

// init / reconf automations plus record-driven attach and detach. Guest-side
// device operations go through the QMP channel; host-side driver work goes
// through the driver manager. All operations are mutually exclusive.
class Orchestrator {
 public:
  Orchestrator(Host& host, RecordStore& records, qmp::Channel& qmp,
               RecordClock clock = utc_now_iso8601);

  void set_hooks(OrchestratorHooks hooks) { hooks_ = std::move(hooks); }

  // Throws Error(PlanInvalid) before touching anything; sub-operation
  // failures stop the run and are reported (no rollback).
  OperationReport init(const PlanConfig& plan);
  OperationReport reconf(PciAddress pf, unsigned new_num_vfs,
                         const std::vector<Assignment>& assignments, bool pause_mode);

  // Throws RecordExists, UnknownVm, NotBoundToVfio and propagated errors.
  void attach_vf(PciAddress vf, const std::string& vm);
  // Throws RecordMissing, PausedVfVanished and propagated errors.
  void detach_vf(PciAddress vf);

  // Starts a VM and realizes every recorded device; on failure the VM is
  // stopped again and the error propagates.
  void start_vm(const std::string& vm);
  void stop_vm(const std::string& vm);

 private:
  class Run;

  void attach_locked(PciAddress vf, const std::string& vm);
  void detach_locked(PciAddress vf);
  void ensure_vfio_id();
  std::vector<AttachmentRecord> records_of(PciAddress pf) const;
  void check_plan(PciAddress pf, unsigned num_vfs, const std::vector<Assignment>& assignments,
                  const DeviceProfile& profile) const;

  Host* host_;
  RecordStore* records_;
  qmp::Channel* qmp_;
  RecordClock clock_;
  OrchestratorHooks hooks_;
  std::mutex mutex_;
};

}  // namespace svff
