#include "svff/orchestrator.hpp"

#include <fstream>
#include <set>

namespace svff {

using qmp::Json;

void to_json(nlohmann::json& j, const PlanConfig& p) {
  nlohmann::json assignments = nlohmann::json::array();
  for (const auto& a : p.assignments) assignments.push_back({{"vm", a.vm}, {"count", a.count}});
  j = nlohmann::json{{"pf", p.pf.to_string()},
                     {"num_vfs", p.num_vfs},
                     {"queue_count", p.queue_count},
                     {"assignments", assignments},
                     {"pause_mode", p.pause_mode}};
  if (p.flash) j["flash"] = *p.flash;
}

void from_json(const nlohmann::json& j, PlanConfig& p) {
  try {
    PlanConfig out;
    if (j.contains("pf")) out.pf = PciAddress::parse(j.at("pf").get<std::string>());
    out.num_vfs = j.at("num_vfs").get<unsigned>();
    out.queue_count = j.value("queue_count", out.queue_count);
    if (j.contains("assignments")) {
      for (const auto& a : j.at("assignments")) {
        if (a.is_string()) {
          out.assignments.push_back({a.get<std::string>(), 1});
        } else {
          out.assignments.push_back({a.at("vm").get<std::string>(), a.value("count", 1u)});
        }
      }
    }
    out.pause_mode = j.value("pause_mode", true);
    if (j.contains("flash") && !j.at("flash").is_null())
      out.flash = j.at("flash").get<std::string>();
    p = std::move(out);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::PlanInvalid, e.what());
  } catch (const Error& e) {
    throw Error(Errc::PlanInvalid, e.detail());
  }
}

PlanConfig load_plan_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::PlanInvalid, "cannot open " + path);
  try {
    return nlohmann::json::parse(in).get<PlanConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::PlanInvalid, path + ": " + e.what());
  }
}

std::map<unsigned, std::string> distribute(const std::vector<Assignment>& assignments,
                                           unsigned num_vfs) {
  std::set<std::string> names;
  unsigned total = 0;
  for (const auto& a : assignments) {
    if (a.vm.empty()) throw Error(Errc::PlanInvalid, "assignment without a VM name");
    if (!names.insert(a.vm).second)
      throw Error(Errc::PlanInvalid, "VM " + a.vm + " assigned twice");
    total += a.count;
  }
  if (total > num_vfs)
    throw Error(Errc::PlanInvalid, std::to_string(total) + " VFs assigned but only " +
                                       std::to_string(num_vfs) + " requested");
  std::map<unsigned, std::string> out;
  std::vector<unsigned> left;
  for (const auto& a : assignments) left.push_back(a.count);
  unsigned next = 0;
  while (next < total) {
    for (std::size_t i = 0; i < assignments.size(); ++i) {
      if (left[i] == 0) continue;
      --left[i];
      out[next++] = assignments[i].vm;
    }
  }
  return out;
}

std::string_view phase_name(Phase p) noexcept {
  switch (p) {
    case Phase::Detach: return "detach";
    case Phase::RemovePf: return "remove-pf";
    case Phase::Flash: return "flash";
    case Phase::Rescan: return "rescan";
    case Phase::Configure: return "configure";
    case Phase::Attach: return "attach";
    case Phase::RemoveVfs: return "remove-vf";
    case Phase::ChangeNumVfs: return "change-numvf";
    case Phase::AddVfs: return "add-vf";
  }
  return "unknown";
}

void to_json(nlohmann::json& j, const OperationReport& r) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : r.steps) {
    nlohmann::json step{{"phase", phase_name(s.phase)},
                        {"action", s.action},
                        {"target", s.target},
                        {"ok", s.ok}};
    if (!s.ok) step["error"] = s.error;
    if (!s.detail.empty()) step["detail"] = s.detail;
    steps.push_back(std::move(step));
  }
  j = nlohmann::json{{"operation", r.operation}, {"ok", r.ok}, {"steps", steps}};
  if (r.error) {
    j["error"] = errc_name(*r.error);
    j["error_detail"] = r.error_detail;
  }
  if (!r.vanished.empty()) j["vanished"] = r.vanished;
}

std::string guest_id_for(PciAddress vf) {
  std::string s = vf.to_string();
  for (auto& c : s)
    if (c == ':') c = '-';
  return "hostdev-" + s;
}

std::string guest_slot_for(PciAddress vf) {
  return "pcie-root-port." + std::to_string(vf.routing_id() - Bus::kFirstRoutingId);
}

// Collects step outcomes for one init/reconf execution.
class Orchestrator::Run {
 public:
  Run(const OrchestratorHooks& hooks, std::string operation) : hooks_(hooks) {
    report.operation = std::move(operation);
  }

  template <class F>
  void step(Phase phase, std::string action, std::string target, F&& fn) {
    StepOutcome s{phase, std::move(action), std::move(target), true, {}, {}};
    try {
      fn();
    } catch (const Error& e) {
      s.ok = false;
      s.error = std::string(errc_name(e.code()));
      s.detail = e.detail();
      record(std::move(s));
      throw;
    }
    record(std::move(s));
  }

  void note(Phase phase, std::string action, std::string target, std::string detail) {
    record(StepOutcome{phase, std::move(action), std::move(target), true, {}, std::move(detail)});
  }

  void end(Phase phase) {
    if (hooks_.on_phase_end) hooks_.on_phase_end(phase);
  }

  void fail(const Error& e) {
    report.ok = false;
    report.error = e.code();
    report.error_detail = e.detail();
  }

  OperationReport report;

 private:
  void record(StepOutcome s) {
    report.steps.push_back(std::move(s));
    if (hooks_.on_step) hooks_.on_step(report.steps.back());
  }

  const OrchestratorHooks& hooks_;
};

Orchestrator::Orchestrator(Host& host, RecordStore& records, qmp::Channel& qmp,
                           RecordClock clock)
    : host_(&host), records_(&records), qmp_(&qmp), clock_(std::move(clock)) {}

std::vector<AttachmentRecord> Orchestrator::records_of(PciAddress pf) const {
  std::vector<AttachmentRecord> out;
  for (auto& r : records_->list())
    if (r.pf == pf) out.push_back(std::move(r));
  return out;
}

void Orchestrator::check_plan(PciAddress pf, unsigned num_vfs,
                              const std::vector<Assignment>& assignments,
                              const DeviceProfile& profile) const {
  auto rid = pf.routing_id();
  if (pf.domain != 0 || rid < Bus::kFirstRoutingId ||
      rid >= Bus::kFirstRoutingId + profile.num_pfs)
    throw Error(Errc::PlanInvalid, pf.to_string() + " is not a PF of the device");
  if (num_vfs > profile.max_vfs_per_pf)
    throw Error(Errc::PlanInvalid, std::to_string(num_vfs) + " VFs exceed the capability of " +
                                       std::to_string(profile.max_vfs_per_pf));
  distribute(assignments, num_vfs);
  for (const auto& a : assignments)
    if (!host_->vmm().has_vm(a.vm)) throw Error(Errc::PlanInvalid, "VM " + a.vm + " is not defined");
}

void Orchestrator::ensure_vfio_id() {
  const auto& p = host_->bus().profile();
  if (!host_->registry().accepts(p.vendor_id, p.vf_device_id))
    host_->drivers().register_vfio_id(p.vendor_id, p.vf_device_id);
}

OperationReport Orchestrator::init(const PlanConfig& plan) {
  std::lock_guard lock(mutex_);
  std::optional<DeviceProfile> flash_profile;
  if (plan.flash) {
    try {
      flash_profile = *plan.flash == "default" ? DeviceProfile::default_profile()
                                               : load_profile_file(*plan.flash);
    } catch (const Error& e) {
      throw Error(Errc::PlanInvalid, "flash profile: " + e.detail());
    }
  }
  if (plan.queue_count < 1 || plan.queue_count > kMaxQueues)
    throw Error(Errc::PlanInvalid, "queue_count must be in 1..2048");
  check_plan(plan.pf, plan.num_vfs, plan.assignments,
             flash_profile ? *flash_profile : host_->bus().profile());
  auto target = distribute(plan.assignments, plan.num_vfs);

  Run run(hooks_, "init");
  try {
    // A flash rewrites the whole device, so every PF has to go.
    std::vector<PciAddress> pfs;
    if (flash_profile)
      pfs = host_->bus().pf_addresses();
    else
      pfs = {plan.pf};

    for (auto pf : pfs)
      for (const auto& rec : records_of(pf))
        run.step(Phase::Detach, "detach", rec.vf.to_string(), [&] { detach_locked(rec.vf); });
    run.end(Phase::Detach);

    for (auto pf : pfs) {
      if (!host_->bus().is_present(pf)) {
        run.note(Phase::RemovePf, "remove", pf.to_string(), "not on the bus");
        continue;
      }
      run.step(Phase::RemovePf, "remove", pf.to_string(),
               [&] { host_->drivers().remove_device(pf); });
    }
    run.end(Phase::RemovePf);

    if (flash_profile) {
      run.step(Phase::Flash, "flash", *plan.flash, [&] { host_->bus().flash(*flash_profile); });
      run.end(Phase::Flash);
    }

    run.step(Phase::Rescan, "rescan", "bus", [&] { host_->drivers().rescan_bus(); });
    run.step(Phase::Rescan, "validate", plan.pf.to_string(),
             [&] { host_->drivers().validate(plan.pf, Driver::QdmaPf); });
    run.end(Phase::Rescan);

    run.step(Phase::Configure, "set-queues", plan.pf.to_string(),
             [&] { host_->bus().set_queue_count(plan.pf, plan.queue_count); });
    if (host_->bus().present_node(plan.pf).num_vfs > 0)
      run.step(Phase::Configure, "set-numvfs 0", plan.pf.to_string(),
               [&] { host_->bus().set_num_vfs(plan.pf, 0); });
    if (plan.num_vfs > 0)
      run.step(Phase::Configure, "set-numvfs " + std::to_string(plan.num_vfs),
               plan.pf.to_string(), [&] { host_->bus().set_num_vfs(plan.pf, plan.num_vfs); });
    run.end(Phase::Configure);

    if (!target.empty())
      run.step(Phase::Attach, "register-vfio-id", "vfio-pci", [&] { ensure_vfio_id(); });
    for (const auto& [index, vm] : target) {
      PciAddress vf = host_->bus().vf_address(plan.pf, index);
      run.step(Phase::Attach, "bind-vfio", vf.to_string(),
               [&] { host_->drivers().bind_vfio(vf); });
      run.step(Phase::Attach, "attach " + vm, vf.to_string(), [&] { attach_locked(vf, vm); });
    }
    run.end(Phase::Attach);
  } catch (const Error& e) {
    run.fail(e);
  }
  return run.report;
}

OperationReport Orchestrator::reconf(PciAddress pf, unsigned new_num_vfs,
                                     const std::vector<Assignment>& assignments,
                                     bool pause_mode) {
  std::lock_guard lock(mutex_);
  check_plan(pf, new_num_vfs, assignments, host_->bus().profile());
  auto target = distribute(assignments, new_num_vfs);
  Bus& bus = host_->bus();
  Vmm& vmm = host_->vmm();

  auto vf_index = [&](PciAddress vf) -> std::optional<unsigned> {
    auto base = bus.vf_address(pf, 0).routing_id();
    auto rid = vf.routing_id();
    if (vf.domain != 0 || rid < base || rid - base >= bus.profile().max_vfs_per_pf)
      return std::nullopt;
    return rid - base;
  };
  auto keeps = [&](const AttachmentRecord& rec) {
    auto idx = vf_index(rec.vf);
    if (!idx || *idx >= new_num_vfs) return false;
    auto it = target.find(*idx);
    return it != target.end() && it->second == rec.vm;
  };
  auto pause_args = [](const AttachmentRecord& rec, bool paused) {
    return Json{{"id", rec.guest_id}, {"paused", paused}, {"vm", rec.vm}};
  };

  Run run(hooks_, "reconf");
  try {
    run.step(Phase::Rescan, "rescan", "bus", [&] { host_->drivers().rescan_bus(); });
    run.step(Phase::Rescan, "validate", pf.to_string(),
             [&] { host_->drivers().validate(pf, Driver::QdmaPf); });
    run.end(Phase::Rescan);

    std::set<unsigned> resume;  // VF indices paused in place
    for (const auto& rec : records_of(pf)) {
      std::string target_name = rec.vf.to_string();
      bool live = vmm.has_vm(rec.vm) && vmm.vm(rec.vm).live;
      bool same = keeps(rec);
      if (!live) {
        // Nothing realized; the record is picked up when the VM starts.
        if (same) continue;
        run.step(Phase::RemoveVfs, "drop-record", target_name, [&] { records_->erase(rec.vf); });
        continue;
      }
      const GuestDevice& dev = vmm.device(rec.vm, rec.guest_id);
      bool paused = dev.state == GuestDeviceState::Paused;
      // Devices that cannot pause are detached and re-added instead.
      if (pause_mode && same && (paused || dev.pausable)) {
        if (!paused)
          run.step(Phase::RemoveVfs, "device_pause", target_name,
                   [&] { qmp_->execute("device_pause", pause_args(rec, true)); });
        const DeviceNode* node = bus.find(rec.vf);
        if (node && node->present_on_bus && node->bound_driver != Driver::None)
          run.step(Phase::RemoveVfs, "unbind", target_name,
                   [&] { host_->drivers().unbind(rec.vf); });
        resume.insert(*vf_index(rec.vf));
        continue;
      }
      if (paused) {
        const DeviceNode* node = bus.find(rec.vf);
        if (!node || !node->present_on_bus || node->bound_driver != Driver::Vfio) {
          run.report.vanished.push_back(rec.vm + "/" + rec.guest_id);
          run.note(Phase::RemoveVfs, "left-paused", target_name, "PausedVfVanished");
          continue;
        }
        run.step(Phase::RemoveVfs, "device_pause", target_name,
                 [&] { qmp_->execute("device_pause", pause_args(rec, false)); });
      }
      run.step(Phase::RemoveVfs, "device_del", target_name, [&] {
        qmp_->execute("device_del", Json{{"id", rec.guest_id}, {"vm", rec.vm}});
      });
      run.step(Phase::RemoveVfs, "drop-record", target_name, [&] { records_->erase(rec.vf); });
    }
    run.end(Phase::RemoveVfs);

    if (bus.present_node(pf).num_vfs > 0)
      run.step(Phase::ChangeNumVfs, "set-numvfs 0", pf.to_string(),
               [&] { bus.set_num_vfs(pf, 0); });
    if (new_num_vfs > 0)
      run.step(Phase::ChangeNumVfs, "set-numvfs " + std::to_string(new_num_vfs), pf.to_string(),
               [&] { bus.set_num_vfs(pf, new_num_vfs); });
    run.end(Phase::ChangeNumVfs);

    if (!target.empty())
      run.step(Phase::AddVfs, "register-vfio-id", "vfio-pci", [&] { ensure_vfio_id(); });
    for (const auto& [index, vm] : target) {
      PciAddress vf = bus.vf_address(pf, index);
      run.step(Phase::AddVfs, "bind-vfio", vf.to_string(),
               [&] { host_->drivers().bind_vfio(vf); });
      if (resume.contains(index)) {
        auto rec = *records_->get(vf);
        run.step(Phase::AddVfs, "device_pause", vf.to_string(),
                 [&] { qmp_->execute("device_pause", pause_args(rec, false)); });
      } else if (!records_->get(vf)) {
        run.step(Phase::AddVfs, "attach " + vm, vf.to_string(), [&] { attach_locked(vf, vm); });
      }
    }
    run.end(Phase::AddVfs);

    if (!run.report.vanished.empty()) {
      run.fail(Error(Errc::PausedVfVanished,
                     std::to_string(run.report.vanished.size()) +
                         " paused device(s) lost their VF and stay paused"));
    }
  } catch (const Error& e) {
    run.fail(e);
  }
  return run.report;
}

void Orchestrator::attach_vf(PciAddress vf, const std::string& vm) {
  std::lock_guard lock(mutex_);
  attach_locked(vf, vm);
}

void Orchestrator::detach_vf(PciAddress vf) {
  std::lock_guard lock(mutex_);
  detach_locked(vf);
}

void Orchestrator::attach_locked(PciAddress vf, const std::string& vm) {
  if (records_->get(vf))
    throw Error(Errc::RecordExists, vf.to_string() + " already has an attachment record");
  const VmDomain& domain = host_->vmm().vm(vm);
  const DeviceNode& node = host_->bus().present_node(vf);
  if (node.bound_driver != Driver::Vfio)
    throw Error(Errc::NotBoundToVfio, vf.to_string() + " is bound to " +
                                          std::string(driver_name(node.bound_driver)));
  AttachmentRecord rec;
  rec.vf = vf;
  rec.pf = node.parent.value_or(vf);
  rec.vm = vm;
  rec.guest_id = guest_id_for(vf);
  rec.guest_slot = guest_slot_for(vf);
  rec.created_at = clock_ ? clock_() : std::string();
  records_->put(rec);
  if (!domain.live) return;
  try {
    qmp_->execute("device_add", Json{{"driver", "vfio-pci"},
                                     {"host", vf.to_string()},
                                     {"id", rec.guest_id},
                                     {"vm", vm}});
  } catch (...) {
    records_->erase(vf);
    throw;
  }
}

void Orchestrator::detach_locked(PciAddress vf) {
  auto rec = records_->get(vf);
  if (!rec) throw Error(Errc::RecordMissing, "no attachment record for " + vf.to_string());
  Vmm& vmm = host_->vmm();
  if (vmm.has_vm(rec->vm) && vmm.vm(rec->vm).devices.contains(rec->guest_id)) {
    const GuestDevice& dev = vmm.device(rec->vm, rec->guest_id);
    if (dev.state == GuestDeviceState::Paused) {
      const DeviceNode* node = host_->bus().find(vf);
      if (!node || !node->present_on_bus || node->bound_driver != Driver::Vfio)
        throw Error(Errc::PausedVfVanished,
                    rec->guest_id + " is paused and " + vf.to_string() + " is gone");
      qmp_->execute("device_pause", Json{{"id", rec->guest_id}, {"paused", false}, {"vm", rec->vm}});
    }
    qmp_->execute("device_del", Json{{"id", rec->guest_id}, {"vm", rec->vm}});
  }
  records_->erase(vf);
}

void Orchestrator::start_vm(const std::string& vm) {
  std::lock_guard lock(mutex_);
  Vmm& vmm = host_->vmm();
  if (vmm.vm(vm).live) return;
  vmm.start_vm(vm);
  try {
    for (const auto& rec : records_->list()) {
      if (rec.vm != vm) continue;
      qmp_->execute("device_add", Json{{"driver", "vfio-pci"},
                                       {"host", rec.vf.to_string()},
                                       {"id", rec.guest_id},
                                       {"vm", vm}});
    }
  } catch (...) {
    vmm.stop_vm(vm);
    throw;
  }
}

void Orchestrator::stop_vm(const std::string& vm) {
  std::lock_guard lock(mutex_);
  host_->vmm().stop_vm(vm);
}

}  // namespace svff
