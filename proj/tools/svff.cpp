#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "svff/bench.hpp"
#include "svff/error.hpp"
#include "svff/orchestrator.hpp"
#include "svff/qmp.hpp"
#include "svff/qmp_server.hpp"
#include "svff/records.hpp"
#include "svff/state.hpp"

namespace fs = std::filesystem;
using namespace svff;

namespace {

constexpr int kExitError = 1;
constexpr int kExitPlanInvalid = 2;
constexpr int kExitSubOperation = 3;

// Host state, record store and QMP endpoint for one CLI invocation.
struct Session {
  explicit Session(const fs::path& dir)
      : system_file(dir / "system.json"),
        host(fs::exists(system_file) ? load_host(system_file) : Host()),
        records(dir / "records"),
        dispatcher(host.vmm()),
        channel(dispatcher),
        orchestrator(host, records, channel) {}

  void save() const { save_host(host, system_file); }

  fs::path system_file;
  Host host;
  DirectoryRecordStore records;
  qmp::Dispatcher dispatcher;
  qmp::InProcessChannel channel;
  Orchestrator orchestrator;
};

int print_report(const OperationReport& report) {
  std::cout << nlohmann::json(report).dump(2) << "\n";
  return report.ok ? 0 : kExitSubOperation;
}

std::vector<Assignment> parse_assignments(const std::vector<std::string>& specs) {
  std::vector<Assignment> out;
  for (const auto& s : specs) {
    auto eq = s.find('=');
    Assignment a;
    a.vm = s.substr(0, eq);
    if (eq != std::string::npos) {
      try {
        std::size_t used = 0;
        long count = std::stol(s.substr(eq + 1), &used);
        if (used != s.size() - eq - 1 || count < 0) throw std::invalid_argument(s);
        a.count = static_cast<unsigned>(count);
      } catch (const std::exception&) {
        throw Error(Errc::PlanInvalid, "bad assignment '" + s + "', expected VM=COUNT");
      }
    }
    out.push_back(a);
  }
  return out;
}

std::vector<unsigned> parse_counts(const std::string& csv) {
  std::vector<unsigned> out;
  std::size_t pos = 0;
  while (pos <= csv.size()) {
    auto comma = csv.find(',', pos);
    std::string item = csv.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    try {
      std::size_t used = 0;
      long v = std::stol(item, &used);
      if (used != item.size() || v <= 0) throw std::invalid_argument(item);
      out.push_back(static_cast<unsigned>(v));
    } catch (const std::exception&) {
      throw Error(Errc::InvalidArgument, "bad VF count '" + item + "'");
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

void print_status(const Session& s, bool as_json) {
  const Host& host = s.host;
  if (as_json) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& [addr, n] : host.bus().nodes()) {
      nlohmann::json node{{"address", addr.to_string()},
                          {"kind", n.is_pf() ? "pf" : "vf"},
                          {"present", n.present_on_bus},
                          {"driver", driver_name(n.bound_driver)},
                          {"vfio_open", n.vfio_open}};
      if (n.is_pf()) {
        node["num_vfs"] = n.num_vfs;
        node["queue_count"] = n.queue_count;
      }
      nodes.push_back(node);
    }
    nlohmann::json vms = nlohmann::json::array();
    for (const auto& [name, vm] : host.vmm().vms()) {
      nlohmann::json devices = nlohmann::json::array();
      for (const auto& e : host.vmm().guest_view(name))
        devices.push_back({{"id", e.guest_id},
                           {"host", e.host_addr.to_string()},
                           {"status", e.status == GuestStatus::Paused ? "paused" : "attached"}});
      vms.push_back({{"name", name}, {"live", vm.live}, {"devices", devices}});
    }
    nlohmann::json records = nlohmann::json::array();
    for (const auto& r : s.records.list()) records.push_back(r);
    std::cout << nlohmann::json{{"nodes", nodes}, {"vms", vms}, {"records", records}}.dump(2)
              << "\n";
    return;
  }

  const auto& p = host.bus().profile();
  std::printf("device %04x:%04x  %u PF  max %u VFs/PF\n\n", p.vendor_id, p.pf_device_id,
              p.num_pfs, p.max_vfs_per_pf);
  std::printf("%-14s %-4s %-8s %-9s %-5s %s\n", "ADDRESS", "KIND", "PRESENT", "DRIVER", "OPEN",
              "VFS");
  for (const auto& [addr, n] : host.bus().nodes()) {
    std::string vfs = n.is_pf() ? std::to_string(n.num_vfs) : "";
    std::printf("%-14s %-4s %-8s %-9s %-5s %s\n", addr.to_string().c_str(),
                n.is_pf() ? "pf" : "vf", n.present_on_bus ? "yes" : "no",
                std::string(driver_name(n.bound_driver)).c_str(), n.vfio_open ? "yes" : "no",
                vfs.c_str());
  }
  std::printf("\n");
  if (host.vmm().vms().empty()) std::printf("no VMs defined\n");
  for (const auto& [name, vm] : host.vmm().vms()) {
    std::printf("vm %s (%s)\n", name.c_str(), vm.live ? "running" : "stopped");
    for (const auto& e : host.vmm().guest_view(name))
      std::printf("  %-24s %s  %s\n", e.guest_id.c_str(), e.host_addr.to_string().c_str(),
                  e.status == GuestStatus::Paused ? "paused" : "attached");
  }
  auto records = s.records.list();
  std::printf("\n%zu attachment record(s)\n", records.size());
  for (const auto& r : records)
    std::printf("  %s -> %s as %s (%s)\n", r.vf.to_string().c_str(), r.vm.c_str(),
                r.guest_id.c_str(), r.guest_slot.c_str());
}

int serve_socket(Session& s, const std::string& path) {
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  qmp::UnixServer server(s.dispatcher, path);
  std::mutex save_mutex;
  server.set_after_command([&] {
    std::lock_guard lock(save_mutex);
    s.save();
  });
  std::fprintf(stderr, "serving QMP on %s\n", path.c_str());
  int sig = 0;
  sigwait(&signals, &sig);
  server.stop();
  server.wait();
  s.save();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simulated SR-IOV VF orchestration with VFIO pause/unpause"};
  app.require_subcommand(1);
  std::string state_dir = "svff-state";
  app.add_option("--state-dir", state_dir, "Directory holding system.json and records/")
      ->capture_default_str();

  std::string plan_file;
  auto* init = app.add_subcommand("init", "Reset a PF and attach its VFs from a plan file");
  init->add_option("--config", plan_file, "Plan JSON")->required();

  std::string pf_text = "0000:03:00.0";
  unsigned num_vfs = 0;
  bool pause = true;
  std::vector<std::string> assign;
  auto* reconf = app.add_subcommand("reconf", "Change the VF count of a PF");
  reconf->add_option("--pf", pf_text, "PF address")->capture_default_str();
  reconf->add_option("--num-vfs", num_vfs, "New VF count")->required();
  reconf->add_flag("--pause,!--no-pause", pause, "Pause surviving VFs instead of detaching");
  reconf->add_option("--assign", assign, "VM=COUNT, dealt round-robin");

  std::string vf_text, vm_name;
  auto* attach = app.add_subcommand("attach", "Attach a vfio-bound VF to a VM");
  attach->add_option("vf", vf_text)->required();
  attach->add_option("vm", vm_name)->required();
  auto* detach = app.add_subcommand("detach", "Detach a VF from its VM");
  detach->add_option("vf", vf_text)->required();

  bool status_json = false;
  auto* status = app.add_subcommand("status", "Show bus, VMs and attachment records");
  status->add_flag("--json", status_json);

  std::string socket_path;
  bool use_stdio = false;
  auto* serve = app.add_subcommand("serve", "Serve the QMP protocol for the VMM");
  auto* sock_opt = serve->add_option("--qmp-socket", socket_path, "Unix socket path");
  auto* stdio_opt = serve->add_flag("--stdio", use_stdio, "Serve stdin/stdout");
  sock_opt->excludes(stdio_opt);
  serve->require_option(1);

  auto* vm = app.add_subcommand("vm", "Manage VMs");
  vm->require_subcommand(1);
  auto* vm_define = vm->add_subcommand("define", "Define a stopped VM");
  auto* vm_start = vm->add_subcommand("start", "Start a VM and realize its recorded devices");
  auto* vm_stop = vm->add_subcommand("stop", "Stop a VM");
  for (auto* sub : {vm_define, vm_start, vm_stop}) sub->add_option("name", vm_name)->required();

  unsigned runs = 100;
  std::string counts = "1,4,10";
  std::uint64_t seed = 0;
  std::string format = "table";
  std::string calibration_file;
  auto* bench = app.add_subcommand("bench", "Simulated detach/attach vs pause/unpause experiment");
  bench->add_option("--runs", runs)->capture_default_str();
  bench->add_option("--vf-counts", counts)->capture_default_str();
  bench->add_option("--seed", seed)->capture_default_str();
  bench->add_option("--format", format, "table, csv or json")->capture_default_str();
  bench->add_option("--calibration", calibration_file, "Calibration JSON");

  CLI11_PARSE(app, argc, argv);

  try {
    if (bench->parsed()) {
      auto calibration = calibration_file.empty() ? bench::default_calibration()
                                                  : bench::load_calibration_file(calibration_file);
      auto model = bench::build_model(calibration);
      auto report = bench::run_experiment(model, runs, parse_counts(counts), seed);
      std::cout << bench::render_report(report, format);
      return 0;
    }

    fs::create_directories(state_dir);
    Session s(state_dir);

    if (init->parsed()) {
      auto report = s.orchestrator.init(load_plan_file(plan_file));
      s.save();
      return print_report(report);
    }
    if (reconf->parsed()) {
      auto report = s.orchestrator.reconf(PciAddress::parse(pf_text), num_vfs,
                                          parse_assignments(assign), pause);
      s.save();
      return print_report(report);
    }
    if (attach->parsed()) {
      s.orchestrator.attach_vf(PciAddress::parse(vf_text), vm_name);
      s.save();
      return 0;
    }
    if (detach->parsed()) {
      s.orchestrator.detach_vf(PciAddress::parse(vf_text));
      s.save();
      return 0;
    }
    if (status->parsed()) {
      print_status(s, status_json);
      return 0;
    }
    if (serve->parsed()) {
      if (use_stdio) {
        qmp::serve_stream(s.dispatcher, std::cin, std::cout);
        s.save();
        return 0;
      }
      return serve_socket(s, socket_path);
    }
    if (vm->parsed()) {
      if (vm_define->parsed()) s.host.vmm().define_vm(vm_name);
      if (vm_start->parsed()) s.orchestrator.start_vm(vm_name);
      if (vm_stop->parsed()) s.orchestrator.stop_vm(vm_name);
      s.save();
      return 0;
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "svff: %s: %s\n", std::string(errc_name(e.code())).c_str(),
                 e.detail().c_str());
    return e.code() == Errc::PlanInvalid ? kExitPlanInvalid : kExitError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "svff: %s\n", e.what());
    return kExitError;
  }
  return 0;
}
