#include "svff/bench.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <stdexcept>

#include "svff/error.hpp"
#include "svff/orchestrator.hpp"
#include "svff/qmp.hpp"
#include "svff/state.hpp"

namespace svff::bench {

using nlohmann::json;

std::string_view step_name(Step s) noexcept {
  switch (s) {
    case Step::Rescan: return "rescan";
    case Step::RemoveVf: return "remove_vf";
    case Step::ChangeNumVf: return "change_numvf";
    case Step::AddVf: return "add_vf";
  }
  return "unknown";
}

std::string_view mode_name(Mode m) noexcept {
  return m == Mode::DetachAttach ? "detach_attach" : "pause_unpause";
}

void to_json(json& j, const Calibration& c) {
  json steps = json::object();
  for (Step s : kSteps) {
    json modes = json::object();
    for (Mode m : kModes)
      modes[std::string(mode_name(m))] = c.steps.values[static_cast<int>(s)][static_cast<int>(m)];
    steps[std::string(step_name(s))] = modes;
  }
  json totals = json::array();
  for (const auto& t : c.totals)
    totals.push_back({{"n_vfs", t.n_vfs},
                      {"avg_da_ms", t.avg_da_ms},
                      {"sigma_da", t.sigma_da},
                      {"avg_pu_ms", t.avg_pu_ms},
                      {"sigma_pu", t.sigma_pu}});
  j = json{{"source", c.source},
           {"vf_counts", c.steps.vf_counts},
           {"steps", steps},
           {"totals", totals},
           {"cpu_ms", c.cpu_ms}};
}

void from_json(const json& j, Calibration& c) {
  try {
    Calibration out;
    out.source = j.value("source", std::string());
    out.steps.vf_counts = j.at("vf_counts").get<std::vector<unsigned>>();
    for (Step s : kSteps) {
      const auto& modes = j.at("steps").at(std::string(step_name(s)));
      for (Mode m : kModes) {
        auto values = modes.at(std::string(mode_name(m))).get<std::vector<double>>();
        if (values.size() != out.steps.vf_counts.size())
          throw Error(Errc::InvalidArgument, std::string(step_name(s)) + "/" +
                                                 std::string(mode_name(m)) +
                                                 " does not match vf_counts");
        out.steps.values[static_cast<int>(s)][static_cast<int>(m)] = std::move(values);
      }
    }
    if (j.contains("totals")) {
      for (const auto& t : j.at("totals"))
        out.totals.push_back({t.at("n_vfs").get<unsigned>(), t.at("avg_da_ms").get<double>(),
                              t.at("sigma_da").get<double>(), t.at("avg_pu_ms").get<double>(),
                              t.at("sigma_pu").get<double>()});
    }
    out.cpu_ms = j.value("cpu_ms", 0.0);
    c = std::move(out);
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidArgument, std::string("calibration: ") + e.what());
  }
}

Calibration load_calibration_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::InvalidArgument, "cannot open " + path);
  try {
    return json::parse(in).get<Calibration>();
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidArgument, path + ": " + e.what());
  }
}

const Calibration& default_calibration() {
  static const Calibration c = [] {
    Calibration c;
    c.source =
        "QDMA on Alveo U55C, 1 PF: step timings of one run (steps), 100-run averages (totals), "
        "CPU time of a 1-VF cycle (cpu_ms)";
    c.steps.vf_counts = {1, 4, 10};
    auto set = [&c](Step s, std::vector<double> da, std::vector<double> pu) {
      c.steps.values[static_cast<int>(s)][0] = std::move(da);
      c.steps.values[static_cast<int>(s)][1] = std::move(pu);
    };
    set(Step::Rescan, {138, 144, 139}, {138, 141, 139});
    set(Step::RemoveVf, {1265, 5417, 14360}, {1273, 5505, 13878});
    set(Step::ChangeNumVf, {1256, 1460, 1817}, {1295, 1412, 1730});
    set(Step::AddVf, {1472, 5946, 15042}, {1346, 5653, 14448});
    c.totals = {{1, 4151, 40, 4068, 56}, {4, 12988, 183, 12665, 171}, {10, 31129, 497, 30285, 505}};
    c.cpu_ms = 350;
    return c;
  }();
  return c;
}

double StepParams::sigma(unsigned n) const {
  return std::max(0.0, sigma_fixed_ms + sigma_per_vf_ms * n);
}

double StepTimingModel::expected_total(Mode m, unsigned n) const {
  double total = 0;
  for (Step s : kSteps) total += at(s, m).mean(n);
  return total;
}

void StepTimingModel::validate() const {
  for (Step s : kSteps)
    for (Mode m : kModes) {
      const auto& p = at(s, m);
      if (p.mean(1) < 0 || p.mean(kMaxVfsPerPf) < 0)
        throw Error(Errc::InvalidArgument, std::string(step_name(s)) + "/" +
                                               std::string(mode_name(m)) + " has a negative mean");
    }
}

std::pair<double, double> linear_fit(const std::vector<unsigned>& n, const std::vector<double>& y) {
  if (n.size() != y.size()) throw Error(Errc::InvalidArgument, "fit inputs differ in length");
  if (std::set<unsigned>(n.begin(), n.end()).size() < 2)
    throw Error(Errc::DegenerateFit, "need at least two distinct VF counts");
  double k = static_cast<double>(n.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n.size(); ++i) {
    sx += n[i];
    sy += y[i];
    sxx += static_cast<double>(n[i]) * n[i];
    sxy += n[i] * y[i];
  }
  double den = k * sxx - sx * sx;
  double b = (k * sxy - sx * sy) / den;
  double a = (sy - b * sx) / k;
  return {a, b};
}

StepTimingModel calibrate(const StepTable& table) {
  StepTimingModel model;
  for (Step s : kSteps)
    for (Mode m : kModes) {
      auto [a, b] = linear_fit(table.vf_counts,
                               table.values[static_cast<int>(s)][static_cast<int>(m)]);
      model.at(s, m).fixed_ms = a;
      model.at(s, m).per_vf_ms = b;
    }
  return model;
}

StepTimingModel anchor_to_totals(StepTimingModel model, const std::vector<TotalRow>& totals) {
  if (totals.empty()) return model;
  std::vector<unsigned> n;
  std::vector<double> avg[2], sigma[2];
  for (const auto& t : totals) {
    n.push_back(t.n_vfs);
    avg[0].push_back(t.avg_da_ms);
    avg[1].push_back(t.avg_pu_ms);
    sigma[0].push_back(t.sigma_da);
    sigma[1].push_back(t.sigma_pu);
  }
  for (Mode m : kModes) {
    int mi = static_cast<int>(m);
    double a1, b1, sa, sb;
    if (totals.size() == 1) {
      // One row pins the intercept only.
      b1 = 0;
      for (Step s : kSteps) b1 += model.at(s, m).per_vf_ms;
      a1 = avg[mi][0] - b1 * n[0];
      sa = sigma[mi][0];
      sb = 0;
    } else {
      std::tie(a1, b1) = linear_fit(n, avg[mi]);
      std::tie(sa, sb) = linear_fit(n, sigma[mi]);
    }
    double a0 = 0, b0 = 0, wa = 0, wb = 0;
    for (Step s : kSteps) {
      a0 += model.at(s, m).fixed_ms;
      b0 += model.at(s, m).per_vf_ms;
      wa += std::abs(model.at(s, m).fixed_ms);
      wb += std::abs(model.at(s, m).per_vf_ms);
    }
    for (Step s : kSteps) {
      auto& p = model.at(s, m);
      p.fixed_ms += (a1 - a0) * (wa > 0 ? std::abs(p.fixed_ms) / wa : 0.25);
      p.per_vf_ms += (b1 - b0) * (wb > 0 ? std::abs(p.per_vf_ms) / wb : 0.25);
      p.sigma_fixed_ms = sa / 2;
      p.sigma_per_vf_ms = sb / 2;
    }
  }
  return model;
}

StepTimingModel build_model(const Calibration& c) {
  StepTimingModel model = anchor_to_totals(calibrate(c.steps), c.totals);
  model.cpu_ms = c.cpu_ms;
  model.validate();
  return model;
}

namespace {

std::optional<Step> step_for(Phase p) {
  switch (p) {
    case Phase::Rescan: return Step::Rescan;
    case Phase::RemoveVfs: return Step::RemoveVf;
    case Phase::ChangeNumVfs: return Step::ChangeNumVf;
    case Phase::AddVfs: return Step::AddVf;
    default: return std::nullopt;
  }
}

void require_invariants(const Host& host, const RecordStore& records, std::string_view where) {
  auto violations = check_invariants(host, records);
  if (violations.empty()) return;
  std::string msg = "invariant violated after " + std::string(where) + ":";
  for (const auto& v : violations) msg += "\n  " + v;
  throw std::logic_error(msg);
}

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::string num(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

}  // namespace

CycleMeasurement run_cycle(const StepTimingModel& model, unsigned n_vfs, Mode mode,
                           std::uint64_t seed) {
  if (n_vfs == 0) throw Error(Errc::InvalidArgument, "a cycle needs at least one VF");
  if (n_vfs > kMaxVfsPerPf)
    throw Error(Errc::InvalidArgument, "at most " + std::to_string(kMaxVfsPerPf) + " VFs");

  DeviceProfile profile = DeviceProfile::default_profile();
  profile.max_vfs_per_pf = std::max(profile.max_vfs_per_pf, n_vfs);
  Host host(profile);
  MemoryRecordStore records;
  qmp::Dispatcher dispatcher(host.vmm());
  qmp::InProcessChannel channel(dispatcher);
  Orchestrator orch(host, records, channel, [] { return std::string("1970-01-01T00:00:00Z"); });

  PlanConfig plan;
  plan.num_vfs = n_vfs;
  for (unsigned i = 0; i < n_vfs; ++i) {
    std::string vm = "vm" + std::to_string(i);
    host.vmm().define_vm(vm);
    host.vmm().start_vm(vm);
    plan.assignments.push_back({vm, 1});
  }
  auto setup = orch.init(plan);
  if (!setup.ok) throw Error(*setup.error, "cycle setup: " + setup.error_detail);
  require_invariants(host, records, "init");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  SimClock clock;
  CycleMeasurement out;
  out.n_vfs = n_vfs;
  out.mode = mode;
  double phase_start = clock.now_ms();
  orch.set_hooks({nullptr, [&](Phase phase) {
                    auto step = step_for(phase);
                    if (!step) return;
                    const StepParams& p = model.at(*step, mode);
                    clock.advance(std::max(0.0, p.mean(n_vfs) + p.sigma(n_vfs) * gauss(rng)));
                    out.step_ms[static_cast<int>(*step)] = clock.now_ms() - phase_start;
                    phase_start = clock.now_ms();
                    require_invariants(host, records, phase_name(phase));
                  }});
  auto report = orch.reconf(plan.pf, n_vfs, plan.assignments, mode == Mode::PauseUnpause);
  if (!report.ok) throw Error(*report.error, report.error_detail);
  for (const auto& [name, vm] : host.vmm().vms())
    if (vm.devices.size() != 1) throw std::logic_error(name + " lost its device");
  out.total_ms = 0;
  for (double ms : out.step_ms) out.total_ms += ms;
  return out;
}

OverheadReport run_experiment(const StepTimingModel& model, unsigned n_runs,
                              const std::vector<unsigned>& vf_counts, std::uint64_t seed) {
  if (n_runs == 0) throw Error(Errc::InvalidArgument, "need at least one run");
  if (vf_counts.empty()) throw Error(Errc::InvalidArgument, "need at least one VF count");
  OverheadReport report;
  report.seed = seed;
  report.n_runs = n_runs;
  report.cpu_ms = model.cpu_ms;
  std::uint64_t state = seed;
  for (unsigned n : vf_counts) {
    std::vector<double> totals[2];
    for (unsigned r = 0; r < n_runs; ++r) {
      std::uint64_t run_seed = splitmix64(state);
      for (Mode m : kModes)
        totals[static_cast<int>(m)].push_back(run_cycle(model, n, m, run_seed).total_ms);
    }
    auto mean = [](const std::vector<double>& v) {
      double s = 0;
      for (double x : v) s += x;
      return s / static_cast<double>(v.size());
    };
    auto stddev = [](const std::vector<double>& v, double mu) -> std::optional<double> {
      if (v.size() < 2) return std::nullopt;
      double s = 0;
      for (double x : v) s += (x - mu) * (x - mu);
      return std::sqrt(s / static_cast<double>(v.size() - 1));
    };
    ReportRow row;
    row.n_vfs = n;
    row.avg_da_ms = mean(totals[0]);
    row.avg_pu_ms = mean(totals[1]);
    row.sigma_da = stddev(totals[0], row.avg_da_ms);
    row.sigma_pu = stddev(totals[1], row.avg_pu_ms);
    row.overhead_pct = (row.avg_pu_ms - row.avg_da_ms) / row.avg_da_ms * 100.0;
    row.ms_per_vf = (row.avg_pu_ms - row.avg_da_ms) / n;
    row.cpu_pct = model.cpu_ms / row.avg_da_ms * 100.0;
    report.rows.push_back(row);
  }
  return report;
}

void to_json(json& j, const OverheadReport& r) {
  json rows = json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"n_vfs", row.n_vfs},
                    {"avg_da_ms", row.avg_da_ms},
                    {"sigma_da", row.sigma_da ? json(*row.sigma_da) : json()},
                    {"avg_pu_ms", row.avg_pu_ms},
                    {"sigma_pu", row.sigma_pu ? json(*row.sigma_pu) : json()},
                    {"overhead_pct", row.overhead_pct},
                    {"ms_per_vf", row.ms_per_vf},
                    {"cpu_pct", row.cpu_pct}});
  }
  j = json{{"seed", r.seed}, {"n_runs", r.n_runs}, {"cpu_ms", r.cpu_ms}, {"rows", rows}};
}

void from_json(const json& j, OverheadReport& r) {
  try {
    OverheadReport out;
    out.seed = j.at("seed").get<std::uint64_t>();
    out.n_runs = j.at("n_runs").get<unsigned>();
    out.cpu_ms = j.at("cpu_ms").get<double>();
    for (const auto& row : j.at("rows")) {
      ReportRow x;
      x.n_vfs = row.at("n_vfs").get<unsigned>();
      x.avg_da_ms = row.at("avg_da_ms").get<double>();
      if (!row.at("sigma_da").is_null()) x.sigma_da = row.at("sigma_da").get<double>();
      x.avg_pu_ms = row.at("avg_pu_ms").get<double>();
      if (!row.at("sigma_pu").is_null()) x.sigma_pu = row.at("sigma_pu").get<double>();
      x.overhead_pct = row.at("overhead_pct").get<double>();
      x.ms_per_vf = row.at("ms_per_vf").get<double>();
      x.cpu_pct = row.at("cpu_pct").get<double>();
      out.rows.push_back(x);
    }
    r = std::move(out);
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidArgument, std::string("report: ") + e.what());
  }
}

std::string render_report(const OverheadReport& report, std::string_view format) {
  if (format == "json") return json(report).dump(2) + "\n";
  if (format == "csv") {
    std::string out = "n_vfs,avg_da_ms,sigma_da,avg_pu_ms,sigma_pu,overhead_pct,ms_per_vf,cpu_pct\n";
    for (const auto& r : report.rows) {
      out += std::to_string(r.n_vfs) + "," + num(r.avg_da_ms) + "," +
             (r.sigma_da ? num(*r.sigma_da) : "") + "," + num(r.avg_pu_ms) + "," +
             (r.sigma_pu ? num(*r.sigma_pu) : "") + "," + num(r.overhead_pct) + "," +
             num(r.ms_per_vf) + "," + num(r.cpu_pct) + "\n";
    }
    return out;
  }
  if (format == "table") {
    std::string out = "# detach/attach vs pause/unpause, average of " +
                      std::to_string(report.n_runs) + " simulated runs, seed " +
                      std::to_string(report.seed) + "\n";
    out += "# per-step sigma = total sigma / 2 (four independent steps)\n";
    out += "# cpu % = " + fixed(report.cpu_ms, 0) + " ms CPU budget over D/A average\n";
    char line[256];
    std::snprintf(line, sizeof line, "%4s | %10s %8s | %10s %8s | %10s %8s | %6s\n", "#VF",
                  "D/A avg ms", "sigma", "P/U avg ms", "sigma", "overhead%", "ms/VF", "cpu%");
    out += line;
    out += std::string(std::string_view(line).size() - 1, '-') + "\n";
    auto sig = [](const std::optional<double>& s) { return s ? fixed(*s, 0) : std::string("-"); };
    for (const auto& r : report.rows) {
      std::snprintf(line, sizeof line, "%4u | %10s %8s | %10s %8s | %10s %8s | %6s\n", r.n_vfs,
                    fixed(r.avg_da_ms, 0).c_str(), sig(r.sigma_da).c_str(),
                    fixed(r.avg_pu_ms, 0).c_str(), sig(r.sigma_pu).c_str(),
                    fixed(r.overhead_pct, 2).c_str(), fixed(r.ms_per_vf, 0).c_str(),
                    fixed(r.cpu_pct, 1).c_str());
      out += line;
    }
    return out;
  }
  throw Error(Errc::UnknownFormat, "unknown report format '" + std::string(format) + "'");
}

}  // namespace svff::bench
