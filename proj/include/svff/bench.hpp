#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace svff::bench {

enum class Mode { DetachAttach, PauseUnpause };
enum class Step { Rescan, RemoveVf, ChangeNumVf, AddVf };

inline constexpr std::array<Step, 4> kSteps = {Step::Rescan, Step::RemoveVf, Step::ChangeNumVf,
                                               Step::AddVf};
inline constexpr std::array<Mode, 2> kModes = {Mode::DetachAttach, Mode::PauseUnpause};

std::string_view step_name(Step s) noexcept;
std::string_view mode_name(Mode m) noexcept;

// Per-step single-run measurements: values[step][mode][i] at vf_counts[i].
struct StepTable {
  std::vector<unsigned> vf_counts;
  std::array<std::array<std::vector<double>, 2>, 4> values;
};

// Whole-cycle averages over many runs.
struct TotalRow {
  unsigned n_vfs = 0;
  double avg_da_ms = 0;
  double sigma_da = 0;
  double avg_pu_ms = 0;
  double sigma_pu = 0;
};

struct Calibration {
  std::string source;
  StepTable steps;
  std::vector<TotalRow> totals;  // optional
  double cpu_ms = 0;
};

void to_json(nlohmann::json& j, const Calibration& c);
// Throws Error(InvalidArgument) on a malformed document.
void from_json(const nlohmann::json& j, Calibration& c);
Calibration load_calibration_file(const std::string& path);
const Calibration& default_calibration();

struct StepParams {
  double fixed_ms = 0;
  double per_vf_ms = 0;
  // sigma(n) = sigma_fixed_ms + sigma_per_vf_ms * n, floored at 0.
  double sigma_fixed_ms = 0;
  double sigma_per_vf_ms = 0;

  double mean(unsigned n) const { return fixed_ms + per_vf_ms * n; }
  double sigma(unsigned n) const;
};

struct StepTimingModel {
  std::array<std::array<StepParams, 2>, 4> steps;
  double cpu_ms = 0;

  const StepParams& at(Step s, Mode m) const {
    return steps[static_cast<int>(s)][static_cast<int>(m)];
  }
  StepParams& at(Step s, Mode m) { return steps[static_cast<int>(s)][static_cast<int>(m)]; }
  double expected_total(Mode m, unsigned n) const;
  // Throws Error(InvalidArgument) if any mean is negative for 1 <= n <= 252.
  void validate() const;
};

// Least squares y = a + b*n. Throws DegenerateFit with fewer than two
// distinct n.
std::pair<double, double> linear_fit(const std::vector<unsigned>& n, const std::vector<double>& y);

// Per-step least-squares fit; sigmas are zero.
StepTimingModel calibrate(const StepTable& table);

// Shifts each mode's step intercepts and slopes, in proportion to their
// magnitudes, so the summed model follows the least-squares line through the
// averaged totals. Sigmas follow a line through the total sigmas, split
// evenly across the four steps (sigma_step = sigma_total / 2).
StepTimingModel anchor_to_totals(StepTimingModel model, const std::vector<TotalRow>& totals);

// calibrate(), then anchor_to_totals() when totals are present.
StepTimingModel build_model(const Calibration& c);

class SimClock {
 public:
  double now_ms() const { return now_; }
  void advance(double ms) { now_ += ms; }

 private:
  double now_ = 0;
};

struct CycleMeasurement {
  unsigned n_vfs = 0;
  Mode mode = Mode::DetachAttach;
  std::array<double, 4> step_ms{};
  double total_ms = 0;
};

// One reconf cycle with n VFs on as many live VMs, run through the real
// orchestrator on a fresh host; every phase is timed by the model and
// checked against the state invariants. Throws InvalidArgument for n == 0,
// orchestrator errors as reported, std::logic_error on an invariant breach.
CycleMeasurement run_cycle(const StepTimingModel& model, unsigned n_vfs, Mode mode,
                           std::uint64_t seed);

struct ReportRow {
  unsigned n_vfs = 0;
  double avg_da_ms = 0;
  std::optional<double> sigma_da;
  double avg_pu_ms = 0;
  std::optional<double> sigma_pu;
  double overhead_pct = 0;
  double ms_per_vf = 0;
  double cpu_pct = 0;  // cpu_ms as a share of avg_da_ms
};

struct OverheadReport {
  std::uint64_t seed = 0;
  unsigned n_runs = 0;
  double cpu_ms = 0;
  std::vector<ReportRow> rows;
};

void to_json(nlohmann::json& j, const OverheadReport& r);
void from_json(const nlohmann::json& j, OverheadReport& r);

// Both modes see the same per-run seeds.
OverheadReport run_experiment(const StepTimingModel& model, unsigned n_runs,
                              const std::vector<unsigned>& vf_counts, std::uint64_t seed);

// "table", "csv" or "json"; anything else throws UnknownFormat.
std::string render_report(const OverheadReport& report, std::string_view format);

}  // namespace svff::bench
