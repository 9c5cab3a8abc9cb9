#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "svff/bench.hpp"
#include "support.hpp"

using namespace svff;
using namespace svff::bench;

namespace {

// Least-squares coefficients computed independently (numpy.linalg.lstsq) from
// the embedded calibration tables.
constexpr double kFitTol = 1e-3;

StepTimingModel pure_model() { return calibrate(default_calibration().steps); }

}  // namespace

TEST(BenchFit, ConstantSeriesHasZeroSlope) {
  auto [a, b] = linear_fit({1, 4, 10}, {7, 7, 7});
  EXPECT_NEAR(a, 7, 1e-12);
  EXPECT_NEAR(b, 0, 1e-12);
}

TEST(BenchFit, ExactLineIsRecovered) {
  auto [a, b] = linear_fit({2, 5, 9, 11}, {103, 109, 117, 121});
  EXPECT_NEAR(a, 99, 1e-9);
  EXPECT_NEAR(b, 2, 1e-9);
}

TEST(BenchFit, DegenerateInputsAreRejected) {
  EXPECT_ERRC(linear_fit({4, 4, 4}, {1, 2, 3}), Errc::DegenerateFit);
  EXPECT_ERRC(linear_fit({4}, {1}), Errc::DegenerateFit);
}

TEST(BenchFit, StepFitsMatchOracle) {
  auto m = pure_model();
  struct Expect {
    Step s;
    Mode mode;
    double a, b;
  };
  const Expect cases[] = {
      {Step::Rescan, Mode::DetachAttach, 140.452, -0.0238},
      {Step::RemoveVf, Mode::DetachAttach, -286.357, 1460.071},
      {Step::ChangeNumVf, Mode::DetachAttach, 1201.357, 61.929},
      {Step::AddVf, Mode::DetachAttach, -58.095, 1508.952},
      {Step::Rescan, Mode::PauseUnpause, 139.095, 0.0476},
      {Step::RemoveVf, Mode::PauseUnpause, -113.833, 1399.833},
      {Step::ChangeNumVf, Mode::PauseUnpause, 1234, 49},
      {Step::AddVf, Mode::PauseUnpause, -137.071, 1457.214},
  };
  for (const auto& c : cases) {
    SCOPED_TRACE(std::string(step_name(c.s)) + "/" + std::string(mode_name(c.mode)));
    EXPECT_NEAR(m.at(c.s, c.mode).fixed_ms, c.a, kFitTol);
    EXPECT_NEAR(m.at(c.s, c.mode).per_vf_ms, c.b, kFitTol);
    EXPECT_EQ(m.at(c.s, c.mode).sigma_fixed_ms, 0);
  }
}

TEST(BenchFit, AnchoredTotalsFollowAveragedTotals) {
  auto m = build_model(default_calibration());
  for (unsigned n : {1u, 4u, 10u, 50u}) {
    EXPECT_NEAR(m.expected_total(Mode::DetachAttach, n), 1083.024 + 3001.262 * n, 0.01 * n + 0.01);
    EXPECT_NEAR(m.expected_total(Mode::PauseUnpause, n), 1090.762 + 2916.381 * n, 0.01 * n + 0.01);
  }
  // sigma_total(n) = 2 * sigma_step(n) follows the sigma fits.
  for (unsigned n : {1u, 4u, 10u}) {
    EXPECT_NEAR(2 * m.at(Step::AddVf, Mode::DetachAttach).sigma(n), -15 + 51.0 * n, 1e-6);
    EXPECT_NEAR(2 * m.at(Step::AddVf, Mode::PauseUnpause).sigma(n), -67.0 / 7 + 355.0 / 7 * n, 1e-6);
  }
  EXPECT_NO_THROW(m.validate());
}

TEST(BenchFit, PauseIsCheaperThanDetachAtEveryScale) {
  auto m = build_model(default_calibration());
  for (unsigned n = 1; n <= 16; ++n)
    EXPECT_LT(m.expected_total(Mode::PauseUnpause, n), m.expected_total(Mode::DetachAttach, n));
}

TEST(BenchFit, NegativeMeansFailValidation) {
  StepTimingModel m;
  m.at(Step::AddVf, Mode::DetachAttach).fixed_ms = -10;
  EXPECT_ERRC(m.validate(), Errc::InvalidArgument);
}

TEST(BenchCalibration, DataFileMatchesEmbeddedDefault) {
  auto file = load_calibration_file(std::string(SVFF_SOURCE_DIR) + "/data/calibration.json");
  nlohmann::json a = file, b = default_calibration();
  EXPECT_EQ(a, b);
}

TEST(BenchCalibration, MalformedDocumentIsRejected) {
  Calibration c;
  EXPECT_ERRC(from_json(nlohmann::json{{"vf_counts", "x"}}, c), Errc::InvalidArgument);
  EXPECT_ERRC(load_calibration_file("/nonexistent/calibration.json"), Errc::InvalidArgument);
}

TEST(BenchCycle, DetachCycleStaysNearExpectation) {
  auto m = build_model(default_calibration());
  auto c = run_cycle(m, 1, Mode::DetachAttach, 0);
  double expected = m.expected_total(Mode::DetachAttach, 1);
  EXPECT_NEAR(expected, 4151, 3 * 40);
  EXPECT_NEAR(c.total_ms, expected, 3 * 40);
  double sum = 0;
  for (double s : c.step_ms) sum += s;
  EXPECT_DOUBLE_EQ(sum, c.total_ms);
}

TEST(BenchCycle, PauseCycleTimesFourSteps) {
  auto m = build_model(default_calibration());
  auto c = run_cycle(m, 1, Mode::PauseUnpause, 0);
  EXPECT_EQ(c.mode, Mode::PauseUnpause);
  EXPECT_EQ(c.n_vfs, 1u);
  for (double s : c.step_ms) EXPECT_GE(s, 0);
  EXPECT_NEAR(c.step_ms[0], 140, 3 * 30);
}

TEST(BenchCycle, ZeroVfsIsRejected) {
  auto m = build_model(default_calibration());
  EXPECT_ERRC(run_cycle(m, 0, Mode::DetachAttach, 0), Errc::InvalidArgument);
}

TEST(BenchCycle, ManyVfsRaiseTheProfileLimit) {
  auto m = build_model(default_calibration());
  EXPECT_NO_THROW(run_cycle(m, 12, Mode::PauseUnpause, 3));
}

TEST(BenchReport, SameSeedSameBytes) {
  auto m = build_model(default_calibration());
  auto a = render_report(run_experiment(m, 5, {1, 4}, 42), "json");
  auto b = render_report(run_experiment(m, 5, {1, 4}, 42), "json");
  auto c = render_report(run_experiment(m, 5, {1, 4}, 43), "json");
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

TEST(BenchReport, SingleRunHasNoSigma) {
  auto m = build_model(default_calibration());
  auto r = run_experiment(m, 1, {2}, 7);
  ASSERT_EQ(r.rows.size(), 1u);
  EXPECT_FALSE(r.rows[0].sigma_da.has_value());
  EXPECT_FALSE(r.rows[0].sigma_pu.has_value());
  auto j = nlohmann::json::parse(render_report(r, "json"));
  EXPECT_TRUE(j["rows"][0]["sigma_da"].is_null());
  EXPECT_NE(render_report(r, "table").find(" - "), std::string::npos);
}

TEST(BenchReport, JsonRoundTripRendersIdenticalCsv) {
  auto m = build_model(default_calibration());
  auto r = run_experiment(m, 4, {1, 3}, 11);
  OverheadReport back = nlohmann::json::parse(render_report(r, "json")).get<OverheadReport>();
  EXPECT_EQ(render_report(back, "csv"), render_report(r, "csv"));
}

TEST(BenchReport, CsvHasHeaderAndOneLinePerCount) {
  auto m = build_model(default_calibration());
  auto csv = render_report(run_experiment(m, 3, {1, 4, 10}, 1), "csv");
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "n_vfs,avg_da_ms,sigma_da,avg_pu_ms,sigma_pu,overhead_pct,ms_per_vf,cpu_pct");
  int rows = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  EXPECT_EQ(rows, 3);
}

TEST(BenchReport, TableNamesEveryColumn) {
  auto m = build_model(default_calibration());
  auto t = render_report(run_experiment(m, 3, {1}, 1), "table");
  for (const char* col : {"#VF", "D/A", "P/U", "overhead", "ms/VF", "cpu"})
    EXPECT_NE(t.find(col), std::string::npos) << col;
}

TEST(BenchReport, UnknownFormatIsRejected) {
  EXPECT_ERRC(render_report(OverheadReport{}, "xml"), Errc::UnknownFormat);
}

TEST(BenchReport, RowsAreConsistent) {
  auto m = build_model(default_calibration());
  auto r = run_experiment(m, 20, {1, 4, 10}, 5);
  for (const auto& row : r.rows) {
    EXPECT_NEAR(row.overhead_pct, 100 * (row.avg_pu_ms - row.avg_da_ms) / row.avg_da_ms, 1e-9);
    EXPECT_NEAR(row.ms_per_vf, (row.avg_pu_ms - row.avg_da_ms) / row.n_vfs, 1e-9);
    EXPECT_NEAR(row.cpu_pct, 100 * r.cpu_ms / row.avg_da_ms, 1e-9);
  }
  EXPECT_LT(r.rows[0].cpu_pct, 10);
}

TEST(BenchReport, ExperimentArgumentsAreChecked) {
  auto m = build_model(default_calibration());
  EXPECT_ERRC(run_experiment(m, 0, {1}, 0), Errc::InvalidArgument);
  EXPECT_ERRC(run_experiment(m, 1, {}, 0), Errc::InvalidArgument);
}
