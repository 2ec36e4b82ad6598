#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "metaharness/backend.hpp"
#include "metaharness/harness.hpp"
#include "metaharness/metrics.hpp"

namespace metaharness {

// Batch execution of policies over problem sets plus every report-level
// quantity: accuracy, gain, oracle capacity, budgets, cost, bootstrap CI and
// the confidence-band analyses.

// One trajectory-log line. Gold and grader are snapshotted so logs stay
// self-contained for reporting; `error` marks problems that aborted before
// producing a trajectory.
struct TrajectoryRecord {
  std::string policy;
  std::optional<Trajectory> trajectory;
  std::optional<std::string> gold;
  Grader grader = Grader::exact_match;
  std::optional<bool> correct;  // final answer graded at run time
  std::optional<std::string> error;
  std::string problem_id;  // always set, even for error records
};

json record_to_json(const TrajectoryRecord& record);
TrajectoryRecord record_from_json(const json& j);
std::vector<TrajectoryRecord> read_log_file(const std::string& path);
std::vector<TrajectoryRecord> parse_log(const std::string& content);

// Correctness of a final answer against the problem's gold.
// exact_match: normalized equality. numeric_tolerance: |a - g| <=
// max(1e-9, 1e-6 * |g|). Throws MissingGold / UnparseableNumeric.
bool grade(const Problem& problem, const std::string& final_answer);

struct EvalReport {
  std::string policy;
  int n = 0;
  int n_errors = 0;
  double accuracy_pct = 0.0;
  std::optional<double> gain_pct;  // vs a paired pass@1 run, same set and seed
  std::optional<double> oracle_pct;
  double mean_attempts = 0.0;
  std::optional<double> mean_cost;
  std::pair<double, double> ci_pct{0.0, 0.0};  // 95% bootstrap, B = 5000
  std::optional<double> early_stop_hit_pct;
  std::uint64_t seed = 0;
  std::uint64_t problems_hash = 0;  // pairing check across runs
};

json eval_report_to_json(const EvalReport& report);
EvalReport eval_report_from_json(const json& j);

std::uint64_t problems_fingerprint(const std::vector<TrajectoryRecord>& records);

struct RunResult {
  std::vector<TrajectoryRecord> records;
  EvalReport report;
};

// Runs one policy over the set with a bounded worker pool; records are
// delivered to `sink` (when given) strictly in input order, so log bytes are
// independent of scheduling. Per-problem seeds derive from (seed, problem id).
RunResult run_policy(const std::vector<Problem>& problems, const Policy& policy,
                     Backend& backend, const Controller* controller,
                     const HarnessConfig& config, std::uint64_t seed, int jobs = 1,
                     const std::function<void(const TrajectoryRecord&)>& sink = nullptr);

// Report arithmetic over an existing record set; bootstrap is seeded from the
// run seed. pass1_accuracy_pct, when supplied, fills the gain column.
EvalReport compute_report(const std::string& policy, std::uint64_t seed,
                          const std::vector<TrajectoryRecord>& records,
                          const PricingTable* pricing,
                          std::optional<double> pass1_accuracy_pct);

struct BandGainRow {
  Band band = Band::Low;
  int n = 0;
  double accuracy_before_pct = 0.0;
  double accuracy_after_pct = 0.0;
  double mean_attempts_after = 0.0;
};

// Bands come from the pass@1 log's first-attempt JOL; both logs must cover
// identical problem ids (LogMismatch otherwise).
std::array<BandGainRow, 3> band_gain_analysis(const std::vector<TrajectoryRecord>& pass1,
                                              const std::vector<TrajectoryRecord>& after);

// Aligned plain-text tables for the CLI.
std::string eval_report_table(const std::vector<EvalReport>& reports);
std::string band_table(const std::array<BandGainRow, 3>& rows);
std::string dispersion_summary_text(const DispersionSummary& d);

}  // namespace metaharness
