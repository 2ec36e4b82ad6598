#include "metaharness/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "metaharness/parallel.hpp"
#include "metaharness/rng.hpp"

namespace metaharness {

namespace {

std::string fmt(double v, int decimals = 1) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

bool attempt_correct(const Attempt& attempt, const std::string& gold, Grader grader) {
  try {
    return answer_matches(attempt.answer, gold, grader);
  } catch (const Error&) {
    return false;
  }
}

}  // namespace

bool grade(const Problem& problem, const std::string& final_answer) {
  if (!problem.gold) {
    fail(ErrorCode::MissingGold, "problem '" + problem.id + "' has no gold answer");
  }
  return answer_matches(final_answer, *problem.gold, problem.grader);
}

json record_to_json(const TrajectoryRecord& record) {
  json j{{"policy", record.policy}, {"problem_id", record.problem_id}};
  if (record.error) {
    j["error"] = *record.error;
    return j;
  }
  j["trajectory"] = trajectory_to_json(*record.trajectory);
  j["grader"] = grader_to_string(record.grader);
  if (record.gold) j["gold"] = *record.gold;
  if (record.correct) j["correct"] = *record.correct;
  return j;
}

TrajectoryRecord record_from_json(const json& j) {
  TrajectoryRecord r;
  r.policy = j.at("policy").get<std::string>();
  r.problem_id = j.at("problem_id").get<std::string>();
  if (j.contains("error")) {
    r.error = j.at("error").get<std::string>();
    return r;
  }
  r.trajectory = trajectory_from_json(j.at("trajectory"));
  r.grader = grader_from_string(j.value("grader", std::string("exact_match")));
  if (j.contains("gold")) r.gold = j.at("gold").get<std::string>();
  if (j.contains("correct")) r.correct = j.at("correct").get<bool>();
  return r;
}

std::vector<TrajectoryRecord> parse_log(const std::string& content) {
  std::vector<TrajectoryRecord> out;
  std::istringstream in(content);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim_copy(line).empty()) continue;
    try {
      out.push_back(record_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      fail(ErrorCode::ParseError, "log line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<TrajectoryRecord> read_log_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::ParseError, "cannot open log file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_log(ss.str());
}

std::uint64_t problems_fingerprint(const std::vector<TrajectoryRecord>& records) {
  std::vector<std::string> ids;
  ids.reserve(records.size());
  for (const auto& r : records) ids.push_back(r.problem_id);
  std::sort(ids.begin(), ids.end());
  std::uint64_t h = fnv1a64("problem-set");
  for (const auto& id : ids) h = mix_seed(h, fnv1a64(id));
  return h;
}

RunResult run_policy(const std::vector<Problem>& problems, const Policy& policy,
                     Backend& backend, const Controller* controller,
                     const HarnessConfig& config, std::uint64_t seed, int jobs,
                     const std::function<void(const TrajectoryRecord&)>& sink) {
  if (problems.empty()) fail(ErrorCode::InvalidArgument, "empty problem set");
  if (policy_needs_controller(policy.kind) && controller == nullptr) {
    fail(ErrorCode::InvalidArgument,
         std::string("policy ") + policy_kind_to_string(policy.kind) + " needs a controller");
  }

  RunResult out;
  out.records.reserve(problems.size());
  run_ordered<TrajectoryRecord>(
      problems.size(), jobs,
      [&](std::size_t i) {
        const Problem& problem = problems[i];
        TrajectoryRecord record;
        record.policy = policy_kind_to_string(policy.kind);
        record.problem_id = problem.id;
        record.gold = problem.gold;
        record.grader = problem.grader;
        try {
          Trajectory t = run_ablation_policy(problem, backend, policy, controller, config,
                                             problem_seed(seed, problem.id));
          if (problem.gold) {
            try {
              record.correct = grade(problem, t.final.answer);
            } catch (const Error& e) {
              if (e.code() != ErrorCode::UnparseableNumeric) throw;
              record.correct = false;
            }
          }
          record.trajectory = std::move(t);
        } catch (const Error& e) {
          if (e.code() == ErrorCode::ElicitationExhausted) {
            record.error = e.what();
          } else {
            throw;
          }
        }
        return record;
      },
      [&](std::size_t, TrajectoryRecord&& record) {
        if (sink) sink(record);
        out.records.push_back(std::move(record));
      });

  out.report = compute_report(policy_kind_to_string(policy.kind), seed, out.records, nullptr,
                              std::nullopt);
  return out;
}

EvalReport compute_report(const std::string& policy, std::uint64_t seed,
                          const std::vector<TrajectoryRecord>& records,
                          const PricingTable* pricing,
                          std::optional<double> pass1_accuracy_pct) {
  if (records.empty()) fail(ErrorCode::InvalidArgument, "no records to report on");
  EvalReport report;
  report.policy = policy;
  report.seed = seed;
  report.problems_hash = problems_fingerprint(records);
  report.n = static_cast<int>(records.size());

  std::vector<int> correct;
  correct.reserve(records.size());
  bool all_graded = true;
  bool any_gold = false;
  double attempts_sum = 0.0;
  double cost_sum = 0.0;
  std::size_t oracle_hits = 0;
  std::vector<Trajectory> trajectories;
  std::vector<bool> first_correct;
  for (const auto& r : records) {
    if (r.error) {
      report.n_errors += 1;
      correct.push_back(0);  // aborted problems count as incorrect
      all_graded = false;
      continue;
    }
    const Trajectory& t = *r.trajectory;
    attempts_sum += static_cast<double>(t.attempts.size());
    if (pricing) cost_sum += usage_cost(t.total_usage, *pricing);
    if (r.gold) {
      any_gold = true;
      correct.push_back(r.correct.value_or(false) ? 1 : 0);
      bool hit = false;
      for (const auto& a : t.attempts) {
        if (attempt_correct(a, *r.gold, r.grader)) {
          hit = true;
          break;
        }
      }
      if (hit) ++oracle_hits;
      trajectories.push_back(t);
      first_correct.push_back(attempt_correct(t.attempts.front(), *r.gold, r.grader));
    } else {
      all_graded = false;
      correct.push_back(0);
    }
  }
  if (!any_gold) {
    fail(ErrorCode::MissingGold, "no graded problems in this run; accuracy is undefined");
  }

  const double n = static_cast<double>(records.size());
  const double n_ok = n - static_cast<double>(report.n_errors);
  report.accuracy_pct =
      100.0 * static_cast<double>(std::count(correct.begin(), correct.end(), 1)) / n;
  if (all_graded) {
    report.oracle_pct = 100.0 * static_cast<double>(oracle_hits) / n;
  }
  report.mean_attempts = n_ok > 0 ? attempts_sum / n_ok : 0.0;
  if (pricing && n_ok > 0) report.mean_cost = cost_sum / n_ok;
  report.ci_pct = bootstrap_ci(correct, 5000, mix_seed(seed, fnv1a64("bootstrap-ci")));
  const auto hit_rate = early_stop_hit_rate(trajectories, first_correct);
  if (hit_rate) report.early_stop_hit_pct = 100.0 * *hit_rate;
  if (pass1_accuracy_pct) report.gain_pct = report.accuracy_pct - *pass1_accuracy_pct;
  return report;
}

json eval_report_to_json(const EvalReport& r) {
  json j{{"format", "metaharness-eval-report"},
         {"version", 1},
         {"policy", r.policy},
         {"n", r.n},
         {"n_errors", r.n_errors},
         {"accuracy_pct", r.accuracy_pct},
         {"mean_attempts", r.mean_attempts},
         {"ci_pct", {r.ci_pct.first, r.ci_pct.second}},
         {"seed", r.seed},
         {"problems_hash", r.problems_hash}};
  if (r.gain_pct) j["gain_pct"] = *r.gain_pct;
  if (r.oracle_pct) j["oracle_pct"] = *r.oracle_pct;
  if (r.mean_cost) j["mean_cost"] = *r.mean_cost;
  if (r.early_stop_hit_pct) j["early_stop_hit_pct"] = *r.early_stop_hit_pct;
  return j;
}

EvalReport eval_report_from_json(const json& j) {
  try {
    EvalReport r;
    r.policy = j.at("policy").get<std::string>();
    r.n = j.at("n").get<int>();
    r.n_errors = j.value("n_errors", 0);
    r.accuracy_pct = j.at("accuracy_pct").get<double>();
    r.mean_attempts = j.at("mean_attempts").get<double>();
    r.ci_pct = {j.at("ci_pct").at(0).get<double>(), j.at("ci_pct").at(1).get<double>()};
    r.seed = j.at("seed").get<std::uint64_t>();
    r.problems_hash = j.at("problems_hash").get<std::uint64_t>();
    if (j.contains("gain_pct")) r.gain_pct = j.at("gain_pct").get<double>();
    if (j.contains("oracle_pct")) r.oracle_pct = j.at("oracle_pct").get<double>();
    if (j.contains("mean_cost")) r.mean_cost = j.at("mean_cost").get<double>();
    if (j.contains("early_stop_hit_pct")) {
      r.early_stop_hit_pct = j.at("early_stop_hit_pct").get<double>();
    }
    return r;
  } catch (const std::exception& e) {
    fail(ErrorCode::ParseError, std::string("malformed eval report: ") + e.what());
  }
}

std::array<BandGainRow, 3> band_gain_analysis(const std::vector<TrajectoryRecord>& pass1,
                                              const std::vector<TrajectoryRecord>& after) {
  std::map<std::string, const TrajectoryRecord*> after_by_id;
  for (const auto& r : after) after_by_id[r.problem_id] = &r;
  if (after_by_id.size() != pass1.size() || pass1.size() != after.size()) {
    fail(ErrorCode::LogMismatch, "band analysis needs logs over identical problem ids");
  }

  std::vector<double> jol1;
  jol1.reserve(pass1.size());
  for (const auto& r : pass1) {
    if (!after_by_id.count(r.problem_id)) {
      fail(ErrorCode::LogMismatch, "problem '" + r.problem_id + "' missing from paired log");
    }
    if (r.error || !r.trajectory || r.trajectory->attempts.empty()) {
      fail(ErrorCode::LogMismatch, "pass@1 log has no first attempt for '" + r.problem_id + "'");
    }
    jol1.push_back(r.trajectory->attempts.front().jol.jol_score);
  }
  const std::vector<Band> bands = band_split(jol1);

  std::array<BandGainRow, 3> rows;
  rows[0].band = Band::Low;
  rows[1].band = Band::Medium;
  rows[2].band = Band::High;
  std::array<int, 3> hits_before{0, 0, 0};
  std::array<int, 3> hits_after{0, 0, 0};
  std::array<double, 3> attempts_after{0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < pass1.size(); ++i) {
    const std::size_t b = static_cast<std::size_t>(bands[i]);
    const TrajectoryRecord& before = pass1[i];
    const TrajectoryRecord& aft = *after_by_id.at(before.problem_id);
    rows[b].n += 1;
    hits_before[b] += before.correct.value_or(false) ? 1 : 0;
    hits_after[b] += aft.correct.value_or(false) ? 1 : 0;
    attempts_after[b] +=
        aft.trajectory ? static_cast<double>(aft.trajectory->attempts.size()) : 0.0;
  }
  for (std::size_t b = 0; b < 3; ++b) {
    if (rows[b].n == 0) continue;
    rows[b].accuracy_before_pct = 100.0 * hits_before[b] / rows[b].n;
    rows[b].accuracy_after_pct = 100.0 * hits_after[b] / rows[b].n;
    rows[b].mean_attempts_after = attempts_after[b] / rows[b].n;
  }
  return rows;
}

std::string eval_report_table(const std::vector<EvalReport>& reports) {
  // Rank by gain when at least two policies carry one.
  std::vector<int> rank(reports.size(), 0);
  std::vector<std::size_t> with_gain;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    if (reports[i].gain_pct) with_gain.push_back(i);
  }
  if (with_gain.size() >= 2) {
    std::vector<std::size_t> order = with_gain;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return *reports[a].gain_pct > *reports[b].gain_pct;
    });
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
      rank[order[pos]] = static_cast<int>(pos) + 1;
    }
  }

  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof(line), "%-24s %6s %7s %7s %8s %6s %10s %15s %10s %5s\n", "Policy",
                "N", "Acc.%", "Gain", "Oracle%", "Avg.K", "Cost/Q", "95% CI", "EarlyHit%",
                "Rank");
  out << line;
  out << std::string(104, '-') << "\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const EvalReport& r = reports[i];
    const std::string gain = r.gain_pct ? (*r.gain_pct >= 0 ? "+" : "") + fmt(*r.gain_pct) : "--";
    const std::string oracle = r.oracle_pct ? fmt(*r.oracle_pct) : "--";
    const std::string cost = r.mean_cost ? "$" + fmt(*r.mean_cost, 4) : "--";
    const std::string ci = "[" + fmt(r.ci_pct.first) + "," + fmt(r.ci_pct.second) + "]";
    const std::string hit = r.early_stop_hit_pct ? fmt(*r.early_stop_hit_pct) : "--";
    const std::string rk = rank[i] > 0 ? "#" + std::to_string(rank[i]) : "--";
    std::snprintf(line, sizeof(line), "%-24s %6d %7s %7s %8s %6s %10s %15s %10s %5s\n",
                  r.policy.c_str(), r.n, fmt(r.accuracy_pct).c_str(), gain.c_str(),
                  oracle.c_str(), fmt(r.mean_attempts, 2).c_str(), cost.c_str(), ci.c_str(),
                  hit.c_str(), rk.c_str());
    out << line;
  }
  return out.str();
}

std::string band_table(const std::array<BandGainRow, 3>& rows) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof(line), "%-8s %6s %12s %12s %8s %10s\n", "Band", "N", "Acc.before%",
                "Acc.after%", "Gain", "Avg.K after");
  out << line;
  out << std::string(62, '-') << "\n";
  static const char* kNames[3] = {"Low", "Medium", "High"};
  for (std::size_t b = 0; b < 3; ++b) {
    const BandGainRow& r = rows[b];
    std::snprintf(line, sizeof(line), "%-8s %6d %12s %12s %8s %10s\n", kNames[b], r.n,
                  fmt(r.accuracy_before_pct).c_str(), fmt(r.accuracy_after_pct).c_str(),
                  fmt(r.accuracy_after_pct - r.accuracy_before_pct).c_str(),
                  fmt(r.mean_attempts_after, 2).c_str());
    out << line;
  }
  return out.str();
}

std::string dispersion_summary_text(const DispersionSummary& d) {
  std::ostringstream out;
  out << "JOL dispersion: median within-problem std " << fmt(d.median_within_std, 3)
      << ", across-problem std " << fmt(d.across_std, 3);
  if (d.median_within_std > 0.0) {
    out << " (" << fmt(d.across_std / d.median_within_std, 1) << "x)";
  }
  out << "\n";
  return out.str();
}

}  // namespace metaharness
