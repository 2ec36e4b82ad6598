#include "metaharness/diagnosis.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include <nlohmann/json.hpp>

#include "metaharness/metrics.hpp"

namespace metaharness {

const char* grade_to_string(Grade g) {
  switch (g) {
    case Grade::Pass: return "Pass";
    case Grade::Marginal: return "Marginal";
    case Grade::Fail: return "Fail";
  }
  return "Fail";
}

Grade grade_from_string(const std::string& s) {
  if (s == "Pass") return Grade::Pass;
  if (s == "Marginal") return Grade::Marginal;
  if (s == "Fail") return Grade::Fail;
  fail(ErrorCode::ParseError, "unknown grade '" + s + "'");
}

const char* metric_kind_to_string(MetricKind m) {
  return m == MetricKind::AUROC ? "AUROC" : "ECE";
}

const char* signal_kind_to_string(SignalKind s) {
  switch (s) {
    case SignalKind::FOK: return "FOK";
    case SignalKind::JOL: return "JOL";
    case SignalKind::Joint: return "Joint";
  }
  return "FOK";
}

const char* verdict_to_string(Verdict v) {
  switch (v) {
    case Verdict::CalibratedMetacognition: return "CalibratedMetacognition";
    case Verdict::AdequateMetacognition: return "AdequateMetacognition";
    case Verdict::DiscriminativeButMiscalibrated: return "DiscriminativeButMiscalibrated";
    case Verdict::AbsentMetacognitiveSignal: return "AbsentMetacognitiveSignal";
  }
  return "AbsentMetacognitiveSignal";
}

Verdict verdict_from_string(const std::string& s) {
  if (s == "CalibratedMetacognition") return Verdict::CalibratedMetacognition;
  if (s == "AdequateMetacognition") return Verdict::AdequateMetacognition;
  if (s == "DiscriminativeButMiscalibrated") return Verdict::DiscriminativeButMiscalibrated;
  if (s == "AbsentMetacognitiveSignal") return Verdict::AbsentMetacognitiveSignal;
  fail(ErrorCode::ParseError, "unknown verdict '" + s + "'");
}

Grade grade_row(MetricKind metric, double value) {
  if (!std::isfinite(value)) fail(ErrorCode::InvalidArgument, "row value must be finite");
  if (metric == MetricKind::AUROC) {
    if (value >= 0.60) return Grade::Pass;
    if (value < 0.55) return Grade::Fail;
    return Grade::Marginal;
  }
  if (value <= 0.15) return Grade::Pass;
  if (value > 0.25) return Grade::Fail;
  return Grade::Marginal;
}

namespace {

constexpr SignalKind kRowSignals[6] = {SignalKind::FOK,  SignalKind::FOK,
                                       SignalKind::JOL,  SignalKind::JOL,
                                       SignalKind::Joint, SignalKind::Joint};
constexpr MetricKind kRowMetrics[6] = {MetricKind::AUROC, MetricKind::ECE,
                                       MetricKind::AUROC, MetricKind::ECE,
                                       MetricKind::AUROC, MetricKind::ECE};

}  // namespace

VerdictResult verdict(const std::vector<RowGrade>& rows) {
  if (rows.size() != 6) {
    fail(ErrorCode::WrongRowCount, "expected 6 rows, got " + std::to_string(rows.size()));
  }
  for (int i = 0; i < 6; ++i) {
    if (rows[static_cast<std::size_t>(i)].signal != kRowSignals[i] ||
        rows[static_cast<std::size_t>(i)].metric != kRowMetrics[i]) {
      fail(ErrorCode::WrongRowCount, "rows must be FOK/JOL/Joint x AUROC/ECE in order");
    }
  }

  bool all_pass = true;
  bool any_fail = false;
  bool any_ece_fail = false;
  bool any_raw_auroc_fail = false;
  for (const auto& r : rows) {
    if (r.grade != Grade::Pass) all_pass = false;
    if (r.grade == Grade::Fail) {
      any_fail = true;
      if (r.metric == MetricKind::ECE) any_ece_fail = true;
      if (r.metric == MetricKind::AUROC && r.signal != SignalKind::Joint) {
        any_raw_auroc_fail = true;
      }
    }
  }
  const bool joint_auroc_fail = rows[4].grade == Grade::Fail;

  if (all_pass) return {Verdict::CalibratedMetacognition, false};
  if (joint_auroc_fail) return {Verdict::AbsentMetacognitiveSignal, false};
  if (any_ece_fail) return {Verdict::DiscriminativeButMiscalibrated, false};
  if (!any_fail) return {Verdict::AdequateMetacognition, false};
  // Remaining case: a raw-signal AUROC failed, nothing else did, and the
  // joint signal still discriminates.
  (void)any_raw_auroc_fail;
  return {Verdict::DiscriminativeButMiscalibrated, true};
}

ReportCard build_report_card(const std::string& model_id,
                             const std::vector<AnchorTriple>& anchors,
                             const SearchDiagnostics& search) {
  if (anchors.size() < 20) {
    fail(ErrorCode::TooFewAnchors, "report card needs at least 20 anchors");
  }
  std::vector<double> fok, jol;
  std::vector<int> y;
  fok.reserve(anchors.size());
  jol.reserve(anchors.size());
  y.reserve(anchors.size());
  for (const auto& a : anchors) {
    fok.push_back(a.fok);
    jol.push_back(a.jol);
    y.push_back(a.y);
  }

  ReportCard card;
  card.model_id = model_id;
  card.n_anchors = static_cast<int>(anchors.size());
  card.ece_bins = 10;
  card.cv_seed = search.seed;

  const double values[6] = {auroc(fok, y), ece(fok, y, card.ece_bins),
                            auroc(jol, y), ece(jol, y, card.ece_bins),
                            search.winner_oof_auroc, search.winner_oof_ece};
  for (int i = 0; i < 6; ++i) {
    RowGrade row;
    row.signal = kRowSignals[i];
    row.metric = kRowMetrics[i];
    row.value = values[i];
    row.grade = grade_row(row.metric, row.value);
    card.rows[static_cast<std::size_t>(i)] = row;
  }
  const VerdictResult v = verdict({card.rows.begin(), card.rows.end()});
  card.verdict = v.verdict;
  card.mixed_discrimination_warning = v.mixed_discrimination_warning;
  return card;
}

json report_card_to_json(const ReportCard& card) {
  json rows = json::array();
  for (const auto& r : card.rows) {
    rows.push_back(json{{"signal", signal_kind_to_string(r.signal)},
                        {"metric", metric_kind_to_string(r.metric)},
                        {"value", r.value},
                        {"grade", grade_to_string(r.grade)}});
  }
  return json{{"format", "metaharness-report-card"},
              {"version", 1},
              {"model_id", card.model_id},
              {"rows", rows},
              {"verdict", verdict_to_string(card.verdict)},
              {"mixed_discrimination_warning", card.mixed_discrimination_warning},
              {"n_anchors", card.n_anchors},
              {"ece_bins", card.ece_bins},
              {"cv_seed", card.cv_seed}};
}

ReportCard report_card_from_json(const json& j) {
  try {
    ReportCard card;
    card.model_id = j.at("model_id").get<std::string>();
    const auto& rows = j.at("rows");
    if (rows.size() != 6) fail(ErrorCode::WrongRowCount, "expected 6 rows");
    for (int i = 0; i < 6; ++i) {
      RowGrade r;
      r.signal = kRowSignals[i];
      r.metric = kRowMetrics[i];
      r.value = rows.at(static_cast<std::size_t>(i)).at("value").get<double>();
      r.grade = grade_from_string(
          rows.at(static_cast<std::size_t>(i)).at("grade").get<std::string>());
      card.rows[static_cast<std::size_t>(i)] = r;
    }
    card.verdict = verdict_from_string(j.at("verdict").get<std::string>());
    card.mixed_discrimination_warning = j.value("mixed_discrimination_warning", false);
    card.n_anchors = j.at("n_anchors").get<int>();
    card.ece_bins = j.at("ece_bins").get<int>();
    card.cv_seed = j.at("cv_seed").get<std::uint64_t>();
    return card;
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    fail(ErrorCode::ParseError, std::string("malformed report card: ") + e.what());
  }
}

std::string report_card_text(const ReportCard& card) {
  std::ostringstream out;
  out << "Metacognition diagnosis: " << card.model_id << "\n";
  out << "----------------------------------------------\n";
  out << "  Signal  Metric  Value   Grade\n";
  for (const auto& r : card.rows) {
    char value[16];
    std::snprintf(value, sizeof(value), "%.3f", r.value);
    char line[96];
    std::snprintf(line, sizeof(line), "  %-7s %-7s %-7s %s\n",
                  signal_kind_to_string(r.signal), metric_kind_to_string(r.metric), value,
                  grade_to_string(r.grade));
    out << line;
  }
  out << "----------------------------------------------\n";
  out << "Verdict: " << verdict_to_string(card.verdict);
  if (card.mixed_discrimination_warning) {
    out << " (warning: raw-signal discrimination failure)";
  }
  out << "\n";
  out << "(n=" << card.n_anchors << " anchors, ECE bins=" << card.ece_bins
      << ", CV seed=" << card.cv_seed << ")\n";
  return out.str();
}

}  // namespace metaharness
