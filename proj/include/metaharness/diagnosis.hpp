#pragma once

#include <array>
#include <string>
#include <vector>

#include "metaharness/controller.hpp"
#include "metaharness/core_types.hpp"

namespace metaharness {

// Grades the six diagnosis rows ({FOK, JOL, Joint} x {AUROC, ECE}) against the
// fixed rubric and rolls them into a verdict. The verdict gates whether a
// model's signals should drive a controller at all.

enum class Grade { Pass, Marginal, Fail };
enum class MetricKind { AUROC, ECE };
enum class SignalKind { FOK, JOL, Joint };

const char* grade_to_string(Grade g);
Grade grade_from_string(const std::string& s);
const char* metric_kind_to_string(MetricKind m);
const char* signal_kind_to_string(SignalKind s);

struct RowGrade {
  SignalKind signal = SignalKind::FOK;
  MetricKind metric = MetricKind::AUROC;
  double value = 0.0;
  Grade grade = Grade::Fail;
};

enum class Verdict {
  CalibratedMetacognition,
  AdequateMetacognition,
  DiscriminativeButMiscalibrated,
  AbsentMetacognitiveSignal,
};

const char* verdict_to_string(Verdict v);
Verdict verdict_from_string(const std::string& s);

// AUROC: >= 0.60 Pass, < 0.55 Fail, else Marginal.
// ECE:   <= 0.15 Pass, > 0.25 Fail, else Marginal.
Grade grade_row(MetricKind metric, double value);

struct VerdictResult {
  Verdict verdict = Verdict::AbsentMetacognitiveSignal;
  // Set when a raw-signal AUROC fails while the joint signal still
  // discriminates; the roll-up for that mix is a documented choice.
  bool mixed_discrimination_warning = false;
};

// Requires exactly the six canonical rows (WrongRowCount otherwise).
// Precedence: all pass -> Calibrated; Joint AUROC fail -> Absent; any ECE
// fail -> DiscriminativeButMiscalibrated; no fail -> Adequate; remaining
// mixes -> DiscriminativeButMiscalibrated with the warning flag.
VerdictResult verdict(const std::vector<RowGrade>& rows);

struct ReportCard {
  std::string model_id;
  std::array<RowGrade, 6> rows;  // FOK/JOL/Joint x AUROC/ECE, in that order
  Verdict verdict = Verdict::AbsentMetacognitiveSignal;
  bool mixed_discrimination_warning = false;
  int n_anchors = 0;
  int ece_bins = 10;
  std::uint64_t cv_seed = 0;
};

// FOK/JOL rows from the raw anchor scores; Joint rows from the winning
// controller's calibrated out-of-fold metrics.
ReportCard build_report_card(const std::string& model_id,
                             const std::vector<AnchorTriple>& anchors,
                             const SearchDiagnostics& search);

json report_card_to_json(const ReportCard& card);
ReportCard report_card_from_json(const json& j);

// Plain-text card with the six-row layout.
std::string report_card_text(const ReportCard& card);

}  // namespace metaharness
