#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "metaharness/errors.hpp"

namespace metaharness {

using json = nlohmann::json;

enum class Grader { exact_match, numeric_tolerance };

Grader grader_from_string(const std::string& s);
const char* grader_to_string(Grader g);

// Opaque pass-through blob; the harness never inspects the bytes.
struct Attachment {
  std::string media_type;
  std::string data;  // raw bytes, base64-coded on disk and on the wire
};

struct Problem {
  std::string id;
  std::string text;
  std::optional<Attachment> attachment;
  std::string domain_tag;
  std::optional<std::string> gold;
  Grader grader = Grader::exact_match;
};

// Throws InvalidArgument / UnparseableNumeric when the record is unusable.
void validate_problem(const Problem& p);

struct TokenUsage {
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;

  TokenUsage& operator+=(const TokenUsage& other) {
    input_tokens += other.input_tokens;
    output_tokens += other.output_tokens;
    return *this;
  }
};

// Pre-solve self-assessment. Scores outside [0,1] are rejected at
// construction, as is an empty reason.
struct FokReport {
  FokReport(std::string domain_label, double fok_score, std::string fok_reason);

  std::string domain_label;
  double fok_score;
  std::string fok_reason;
};

// Post-solve self-assessment attached to one attempt.
struct JolReport {
  JolReport(double jol_score, std::string jol_reason);

  double jol_score;
  std::string jol_reason;
};

struct Attempt {
  Attempt(int k, std::string reasoning, std::string answer, JolReport jol,
          TokenUsage usage);

  int k;  // 1-based attempt index
  std::string reasoning;
  std::string answer;
  JolReport jol;
  TokenUsage usage;
};

struct FinalAnswer {
  enum class Source { single_attempt, consensus, selected, fallback_last };

  std::string answer;  // byte-identical to one attempt's answer
  Source source = Source::single_attempt;
  std::optional<int> selected_original_index;  // 1-based, when source == selected
  std::optional<std::string> justification;
};

const char* final_source_to_string(FinalAnswer::Source s);
FinalAnswer::Source final_source_from_string(const std::string& s);

enum class StopReason { trusted, budget_exhausted };

const char* stop_reason_to_string(StopReason r);
StopReason stop_reason_from_string(const std::string& s);

// One problem's full run through the control loop.
struct Trajectory {
  std::string problem_id;
  FokReport fok;
  std::vector<Attempt> attempts;
  // Controller probability per attempt; empty slot when the policy at hand
  // makes no probabilistic decision (pass@1, hand rule, random retry).
  std::vector<std::optional<double>> decisions;
  StopReason stop_reason = StopReason::budget_exhausted;
  FinalAnswer final;
  std::uint64_t seed = 0;
  TokenUsage total_usage;  // attempts + FOK + aggregation + failed elicitations
};

// Attempt indices must be exactly 1..K; trusted stops must coincide with the
// last attempt's positive decision and no earlier one.
void validate_trajectory(const Trajectory& t);

// One diagnosis observation; the unit the controller is fitted on.
struct AnchorTriple {
  AnchorTriple(double fok, double jol, int y, std::string group_id = {});

  double fok;
  double jol;
  int y;  // 1 = the single-pass answer was correct
  std::string group_id;
};

// ---- answer canonicalization ------------------------------------------------

// Deterministic, idempotent canonical form used before any equality
// comparison. exact_match: trim, collapse internal whitespace, case-fold.
// numeric_tolerance: parse and re-render as the shortest round-trip decimal.
// Throws EmptyAnswer / UnparseableNumeric.
std::string normalize_answer(const std::string& raw, Grader grader);

// Correctness predicate shared by grading, oracle@K and the simulator's
// verifier stage. numeric_tolerance: |a - g| <= max(1e-9, 1e-6*|g|).
// Throws UnparseableNumeric when the numeric gold or answer does not parse.
bool answer_matches(const std::string& answer, const std::string& gold, Grader grader);

// ---- small shared string/encoding helpers -----------------------------------

std::string trim_copy(const std::string& s);
std::string base64_encode(const std::string& bytes);
std::string base64_decode(const std::string& text);  // throws ParseError

// ---- line-delimited input files ----------------------------------------------

// One JSON object per line: {id, text, attachment?: {base64, media_type},
// domain_tag?, gold?, grader?}. Throws ParseError naming the offending line.
std::vector<Problem> load_problems_jsonl(const std::string& path);
std::vector<Problem> parse_problems_jsonl(const std::string& content);

// One JSON object per line: {fok, jol, y, group_id?}.
std::vector<AnchorTriple> load_anchors_jsonl(const std::string& path);
std::vector<AnchorTriple> parse_anchors_jsonl(const std::string& content);

json problem_to_json(const Problem& p);
Problem problem_from_json(const json& j);

json fok_to_json(const FokReport& f);
FokReport fok_from_json(const json& j);
json jol_to_json(const JolReport& j);
JolReport jol_from_json(const json& jj);
json attempt_to_json(const Attempt& a);
Attempt attempt_from_json(const json& j);
json trajectory_to_json(const Trajectory& t);
Trajectory trajectory_from_json(const json& j);

}  // namespace metaharness
