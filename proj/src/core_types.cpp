#include "metaharness/core_types.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

namespace metaharness {

namespace {

void require_unit_interval(double v, const char* name) {
  if (!(v >= 0.0 && v <= 1.0)) {
    fail(ErrorCode::OutOfRange,
         std::string(name) + " = " + std::to_string(v) + " outside [0, 1]");
  }
}

void require_nonempty(const std::string& s, const char* name) {
  if (s.empty()) fail(ErrorCode::InvalidArgument, std::string(name) + " is empty");
}

bool is_space(char c) {
  return std::isspace(static_cast<unsigned char>(c)) != 0;
}

double parse_finite_double(const std::string& text) {
  const std::string t = trim_copy(text);
  if (t.empty()) fail(ErrorCode::UnparseableNumeric, "empty numeric string");
  double value = 0.0;
  const char* begin = t.data();
  const char* end = t.data() + t.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc{} || ptr != end || !std::isfinite(value)) {
    fail(ErrorCode::UnparseableNumeric, "not a finite number: '" + t + "'");
  }
  return value;
}

std::string shortest_double_repr(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  (void)ec;
  return std::string(buf, ptr);
}

}  // namespace

Grader grader_from_string(const std::string& s) {
  if (s == "exact_match") return Grader::exact_match;
  if (s == "numeric_tolerance") return Grader::numeric_tolerance;
  fail(ErrorCode::ParseError, "unknown grader '" + s + "'");
}

const char* grader_to_string(Grader g) {
  return g == Grader::exact_match ? "exact_match" : "numeric_tolerance";
}

void validate_problem(const Problem& p) {
  require_nonempty(p.id, "problem id");
  require_nonempty(p.text, "problem text");
  if (p.grader == Grader::numeric_tolerance && p.gold.has_value()) {
    parse_finite_double(*p.gold);  // throws UnparseableNumeric
  }
}

FokReport::FokReport(std::string domain_label_, double fok_score_, std::string fok_reason_)
    : domain_label(std::move(domain_label_)),
      fok_score(fok_score_),
      fok_reason(std::move(fok_reason_)) {
  require_unit_interval(fok_score, "fok_score");
  require_nonempty(fok_reason, "fok_reason");
}

JolReport::JolReport(double jol_score_, std::string jol_reason_)
    : jol_score(jol_score_), jol_reason(std::move(jol_reason_)) {
  require_unit_interval(jol_score, "jol_score");
  require_nonempty(jol_reason, "jol_reason");
}

Attempt::Attempt(int k_, std::string reasoning_, std::string answer_, JolReport jol_,
                 TokenUsage usage_)
    : k(k_),
      reasoning(std::move(reasoning_)),
      answer(std::move(answer_)),
      jol(std::move(jol_)),
      usage(usage_) {
  if (k < 1) fail(ErrorCode::InvalidArgument, "attempt index must be >= 1");
  if (trim_copy(answer).empty()) fail(ErrorCode::EmptyAnswer, "attempt answer is empty");
}

AnchorTriple::AnchorTriple(double fok_, double jol_, int y_, std::string group_id_)
    : fok(fok_), jol(jol_), y(y_), group_id(std::move(group_id_)) {
  require_unit_interval(fok, "fok");
  require_unit_interval(jol, "jol");
  if (y != 0 && y != 1) fail(ErrorCode::InvalidArgument, "label y must be 0 or 1");
}

const char* final_source_to_string(FinalAnswer::Source s) {
  switch (s) {
    case FinalAnswer::Source::single_attempt: return "single_attempt";
    case FinalAnswer::Source::consensus: return "consensus";
    case FinalAnswer::Source::selected: return "selected";
    case FinalAnswer::Source::fallback_last: return "fallback_last";
  }
  return "single_attempt";
}

FinalAnswer::Source final_source_from_string(const std::string& s) {
  if (s == "single_attempt") return FinalAnswer::Source::single_attempt;
  if (s == "consensus") return FinalAnswer::Source::consensus;
  if (s == "selected") return FinalAnswer::Source::selected;
  if (s == "fallback_last") return FinalAnswer::Source::fallback_last;
  fail(ErrorCode::ParseError, "unknown final answer source '" + s + "'");
}

const char* stop_reason_to_string(StopReason r) {
  return r == StopReason::trusted ? "trusted" : "budget_exhausted";
}

StopReason stop_reason_from_string(const std::string& s) {
  if (s == "trusted") return StopReason::trusted;
  if (s == "budget_exhausted") return StopReason::budget_exhausted;
  fail(ErrorCode::ParseError, "unknown stop reason '" + s + "'");
}

void validate_trajectory(const Trajectory& t) {
  if (t.attempts.empty()) fail(ErrorCode::InvalidArgument, "trajectory has no attempts");
  for (std::size_t i = 0; i < t.attempts.size(); ++i) {
    if (t.attempts[i].k != static_cast<int>(i) + 1) {
      fail(ErrorCode::InvalidArgument, "attempt indices must be exactly 1..K");
    }
  }
  if (t.decisions.size() > t.attempts.size()) {
    fail(ErrorCode::InvalidArgument, "more decisions than attempts");
  }
  if (t.stop_reason == StopReason::trusted) {
    if (t.decisions.size() != t.attempts.size()) {
      fail(ErrorCode::InvalidArgument, "trusted stop requires a decision per attempt");
    }
  }
}

std::string trim_copy(const std::string& s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return s.substr(b, e - b);
}

std::string normalize_answer(const std::string& raw, Grader grader) {
  const std::string trimmed = trim_copy(raw);
  if (trimmed.empty()) fail(ErrorCode::EmptyAnswer, "answer is empty after trimming");
  if (grader == Grader::numeric_tolerance) {
    return shortest_double_repr(parse_finite_double(trimmed));
  }
  std::string out;
  out.reserve(trimmed.size());
  bool pending_space = false;
  for (char c : trimmed) {
    if (is_space(c)) {
      pending_space = true;
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

bool answer_matches(const std::string& answer, const std::string& gold, Grader grader) {
  if (grader == Grader::numeric_tolerance) {
    const double a = parse_finite_double(answer);
    const double g = parse_finite_double(gold);
    return std::fabs(a - g) <= std::max(1e-9, 1e-6 * std::fabs(g));
  }
  return normalize_answer(answer, grader) == normalize_answer(gold, grader);
}

// ---- base64 ------------------------------------------------------------------

namespace {
constexpr char kB64Alphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int b64_value(char c) {
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= 'a' && c <= 'z') return c - 'a' + 26;
  if (c >= '0' && c <= '9') return c - '0' + 52;
  if (c == '+') return 62;
  if (c == '/') return 63;
  return -1;
}
}  // namespace

std::string base64_encode(const std::string& bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  while (i + 3 <= bytes.size()) {
    unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                 (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                 static_cast<unsigned char>(bytes[i + 2]);
    out.push_back(kB64Alphabet[(v >> 18) & 63]);
    out.push_back(kB64Alphabet[(v >> 12) & 63]);
    out.push_back(kB64Alphabet[(v >> 6) & 63]);
    out.push_back(kB64Alphabet[v & 63]);
    i += 3;
  }
  const std::size_t rest = bytes.size() - i;
  if (rest == 1) {
    unsigned v = static_cast<unsigned char>(bytes[i]) << 16;
    out.push_back(kB64Alphabet[(v >> 18) & 63]);
    out.push_back(kB64Alphabet[(v >> 12) & 63]);
    out.push_back('=');
    out.push_back('=');
  } else if (rest == 2) {
    unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                 (static_cast<unsigned char>(bytes[i + 1]) << 8);
    out.push_back(kB64Alphabet[(v >> 18) & 63]);
    out.push_back(kB64Alphabet[(v >> 12) & 63]);
    out.push_back(kB64Alphabet[(v >> 6) & 63]);
    out.push_back('=');
  }
  return out;
}

std::string base64_decode(const std::string& text) {
  std::string out;
  int acc = 0;
  int bits = 0;
  for (char c : text) {
    if (c == '=' || is_space(c)) continue;
    const int v = b64_value(c);
    if (v < 0) fail(ErrorCode::ParseError, "invalid base64 character");
    acc = (acc << 6) | v;
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<char>((acc >> bits) & 0xFF));
    }
  }
  return out;
}

// ---- JSON --------------------------------------------------------------------

json problem_to_json(const Problem& p) {
  json j{{"id", p.id},
         {"text", p.text},
         {"domain_tag", p.domain_tag},
         {"grader", grader_to_string(p.grader)}};
  if (p.gold) j["gold"] = *p.gold;
  if (p.attachment) {
    j["attachment"] = {{"media_type", p.attachment->media_type},
                       {"base64", base64_encode(p.attachment->data)}};
  }
  return j;
}

Problem problem_from_json(const json& j) {
  Problem p;
  p.id = j.at("id").get<std::string>();
  p.text = j.at("text").get<std::string>();
  p.domain_tag = j.value("domain_tag", std::string{});
  if (j.contains("gold") && !j.at("gold").is_null()) {
    if (j.at("gold").is_string()) {
      p.gold = j.at("gold").get<std::string>();
    } else {
      p.gold = j.at("gold").dump();
    }
  }
  p.grader = grader_from_string(j.value("grader", std::string("exact_match")));
  if (j.contains("attachment") && !j.at("attachment").is_null()) {
    Attachment a;
    a.media_type = j.at("attachment").value("media_type", std::string("application/octet-stream"));
    a.data = base64_decode(j.at("attachment").at("base64").get<std::string>());
    p.attachment = std::move(a);
  }
  validate_problem(p);
  return p;
}

json fok_to_json(const FokReport& f) {
  return json{{"domain", f.domain_label},
              {"FOK_score", f.fok_score},
              {"FOK_reason", f.fok_reason}};
}

FokReport fok_from_json(const json& j) {
  return FokReport(j.at("domain").get<std::string>(), j.at("FOK_score").get<double>(),
                   j.at("FOK_reason").get<std::string>());
}

json jol_to_json(const JolReport& j) {
  return json{{"JOL_score", j.jol_score}, {"JOL_reason", j.jol_reason}};
}

JolReport jol_from_json(const json& jj) {
  return JolReport(jj.at("JOL_score").get<double>(), jj.at("JOL_reason").get<std::string>());
}

json attempt_to_json(const Attempt& a) {
  return json{{"k", a.k},
              {"reasoning", a.reasoning},
              {"answer", a.answer},
              {"jol", jol_to_json(a.jol)},
              {"usage", {{"input_tokens", a.usage.input_tokens},
                         {"output_tokens", a.usage.output_tokens}}}};
}

Attempt attempt_from_json(const json& j) {
  TokenUsage u;
  u.input_tokens = j.at("usage").at("input_tokens").get<std::int64_t>();
  u.output_tokens = j.at("usage").at("output_tokens").get<std::int64_t>();
  return Attempt(j.at("k").get<int>(), j.at("reasoning").get<std::string>(),
                 j.at("answer").get<std::string>(), jol_from_json(j.at("jol")), u);
}

json trajectory_to_json(const Trajectory& t) {
  json attempts = json::array();
  for (const auto& a : t.attempts) attempts.push_back(attempt_to_json(a));
  json decisions = json::array();
  for (const auto& d : t.decisions) {
    if (d) {
      decisions.push_back(*d);
    } else {
      decisions.push_back(nullptr);
    }
  }
  json final{{"answer", t.final.answer},
             {"source", final_source_to_string(t.final.source)}};
  if (t.final.selected_original_index) {
    final["selected_original_index"] = *t.final.selected_original_index;
  }
  if (t.final.justification) final["justification"] = *t.final.justification;
  return json{{"problem_id", t.problem_id},
              {"fok", fok_to_json(t.fok)},
              {"attempts", attempts},
              {"decisions", decisions},
              {"stop_reason", stop_reason_to_string(t.stop_reason)},
              {"final", final},
              {"seed", t.seed},
              {"usage", {{"input_tokens", t.total_usage.input_tokens},
                         {"output_tokens", t.total_usage.output_tokens}}}};
}

Trajectory trajectory_from_json(const json& j) {
  Trajectory t{j.at("problem_id").get<std::string>(), fok_from_json(j.at("fok")),
               {}, {}, stop_reason_from_string(j.at("stop_reason").get<std::string>()),
               {}, j.at("seed").get<std::uint64_t>(), {}};
  for (const auto& a : j.at("attempts")) t.attempts.push_back(attempt_from_json(a));
  for (const auto& d : j.at("decisions")) {
    if (d.is_null()) {
      t.decisions.emplace_back(std::nullopt);
    } else {
      t.decisions.emplace_back(d.get<double>());
    }
  }
  const json& f = j.at("final");
  t.final.answer = f.at("answer").get<std::string>();
  t.final.source = final_source_from_string(f.at("source").get<std::string>());
  if (f.contains("selected_original_index")) {
    t.final.selected_original_index = f.at("selected_original_index").get<int>();
  }
  if (f.contains("justification")) {
    t.final.justification = f.at("justification").get<std::string>();
  }
  t.total_usage.input_tokens = j.at("usage").at("input_tokens").get<std::int64_t>();
  t.total_usage.output_tokens = j.at("usage").at("output_tokens").get<std::int64_t>();
  validate_trajectory(t);
  return t;
}

// ---- jsonl loaders -------------------------------------------------------------

namespace {

template <typename Fn>
auto parse_jsonl(const std::string& content, Fn per_line) {
  std::vector<decltype(per_line(json{}))> out;
  std::istringstream in(content);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim_copy(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
      out.push_back(per_line(j));
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      fail(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::ParseError, "cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::vector<Problem> parse_problems_jsonl(const std::string& content) {
  auto problems = parse_jsonl(content, [](const json& j) { return problem_from_json(j); });
  if (problems.empty()) fail(ErrorCode::ParseError, "no problem records found");
  std::unordered_set<std::string> seen;
  for (const auto& p : problems) {
    if (!seen.insert(p.id).second) {
      fail(ErrorCode::ParseError, "duplicate problem id '" + p.id + "'");
    }
  }
  return problems;
}

std::vector<Problem> load_problems_jsonl(const std::string& path) {
  return parse_problems_jsonl(read_file(path));
}

std::vector<AnchorTriple> parse_anchors_jsonl(const std::string& content) {
  auto anchors = parse_jsonl(content, [](const json& j) {
    return AnchorTriple(j.at("fok").get<double>(), j.at("jol").get<double>(),
                        j.at("y").get<int>(), j.value("group_id", std::string{}));
  });
  if (anchors.empty()) fail(ErrorCode::ParseError, "no anchor records found");
  return anchors;
}

std::vector<AnchorTriple> load_anchors_jsonl(const std::string& path) {
  return parse_anchors_jsonl(read_file(path));
}

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyAnswer: return "EmptyAnswer";
    case ErrorCode::UnparseableNumeric: return "UnparseableNumeric";
    case ErrorCode::MissingGold: return "MissingGold";
    case ErrorCode::MissingToolCall: return "MissingToolCall";
    case ErrorCode::MissingField: return "MissingField";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::BudgetExceeded: return "BudgetExceeded";
    case ErrorCode::TooFewAttempts: return "TooFewAttempts";
    case ErrorCode::ElicitationExhausted: return "ElicitationExhausted";
    case ErrorCode::AuthMissing: return "AuthMissing";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::TransportError: return "TransportError";
    case ErrorCode::RateLimited: return "RateLimited";
    case ErrorCode::DegenerateLabels: return "DegenerateLabels";
    case ErrorCode::TooFew: return "TooFew";
    case ErrorCode::NoMultiAttempt: return "NoMultiAttempt";
    case ErrorCode::TooFewAnchors: return "TooFewAnchors";
    case ErrorCode::AllCandidatesFailed: return "AllCandidatesFailed";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::ConstantFeature: return "ConstantFeature";
    case ErrorCode::WrongRowCount: return "WrongRowCount";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::CorruptArtifact: return "CorruptArtifact";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::LogMismatch: return "LogMismatch";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Error";
}

}  // namespace metaharness
