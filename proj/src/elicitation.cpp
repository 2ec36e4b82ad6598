#include "metaharness/elicitation.hpp"

#include <cmath>
#include <cstdio>

#include <nlohmann/json.hpp>

#include "metaharness/rng.hpp"

namespace metaharness {

namespace {

// Stage prompt templates. Placeholders are substituted verbatim; nothing else
// may vary between runs.

constexpr const char* kFokSystemPrompt =
    "You are a metacognitive assessment agent.\n"
    "**FOK (Feeling of Knowing)**: Look at the problem and quickly assess — do you feel "
    "you know the answer? Give a gut-feeling score (0-1), a brief domain label, and a "
    "short reason explaining your intuition (e.g. \"I recognize this type of problem\" "
    "or \"the notation is unfamiliar\"). Do NOT attempt to solve, compute, or derive "
    "anything. No calculations, no steps, no partial answers — only metacognitive "
    "self-assessment. Your ENTIRE response must be a single tool call.";

constexpr const char* kSolveSystemPrompt =
    "You are a careful problem-solving agent. Work through the problem step by step in "
    "the `reasoning` field and give your final answer in the `answer` field.\n"
    "**JOL (Judgment of Learning)**: After solving, report how confident you are that "
    "your answer is correct — a score (0-1) and a brief reason for that confidence "
    "level, specific to this attempt (e.g. \"confident because I verified with two "
    "methods\" or \"unsure because the edge case is tricky\"). Your ENTIRE response "
    "must be a single tool call.";

constexpr const char* kSelectSystemPrompt =
    "You are a meticulous answer judge. You will see a problem (and image, if any) "
    "along with several candidate solution attempts. Each attempt has its own "
    "reasoning and proposed answer.\n"
    "\n"
    "YOUR TASK: select the SINGLE BEST attempt by its index. You are NOT allowed to "
    "produce a new answer; you are only choosing which existing attempt is most "
    "likely correct.\n"
    "\n"
    "Selection criteria (in order of importance):\n"
    "1. Internal consistency of reasoning — does each step follow from the previous?\n"
    "2. Mathematical / logical validity — are computations and deductions correct?\n"
    "3. Alignment with the problem statement and image (if any).\n"
    "4. Robustness — does the conclusion hold up under scrutiny?\n"
    "\n"
    "DO NOT: invent a new answer not present in any attempt; re-solve the problem "
    "from scratch; be biased by attempt order — the candidates are presented in "
    "random order.";

constexpr const char* kRetryBlockHeader =
    "## Previous Attempts\n"
    "The following are your previous attempts at this problem. Each attempt includes "
    "the answer, confidence (JOL), and the reason for that confidence level. You "
    "should try a DIFFERENT approach and address the concerns raised in previous JOL "
    "reasons.\n";

ToolSchema fok_schema() {
  return ToolSchema{"FOK",
                    {{"domain", FieldKind::string_field, 0, 0},
                     {"FOK_score", FieldKind::unit_interval, 0, 0},
                     {"FOK_reason", FieldKind::string_field, 0, 0}}};
}

ToolSchema solve_schema() {
  return ToolSchema{"solve_with_JOL",
                    {{"reasoning", FieldKind::string_field, 0, 0},
                     {"answer", FieldKind::string_field, 0, 0},
                     {"JOL_score", FieldKind::unit_interval, 0, 0},
                     {"JOL_reason", FieldKind::string_field, 0, 0}}};
}

ToolSchema select_schema(int n) {
  return ToolSchema{"select_attempt",
                    {{"selected_index", FieldKind::bounded_integer, 1, n},
                     {"justification", FieldKind::string_field, 0, 0}}};
}

std::string problem_block(const Problem& problem) {
  return "## Problem\n\n" + problem.text;
}

std::string solve_preamble(const Problem& problem, const FokReport& fok) {
  return problem_block(problem) + "\nYour FOK score was " + format_score(fok.fok_score) +
         ".\nFOK reason: " + fok.fok_reason + "\n";
}

void validate_problem_input(const Problem& problem) { validate_problem(problem); }

}  // namespace

const char* stage_to_string(Stage s) {
  switch (s) {
    case Stage::fok: return "fok";
    case Stage::solve: return "solve";
    case Stage::select: return "select";
  }
  return "fok";
}

std::string format_score(double score) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%.2f", score);
  return buf;
}

json tool_schema_to_json(const ToolSchema& schema) {
  json properties = json::object();
  json required = json::array();
  for (const auto& f : schema.required_fields) {
    json prop;
    switch (f.kind) {
      case FieldKind::string_field:
        prop = {{"type", "string"}};
        break;
      case FieldKind::unit_interval:
        prop = {{"type", "number"}, {"minimum", 0}, {"maximum", 1}};
        break;
      case FieldKind::bounded_integer:
        prop = {{"type", "integer"}, {"minimum", f.min}, {"maximum", f.max}};
        break;
    }
    properties[f.name] = prop;
    required.push_back(f.name);
  }
  return json{{"name", schema.name},
              {"input_schema", {{"type", "object"},
                                {"properties", properties},
                                {"required", required}}}};
}

StageRequest build_fok_request(const Problem& problem) {
  validate_problem_input(problem);
  StageRequest req;
  req.stage = Stage::fok;
  req.system_prompt = kFokSystemPrompt;
  req.user_prompt =
      problem_block(problem) + "\n\nGive your Feeling of Knowing. Call `FOK` now.";
  req.tool_schema = fok_schema();
  req.attachment = problem.attachment;
  req.problem_id = problem.id;
  req.history_len = 0;
  return req;
}

namespace {

StageRequest build_solve_common(const Problem& problem, const FokReport& fok,
                                const RetryHistory& history,
                                const std::vector<std::string>* reasonings, int k_max) {
  validate_problem_input(problem);
  if (static_cast<int>(history.size()) >= k_max) {
    fail(ErrorCode::BudgetExceeded,
         "history already holds " + std::to_string(history.size()) + " of " +
             std::to_string(k_max) + " attempts");
  }
  StageRequest req;
  req.stage = Stage::solve;
  req.system_prompt = kSolveSystemPrompt;
  req.tool_schema = solve_schema();
  req.attachment = problem.attachment;
  req.problem_id = problem.id;
  req.history_len = static_cast<int>(history.size());

  std::string prompt = solve_preamble(problem, fok);
  if (history.empty()) {
    prompt += "Now solve the problem and report your JOL. Call `solve_with_JOL` now.";
  } else {
    prompt += "\n";
    prompt += kRetryBlockHeader;
    for (std::size_t i = 0; i < history.size(); ++i) {
      prompt += "\n### Attempt #" + std::to_string(i + 1) + "\n";
      prompt += "- **Answer**: " + history[i].answer + "\n";
      prompt += "- **JOL Score**: " + format_score(history[i].jol_score) + "\n";
      prompt += "- **JOL Reason**: " + history[i].jol_reason + "\n";
      if (reasonings) {
        prompt += "- **Reasoning**: " + (*reasonings)[i] + "\n";
      }
    }
    prompt += "\nNow try again with a different method. Call `solve_with_JOL` now.";
  }
  req.user_prompt = std::move(prompt);
  return req;
}

}  // namespace

StageRequest build_solve_request(const Problem& problem, const FokReport& fok,
                                 const RetryHistory& history, int k_max) {
  return build_solve_common(problem, fok, history, nullptr, k_max);
}

StageRequest build_solve_request_full_context(const Problem& problem, const FokReport& fok,
                                              const std::vector<Attempt>& attempts,
                                              int k_max) {
  std::vector<std::string> reasonings;
  reasonings.reserve(attempts.size());
  for (const auto& a : attempts) reasonings.push_back(a.reasoning);
  return build_solve_common(problem, fok, make_retry_context(attempts), &reasonings, k_max);
}

StageRequest build_select_request(const Problem& problem, const AggContext& ctx) {
  validate_problem_input(problem);
  const int n = static_cast<int>(ctx.items.size());
  if (n < 2) {
    fail(ErrorCode::TooFewAttempts, "selection needs at least 2 candidate attempts");
  }
  if (static_cast<int>(ctx.permutation.size()) != n) {
    fail(ErrorCode::InvalidArgument, "permutation size must match item count");
  }

  std::string prompt = problem_block(problem) + "\n";
  prompt += "## Candidate Attempts (" + std::to_string(n) + " total, shown in random order)\n";
  for (int shown = 0; shown < n; ++shown) {
    const auto& item = ctx.items[static_cast<std::size_t>(ctx.permutation[shown])];
    prompt += "### Attempt " + std::to_string(shown + 1) + "\n";
    prompt += "**Answer:** " + item.answer + "\n";
    prompt += "**Reasoning:**\n" + item.reasoning + "\n\n";
  }
  prompt += "Examine the attempts above and call the `select_attempt` tool with the index "
            "(1.." + std::to_string(n) + ") of the single best attempt.";

  StageRequest req;
  req.stage = Stage::select;
  req.system_prompt = kSelectSystemPrompt;
  req.user_prompt = std::move(prompt);
  req.tool_schema = select_schema(n);
  req.attachment = problem.attachment;
  req.problem_id = problem.id;
  req.history_len = n;
  return req;
}

RetryHistory make_retry_context(const std::vector<Attempt>& attempts) {
  RetryHistory history;
  history.reserve(attempts.size());
  for (const auto& a : attempts) {
    history.push_back(RetryHistoryItem{a.answer, a.jol.jol_score, a.jol.jol_reason});
  }
  return history;
}

AggContext make_agg_context(const std::vector<Attempt>& attempts, std::uint64_t rng_seed) {
  if (attempts.size() < 2) {
    fail(ErrorCode::TooFewAttempts, "aggregation context needs at least 2 attempts");
  }
  AggContext ctx;
  ctx.items.reserve(attempts.size());
  for (const auto& a : attempts) ctx.items.push_back(AggContext::Item{a.reasoning, a.answer});
  ctx.permutation.resize(attempts.size());
  for (std::size_t i = 0; i < attempts.size(); ++i) ctx.permutation[i] = static_cast<int>(i);
  Rng rng(mix_seed(rng_seed, fnv1a64("agg-permutation")));
  rng.shuffle(ctx.permutation);
  return ctx;
}

int original_index_of_shown(const AggContext& ctx, int shown_index_1based) {
  if (shown_index_1based < 1 ||
      shown_index_1based > static_cast<int>(ctx.permutation.size())) {
    fail(ErrorCode::OutOfRange, "shown index outside 1..N");
  }
  return ctx.permutation[static_cast<std::size_t>(shown_index_1based - 1)] + 1;
}

json parse_tool_call(const json& payload, const ToolSchema& schema) {
  // Locate the first tool call whose declared name matches the schema.
  const json* arguments = nullptr;
  try {
    if (payload.contains("choices") && payload.at("choices").is_array()) {
      for (const auto& choice : payload.at("choices")) {
        if (!choice.contains("message")) continue;
        const json& message = choice.at("message");
        if (!message.contains("tool_calls") || !message.at("tool_calls").is_array()) continue;
        for (const auto& call : message.at("tool_calls")) {
          if (!call.contains("function")) continue;
          const json& fn = call.at("function");
          if (fn.value("name", std::string{}) != schema.name) continue;
          arguments = &fn.at("arguments");
          break;
        }
        if (arguments) break;
      }
    }
  } catch (const json::exception&) {
    arguments = nullptr;
  }
  if (!arguments) {
    fail(ErrorCode::MissingToolCall, "no `" + schema.name + "` tool call in response");
  }

  json args;
  if (arguments->is_string()) {
    try {
      args = json::parse(arguments->get<std::string>());
    } catch (const json::exception&) {
      fail(ErrorCode::MissingToolCall, "tool call arguments are not valid JSON");
    }
  } else if (arguments->is_object()) {
    args = *arguments;
  } else {
    fail(ErrorCode::MissingToolCall, "tool call arguments are not an object");
  }

  json out = json::object();
  for (const auto& field : schema.required_fields) {
    if (!args.contains(field.name)) {
      fail(ErrorCode::MissingField, field.name);
    }
    const json& v = args.at(field.name);
    switch (field.kind) {
      case FieldKind::string_field: {
        if (!v.is_string()) fail(ErrorCode::MissingField, field.name + " (not a string)");
        out[field.name] = v.get<std::string>();
        break;
      }
      case FieldKind::unit_interval: {
        if (!v.is_number()) fail(ErrorCode::MissingField, field.name + " (not a number)");
        const double d = v.get<double>();
        if (!(d >= 0.0 && d <= 1.0) || !std::isfinite(d)) {
          fail(ErrorCode::OutOfRange, field.name);
        }
        out[field.name] = d;
        break;
      }
      case FieldKind::bounded_integer: {
        long value = 0;
        if (v.is_number_integer()) {
          value = v.get<long>();
        } else if (v.is_number_float() &&
                   std::floor(v.get<double>()) == v.get<double>()) {
          value = static_cast<long>(v.get<double>());
        } else {
          fail(ErrorCode::MissingField, field.name + " (not an integer)");
        }
        if (value < field.min || value > field.max) {
          fail(ErrorCode::OutOfRange, field.name);
        }
        out[field.name] = value;
        break;
      }
    }
  }
  return out;
}

}  // namespace metaharness
