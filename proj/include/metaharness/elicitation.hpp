#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "metaharness/core_types.hpp"

namespace metaharness {

// Builds the stage requests of the control loop and parses structured
// tool-call responses. The prompt templates are frozen: tests compare them
// byte for byte, so edits here are protocol changes, not wording tweaks.

enum class Stage { fok, solve, select };

const char* stage_to_string(Stage s);

enum class FieldKind { string_field, unit_interval, bounded_integer };

struct FieldSpec {
  std::string name;
  FieldKind kind = FieldKind::string_field;
  long min = 0;  // bounded_integer only
  long max = 0;
};

struct ToolSchema {
  std::string name;
  std::vector<FieldSpec> required_fields;
};

// JSON-schema-style rendering used on the wire and in logs.
json tool_schema_to_json(const ToolSchema& schema);

struct StageRequest {
  Stage stage = Stage::fok;
  std::string system_prompt;
  std::string user_prompt;
  ToolSchema tool_schema;
  std::optional<Attachment> attachment;
  // Plumbing consumed by the simulator and the logs; the HTTP backend never
  // sends these.
  std::string problem_id;
  int history_len = 0;
};

// Compact metacognitive history shown to retries: answers and JOL reports
// only, never reasoning traces.
struct RetryHistoryItem {
  std::string answer;
  double jol_score = 0.0;
  std::string jol_reason;
};
using RetryHistory = std::vector<RetryHistoryItem>;

// What the aggregation verifier sees: reasoning and answers only, never FOK
// or JOL fields, presented in a seeded random order.
struct AggContext {
  struct Item {
    std::string reasoning;
    std::string answer;
  };
  std::vector<Item> items;        // original attempt order
  std::vector<int> permutation;   // shown position (0-based) -> original index (0-based)
};

// Scores are rendered with two decimals wherever they appear in prompts.
std::string format_score(double score);

StageRequest build_fok_request(const Problem& problem);

// First attempt when history is empty; retry form otherwise. Throws
// BudgetExceeded once history length reaches k_max.
StageRequest build_solve_request(const Problem& problem, const FokReport& fok,
                                 const RetryHistory& history, int k_max);

// Ablation variant that additionally exposes prior reasoning traces.
StageRequest build_solve_request_full_context(const Problem& problem, const FokReport& fok,
                                              const std::vector<Attempt>& attempts,
                                              int k_max);

// Requires at least two candidates (TooFewAttempts otherwise).
StageRequest build_select_request(const Problem& problem, const AggContext& ctx);

RetryHistory make_retry_context(const std::vector<Attempt>& attempts);

// Permutation drawn deterministically from rng_seed; the inverse is
// recoverable from the stored mapping. Throws TooFewAttempts below 2.
AggContext make_agg_context(const std::vector<Attempt>& attempts, std::uint64_t rng_seed);

int original_index_of_shown(const AggContext& ctx, int shown_index_1based);

// Extracts and validates the declared tool call from a chat-completions style
// payload. Returns exactly the schema's required fields; content outside the
// tool call is ignored. Throws MissingToolCall / MissingField / OutOfRange,
// all of which the caller treats as retryable elicitation failures.
json parse_tool_call(const json& payload, const ToolSchema& schema);

}  // namespace metaharness
