#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "metaharness/backend.hpp"
#include "metaharness/controller.hpp"
#include "metaharness/core_types.hpp"
#include "metaharness/elicitation.hpp"

namespace metaharness {

// The run-time control loop: one FOK elicitation, Solve+JOL attempts gated by
// the controller up to K_max, then hybrid aggregation when several attempts
// exist.

enum class AggregationMode { hybrid, select_only, last_answer, max_jol };

const char* aggregation_mode_to_string(AggregationMode m);

struct HarnessConfig {
  int k_max = 4;
  AggregationMode aggregation = AggregationMode::hybrid;
  int elicitation_retry_cap = 3;  // re-invocations per stage on parse failure
};

enum class PolicyKind {
  pass1,
  harness,
  fixed_k,
  jol_only,
  fok_only,
  hand_rule,
  random_retry,
  no_prior_state,
  full_reasoning_context,
  last_answer,
  max_jol,
};

const char* policy_kind_to_string(PolicyKind p);
PolicyKind policy_kind_from_string(const std::string& s);

struct Policy {
  PolicyKind kind = PolicyKind::harness;
  double tau = 0.1;        // hand_rule threshold
  double stop_rate = 0.5;  // random_retry per-attempt stop probability
};

// Whether a policy's stop decisions come from a fitted controller.
bool policy_needs_controller(PolicyKind p);

// Per-problem seed; scheduling order never alters outputs.
std::uint64_t problem_seed(std::uint64_t global_seed, const std::string& problem_id);

// Stop probability q such that E[min(Geometric(q), k_max)] = target_mean_k.
double stop_rate_for_mean_k(double target_mean_k, int k_max);
double expected_k_for_stop_rate(double stop_rate, int k_max);

// One full control-loop run. Elicitation failures are retried up to the cap;
// if the loop already holds a parsed attempt the trajectory is finalized on
// the most recent one, otherwise the problem aborts with
// ElicitationExhausted. Backend transport errors propagate.
Trajectory run_problem(const Problem& problem, Backend& backend,
                       const Controller& controller, const HarnessConfig& config,
                       std::uint64_t seed);

// Table-style ablation and baseline variants; controller may be null for
// policies that do not gate on one.
Trajectory run_ablation_policy(const Problem& problem, Backend& backend,
                               const Policy& policy, const Controller* controller,
                               const HarnessConfig& config, std::uint64_t seed);

// Consensus on normalized answers, then forced index selection, then
// last-attempt fallback. Never fabricates an answer outside the attempt set.
FinalAnswer aggregate(const Problem& problem, const std::vector<Attempt>& attempts,
                      Backend& backend, const HarnessConfig& config, std::uint64_t seed,
                      TokenUsage& usage);

// last_answer / max_jol closers used by the aggregation ablations.
FinalAnswer ablation_finalize(const std::vector<Attempt>& attempts, AggregationMode mode);

}  // namespace metaharness
