#include "metaharness/harness.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>

#include <nlohmann/json.hpp>

#include "metaharness/rng.hpp"

namespace metaharness {

namespace {

struct GateResult {
  std::optional<double> p;
  bool stop = false;
};

using Gate = std::function<GateResult(int k, const FokReport& fok, const Attempt& attempt)>;

enum class ContextMode { compact, none, full };

bool is_retryable_elicitation_failure(const Error& e) {
  switch (e.code()) {
    case ErrorCode::MissingToolCall:
    case ErrorCode::MissingField:
    case ErrorCode::OutOfRange:
    case ErrorCode::EmptyAnswer:
    case ErrorCode::InvalidArgument:
      return true;
    default:
      return false;
  }
}

// One stage with up to `cap` re-invocations: invoke, parse the tool call,
// build the domain record. A try that fails anywhere along that chain counts
// against the cap; its token usage still counts toward the trajectory total.
// Returns nullopt when the cap is exhausted. Transport errors propagate.
template <typename T, typename Builder>
std::optional<T> try_stage(Backend& backend, const StageRequest& request,
                           std::uint64_t stage_seed, int cap, TokenUsage& usage,
                           const Builder& builder) {
  for (int retry = 0; retry <= cap; ++retry) {
    const BackendResult result =
        backend.invoke(request, mix_seed(stage_seed, static_cast<std::uint64_t>(retry)));
    usage += result.usage;
    try {
      return builder(parse_tool_call(result.payload, request.tool_schema), result.usage);
    } catch (const Error& e) {
      if (!is_retryable_elicitation_failure(e)) throw;
    }
  }
  return std::nullopt;
}

std::string consensus_key(const std::string& answer, Grader grader) {
  try {
    return normalize_answer(answer, grader);
  } catch (const Error&) {
    // Unparseable numerics still take part in consensus as plain strings.
    return normalize_answer(answer, Grader::exact_match);
  }
}

Trajectory run_with_gate(const Problem& problem, Backend& backend, const Gate& gate,
                         ContextMode ctx_mode, const HarnessConfig& config,
                         std::uint64_t seed, AggregationMode aggregation) {
  validate_problem(problem);
  if (config.k_max < 1) fail(ErrorCode::InvalidArgument, "k_max must be >= 1");

  TokenUsage usage;

  const auto fok_report = try_stage<FokReport>(
      backend, build_fok_request(problem), mix_seed(seed, fnv1a64("stage-fok")),
      config.elicitation_retry_cap, usage,
      [](const json& fields, const TokenUsage&) {
        return FokReport(fields.at("domain").get<std::string>(),
                         fields.at("FOK_score").get<double>(),
                         fields.at("FOK_reason").get<std::string>());
      });
  if (!fok_report) {
    fail(ErrorCode::ElicitationExhausted,
         "no usable FOK report for problem '" + problem.id + "'");
  }
  const FokReport fok = *fok_report;

  std::vector<Attempt> attempts;
  std::vector<std::optional<double>> decisions;
  StopReason stop_reason = StopReason::budget_exhausted;
  bool elicitation_fallback = false;

  for (int k = 1; k <= config.k_max; ++k) {
    StageRequest request;
    switch (ctx_mode) {
      case ContextMode::compact:
        request = build_solve_request(problem, fok, make_retry_context(attempts), config.k_max);
        break;
      case ContextMode::none:
        request = build_solve_request(problem, fok, RetryHistory{}, config.k_max);
        break;
      case ContextMode::full:
        request = build_solve_request_full_context(problem, fok, attempts, config.k_max);
        break;
    }
    auto attempt = try_stage<Attempt>(
        backend, request, mix_seed(seed, fnv1a64("stage-solve"), static_cast<std::uint64_t>(k)),
        config.elicitation_retry_cap, usage,
        [k](const json& fields, const TokenUsage& call_usage) {
          return Attempt(k, fields.at("reasoning").get<std::string>(),
                         fields.at("answer").get<std::string>(),
                         JolReport(fields.at("JOL_score").get<double>(),
                                   fields.at("JOL_reason").get<std::string>()),
                         call_usage);
        });
    if (!attempt) {
      if (attempts.empty()) {
        fail(ErrorCode::ElicitationExhausted,
             "no parseable solve attempt for problem '" + problem.id + "'");
      }
      elicitation_fallback = true;
      break;
    }
    attempts.push_back(std::move(*attempt));

    const GateResult g = gate(k, fok, attempts.back());
    decisions.push_back(g.p);
    if (g.stop) {
      stop_reason = StopReason::trusted;
      break;
    }
  }

  Trajectory t{problem.id,  fok,           std::move(attempts), std::move(decisions),
               stop_reason, FinalAnswer{}, seed,                TokenUsage{}};

  if (elicitation_fallback) {
    t.final = FinalAnswer{t.attempts.back().answer, FinalAnswer::Source::fallback_last,
                          static_cast<int>(t.attempts.size()), std::nullopt};
  } else if (t.attempts.size() == 1) {
    t.final = FinalAnswer{t.attempts.front().answer, FinalAnswer::Source::single_attempt,
                          1, std::nullopt};
  } else {
    HarnessConfig agg_config = config;
    agg_config.aggregation = aggregation;
    t.final = aggregate(problem, t.attempts, backend, agg_config, seed, usage);
  }
  t.total_usage = usage;
  validate_trajectory(t);
  return t;
}

}  // namespace

const char* aggregation_mode_to_string(AggregationMode m) {
  switch (m) {
    case AggregationMode::hybrid: return "hybrid";
    case AggregationMode::select_only: return "select_only";
    case AggregationMode::last_answer: return "last_answer";
    case AggregationMode::max_jol: return "max_jol";
  }
  return "hybrid";
}

const char* policy_kind_to_string(PolicyKind p) {
  switch (p) {
    case PolicyKind::pass1: return "pass1";
    case PolicyKind::harness: return "harness";
    case PolicyKind::fixed_k: return "fixed_k";
    case PolicyKind::jol_only: return "jol_only";
    case PolicyKind::fok_only: return "fok_only";
    case PolicyKind::hand_rule: return "hand_rule";
    case PolicyKind::random_retry: return "random_retry";
    case PolicyKind::no_prior_state: return "no_prior_state";
    case PolicyKind::full_reasoning_context: return "full_reasoning_context";
    case PolicyKind::last_answer: return "last_answer";
    case PolicyKind::max_jol: return "max_jol";
  }
  return "harness";
}

PolicyKind policy_kind_from_string(const std::string& s) {
  static const std::map<std::string, PolicyKind> kMap = {
      {"pass1", PolicyKind::pass1},
      {"harness", PolicyKind::harness},
      {"fixed_k", PolicyKind::fixed_k},
      {"jol_only", PolicyKind::jol_only},
      {"fok_only", PolicyKind::fok_only},
      {"hand_rule", PolicyKind::hand_rule},
      {"random_retry", PolicyKind::random_retry},
      {"no_prior_state", PolicyKind::no_prior_state},
      {"full_reasoning_context", PolicyKind::full_reasoning_context},
      {"last_answer", PolicyKind::last_answer},
      {"max_jol", PolicyKind::max_jol},
  };
  auto it = kMap.find(s);
  if (it == kMap.end()) fail(ErrorCode::ParseError, "unknown policy '" + s + "'");
  return it->second;
}

bool policy_needs_controller(PolicyKind p) {
  switch (p) {
    case PolicyKind::harness:
    case PolicyKind::jol_only:
    case PolicyKind::fok_only:
    case PolicyKind::no_prior_state:
    case PolicyKind::full_reasoning_context:
      return true;
    default:
      return false;
  }
}

std::uint64_t problem_seed(std::uint64_t global_seed, const std::string& problem_id) {
  return mix_seed(global_seed, fnv1a64(problem_id));
}

double expected_k_for_stop_rate(double stop_rate, int k_max) {
  if (stop_rate >= 1.0) return 1.0;
  if (stop_rate <= 0.0) return static_cast<double>(k_max);
  // E[min(Geometric(q), k_max)] = (1 - (1-q)^k_max) / q.
  return (1.0 - std::pow(1.0 - stop_rate, k_max)) / stop_rate;
}

double stop_rate_for_mean_k(double target_mean_k, int k_max) {
  if (target_mean_k <= 1.0) return 1.0;
  if (target_mean_k >= static_cast<double>(k_max)) return 0.0;
  double lo = 1e-12, hi = 1.0;
  for (int iter = 0; iter < 200; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (expected_k_for_stop_rate(mid, k_max) > target_mean_k) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

FinalAnswer ablation_finalize(const std::vector<Attempt>& attempts, AggregationMode mode) {
  if (attempts.empty()) fail(ErrorCode::TooFewAttempts, "no attempts to finalize");
  if (mode == AggregationMode::last_answer) {
    return FinalAnswer{attempts.back().answer, FinalAnswer::Source::selected,
                       attempts.back().k, std::string("last answer")};
  }
  if (mode == AggregationMode::max_jol) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < attempts.size(); ++i) {
      if (attempts[i].jol.jol_score > attempts[best].jol.jol_score) best = i;  // earliest wins ties
    }
    return FinalAnswer{attempts[best].answer, FinalAnswer::Source::selected,
                       attempts[best].k, std::string("highest JOL")};
  }
  fail(ErrorCode::InvalidArgument, "ablation_finalize handles last_answer and max_jol only");
}

FinalAnswer aggregate(const Problem& problem, const std::vector<Attempt>& attempts,
                      Backend& backend, const HarnessConfig& config, std::uint64_t seed,
                      TokenUsage& usage) {
  if (attempts.size() < 2) {
    fail(ErrorCode::TooFewAttempts, "aggregation needs at least 2 attempts");
  }
  if (config.aggregation == AggregationMode::last_answer ||
      config.aggregation == AggregationMode::max_jol) {
    return ablation_finalize(attempts, config.aggregation);
  }

  if (config.aggregation == AggregationMode::hybrid) {
    // Stage 1: strict majority on normalized answers.
    std::map<std::string, std::pair<int, std::size_t>> counts;  // key -> (count, first index)
    for (std::size_t i = 0; i < attempts.size(); ++i) {
      counts.emplace(consensus_key(attempts[i].answer, problem.grader), std::make_pair(0, i))
          .first->second.first += 1;
    }
    for (const auto& [key, entry] : counts) {
      if (2 * entry.first > static_cast<int>(attempts.size())) {
        return FinalAnswer{attempts[entry.second].answer, FinalAnswer::Source::consensus,
                           static_cast<int>(entry.second) + 1, std::nullopt};
      }
    }
  }

  // Stage 2: forced index selection over permuted (reasoning, answer) pairs.
  const AggContext ctx = make_agg_context(attempts, mix_seed(seed, fnv1a64("agg-perm")));
  const StageRequest request = build_select_request(problem, ctx);
  const auto selected = try_stage<FinalAnswer>(
      backend, request, mix_seed(seed, fnv1a64("stage-select")), config.elicitation_retry_cap,
      usage, [&](const json& fields, const TokenUsage&) {
        const int shown = static_cast<int>(fields.at("selected_index").get<long>());
        const int original = original_index_of_shown(ctx, shown);
        return FinalAnswer{attempts[static_cast<std::size_t>(original - 1)].answer,
                           FinalAnswer::Source::selected, original,
                           fields.at("justification").get<std::string>()};
      });
  if (selected) return *selected;

  // Stage 3: selection never parsed; fall back to the most recent attempt.
  return FinalAnswer{attempts.back().answer, FinalAnswer::Source::fallback_last,
                     static_cast<int>(attempts.size()), std::nullopt};
}

Trajectory run_problem(const Problem& problem, Backend& backend, const Controller& controller,
                       const HarnessConfig& config, std::uint64_t seed) {
  const Gate gate = [&controller](int, const FokReport& fok, const Attempt& attempt) {
    const Decision d = decide(controller, fok.fok_score, attempt.jol.jol_score);
    return GateResult{d.p_correct, d.stop};
  };
  return run_with_gate(problem, backend, gate, ContextMode::compact, config, seed,
                       config.aggregation);
}

Trajectory run_ablation_policy(const Problem& problem, Backend& backend, const Policy& policy,
                               const Controller* controller, const HarnessConfig& config,
                               std::uint64_t seed) {
  if (policy_needs_controller(policy.kind) && controller == nullptr) {
    fail(ErrorCode::InvalidArgument,
         std::string("policy ") + policy_kind_to_string(policy.kind) + " needs a controller");
  }

  const Gate controller_gate = [controller](int, const FokReport& fok, const Attempt& attempt) {
    const Decision d = decide(*controller, fok.fok_score, attempt.jol.jol_score);
    return GateResult{d.p_correct, d.stop};
  };
  const Gate never_stop = [](int, const FokReport&, const Attempt&) {
    return GateResult{std::nullopt, false};
  };

  HarnessConfig cfg = config;
  switch (policy.kind) {
    case PolicyKind::pass1: {
      cfg.k_max = 1;
      return run_with_gate(problem, backend, never_stop, ContextMode::compact, cfg, seed,
                           cfg.aggregation);
    }
    case PolicyKind::harness:
      return run_problem(problem, backend, *controller, cfg, seed);
    case PolicyKind::jol_only:
    case PolicyKind::fok_only: {
      const SignalMask want = policy.kind == PolicyKind::jol_only ? SignalMask::jol_only
                                                                  : SignalMask::fok_only;
      if (controller->mask != want) {
        fail(ErrorCode::InvalidArgument,
             std::string("policy ") + policy_kind_to_string(policy.kind) +
                 " requires a controller fitted with signal mask " +
                 signal_mask_to_string(want));
      }
      return run_with_gate(problem, backend, controller_gate, ContextMode::compact, cfg, seed,
                           cfg.aggregation);
    }
    case PolicyKind::hand_rule: {
      const double tau = policy.tau;
      const Gate gate = [tau](int, const FokReport& fok, const Attempt& attempt) {
        return GateResult{std::nullopt,
                          !hand_rule_retry(fok.fok_score, attempt.jol.jol_score, tau)};
      };
      return run_with_gate(problem, backend, gate, ContextMode::compact, cfg, seed,
                           cfg.aggregation);
    }
    case PolicyKind::random_retry: {
      const double stop_rate = policy.stop_rate;
      const std::uint64_t base = seed;
      const Gate gate = [stop_rate, base](int k, const FokReport&, const Attempt&) {
        Rng rng(mix_seed(base, fnv1a64("random-stop"), static_cast<std::uint64_t>(k)));
        return GateResult{std::nullopt, rng.bernoulli(stop_rate)};
      };
      return run_with_gate(problem, backend, gate, ContextMode::compact, cfg, seed,
                           cfg.aggregation);
    }
    case PolicyKind::fixed_k:
      // Independent sampling, best-of-N analogue: no gate, no retry context.
      return run_with_gate(problem, backend, never_stop, ContextMode::none, cfg, seed,
                           cfg.aggregation);
    case PolicyKind::no_prior_state:
      return run_with_gate(problem, backend, controller_gate, ContextMode::none, cfg, seed,
                           cfg.aggregation);
    case PolicyKind::full_reasoning_context:
      return run_with_gate(problem, backend, controller_gate, ContextMode::full, cfg, seed,
                           cfg.aggregation);
    case PolicyKind::last_answer:
      return run_with_gate(problem, backend, never_stop, ContextMode::none, cfg, seed,
                           AggregationMode::last_answer);
    case PolicyKind::max_jol:
      return run_with_gate(problem, backend, never_stop, ContextMode::none, cfg, seed,
                           AggregationMode::max_jol);
  }
  fail(ErrorCode::InvalidArgument, "unhandled policy");
}

}  // namespace metaharness
