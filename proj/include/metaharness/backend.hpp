#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "metaharness/core_types.hpp"
#include "metaharness/elicitation.hpp"

namespace metaharness {

struct BackendConfig {
  std::string endpoint;  // e.g. https://host/v1/chat/completions
  std::string model;
  std::string api_key_env = "METAHARNESS_API_KEY";
  double temperature = 0.7;
  int max_output_tokens = 4096;
  double timeout_seconds = 120.0;
  int max_transport_retries = 3;
  double backoff_base_seconds = 0.5;
  bool debug_log = false;
};

// Generative model behind the test/desk backend. Each problem carries a
// latent solve probability p; FOK tracks p and JOL tracks the realized
// correctness of the attempt, both with optional bias and gaussian noise.
struct SimulatorSpec {
  double p = 0.5;
  bool latent_p_uniform = false;  // per-problem p ~ U(0,1) keyed by problem id
  std::uint64_t latent_seed = 0;
  double fok_noise_sd = 0.0;
  double jol_noise_sd = 0.0;
  double fok_bias = 0.0;
  double jol_bias = 0.0;
  std::vector<std::string> distractor_pool = {"alpha", "beta", "gamma", "delta"};
  // true: correctness redrawn per attempt; false: one draw per problem, so
  // every attempt at the same problem resolves the same way.
  bool independent_attempts = true;
};

struct PricingTable {
  double per_input_token = 0.0;
  double per_output_token = 0.0;
};

struct BackendResult {
  json payload;  // provider payload, untouched
  TokenUsage usage;
};

class Backend {
 public:
  virtual ~Backend() = default;
  // seed is ignored by real backends; the simulator derives every draw from it.
  virtual BackendResult invoke(const StageRequest& request, std::uint64_t seed) = 0;
};

// Latent p used by the simulator for one problem.
double simulator_latent_p(const SimulatorSpec& spec, const std::string& problem_id);

// Deterministic generative backend: the payload is a pure function of
// (spec, seed, stage, history length, problem).
BackendResult simulate(const StageRequest& request, const SimulatorSpec& spec,
                       std::uint64_t seed, const Problem& problem);

class SimBackend : public Backend {
 public:
  SimBackend(SimulatorSpec spec, std::vector<Problem> problems);

  BackendResult invoke(const StageRequest& request, std::uint64_t seed) override;

  const SimulatorSpec& spec() const { return spec_; }

 private:
  SimulatorSpec spec_;
  std::unordered_map<std::string, Problem> problems_;
};

// Chat-completions HTTP backend with declared tool calling. Transport
// failures retry with exponential backoff up to max_transport_retries and are
// surfaced as AuthMissing / Timeout / RateLimited / TransportError.
class HttpBackend : public Backend {
 public:
  explicit HttpBackend(BackendConfig config);

  BackendResult invoke(const StageRequest& request, std::uint64_t seed) override;

  // Receives request/response bodies (api key redacted) when debug_log is on.
  std::function<void(const json&)> debug_sink;

 private:
  BackendConfig config_;
};

json build_chat_request_body(const StageRequest& request, const BackendConfig& config);

double usage_cost(const TokenUsage& usage, const PricingTable& pricing);

}  // namespace metaharness
