#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "metaharness/backend.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "metaharness/rng.hpp"

namespace metaharness {

namespace {

std::string hex_token(std::uint64_t v, int digits) {
  static const char* k = "0123456789abcdef";
  std::string out(static_cast<std::size_t>(digits), '0');
  for (int i = digits - 1; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = k[v & 0xF];
    v >>= 4;
  }
  return out;
}

std::uint64_t stage_code(Stage s) {
  switch (s) {
    case Stage::fok: return 1;
    case Stage::solve: return 2;
    case Stage::select: return 3;
  }
  return 0;
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

TokenUsage approximate_usage(const StageRequest& request, const std::string& arguments) {
  TokenUsage u;
  u.input_tokens = static_cast<std::int64_t>(
      (request.system_prompt.size() + request.user_prompt.size()) / 4 + 1);
  u.output_tokens = static_cast<std::int64_t>(arguments.size() / 4 + 1);
  return u;
}

json wrap_tool_call(const StageRequest& request, const json& arguments,
                    const TokenUsage& usage, std::uint64_t call_seed) {
  return json{
      {"id", "sim-" + hex_token(call_seed, 16)},
      {"object", "chat.completion"},
      {"model", "simulator"},
      {"choices",
       json::array({json{{"index", 0},
                         {"finish_reason", "tool_calls"},
                         {"message",
                          {{"role", "assistant"},
                           {"content", ""},
                           {"tool_calls",
                            json::array({json{{"id", "call_0"},
                                              {"type", "function"},
                                              {"function",
                                               {{"name", request.tool_schema.name},
                                                {"arguments", arguments.dump()}}}}})}}}}})},
      {"usage",
       {{"prompt_tokens", usage.input_tokens}, {"completion_tokens", usage.output_tokens}}}};
}

// Shown-order answers as rendered by build_select_request.
std::vector<std::string> extract_candidate_answers(const std::string& user_prompt) {
  std::vector<std::string> answers;
  const std::string marker = "**Answer:** ";
  std::size_t pos = 0;
  while ((pos = user_prompt.find(marker, pos)) != std::string::npos) {
    pos += marker.size();
    const std::size_t end = user_prompt.find('\n', pos);
    answers.push_back(user_prompt.substr(pos, end == std::string::npos ? std::string::npos
                                                                       : end - pos));
    if (end == std::string::npos) break;
    pos = end;
  }
  return answers;
}

}  // namespace

double simulator_latent_p(const SimulatorSpec& spec, const std::string& problem_id) {
  if (!spec.latent_p_uniform) return spec.p;
  Rng rng(mix_seed(spec.latent_seed, fnv1a64(problem_id), fnv1a64("latent-p")));
  return rng.u01();
}

BackendResult simulate(const StageRequest& request, const SimulatorSpec& spec,
                       std::uint64_t seed, const Problem& problem) {
  if (spec.distractor_pool.empty()) {
    fail(ErrorCode::InvalidArgument, "simulator distractor pool is empty");
  }
  // The caller's seed already encodes the attempt index, so outcome draws stay
  // aligned across policies that share a seed (pass@1, fixed-K, harness).
  const std::uint64_t call_seed =
      mix_seed(seed, fnv1a64(problem.id), stage_code(request.stage));
  Rng rng(call_seed);
  const double p = simulator_latent_p(spec, problem.id);

  json arguments;
  switch (request.stage) {
    case Stage::fok: {
      const double noise = spec.fok_noise_sd > 0.0 ? rng.gaussian() * spec.fok_noise_sd : 0.0;
      arguments = json{
          {"domain", problem.domain_tag.empty() ? "general" : problem.domain_tag},
          {"FOK_score", clamp01(p + spec.fok_bias + noise)},
          {"FOK_reason", "intuition-" + hex_token(mix_seed(call_seed, 0xF0F0), 8)}};
      break;
    }
    case Stage::solve: {
      bool correct;
      if (spec.independent_attempts) {
        correct = rng.bernoulli(p);
      } else {
        // One resolution per problem: retries never change the outcome.
        Rng outcome(mix_seed(spec.latent_seed, fnv1a64(problem.id), fnv1a64("outcome")));
        correct = outcome.bernoulli(p);
      }
      if (!problem.gold) correct = false;
      // Wrong answers walk a per-problem offset through the pool, keyed by the
      // number of prior attempts the prompt carries, so retries within one
      // trajectory never repeat a distractor (as long as the pool covers
      // k_max) and a spurious consensus on a wrong answer cannot form.
      Rng pool_rng(mix_seed(spec.latent_seed, fnv1a64(problem.id), fnv1a64("distractor")));
      const std::size_t pool_base = static_cast<std::size_t>(
          pool_rng.bounded(spec.distractor_pool.size()));
      std::string answer =
          correct ? *problem.gold
                  : spec.distractor_pool[(pool_base +
                                          static_cast<std::size_t>(request.history_len)) %
                                         spec.distractor_pool.size()];
      const double noise = spec.jol_noise_sd > 0.0 ? rng.gaussian() * spec.jol_noise_sd : 0.0;
      const double jol = clamp01((correct ? 1.0 : 0.0) + spec.jol_bias + noise);
      arguments = json{
          {"reasoning", "trace-" + hex_token(mix_seed(call_seed, 0x7EA5E), 16)},
          {"answer", answer},
          {"JOL_score", jol},
          {"JOL_reason", "selfcheck-" + hex_token(mix_seed(call_seed, 0x5E1F), 8)}};
      break;
    }
    case Stage::select: {
      const auto answers = extract_candidate_answers(request.user_prompt);
      const int n = std::max(request.history_len, static_cast<int>(answers.size()));
      int selected = -1;
      if (problem.gold) {
        for (std::size_t i = 0; i < answers.size(); ++i) {
          bool match = false;
          try {
            match = answer_matches(answers[i], *problem.gold, problem.grader);
          } catch (const Error&) {
            match = false;
          }
          if (match) {
            selected = static_cast<int>(i) + 1;
            break;
          }
        }
      }
      if (selected < 0) {
        selected = static_cast<int>(rng.bounded(static_cast<std::uint64_t>(std::max(n, 1)))) + 1;
      }
      arguments = json{{"selected_index", selected},
                       {"justification", "most consistent with the problem statement"}};
      break;
    }
  }

  const TokenUsage usage = approximate_usage(request, arguments.dump());
  return BackendResult{wrap_tool_call(request, arguments, usage, call_seed), usage};
}

SimBackend::SimBackend(SimulatorSpec spec, std::vector<Problem> problems)
    : spec_(std::move(spec)) {
  for (auto& p : problems) {
    const std::string id = p.id;
    problems_.emplace(id, std::move(p));
  }
}

BackendResult SimBackend::invoke(const StageRequest& request, std::uint64_t seed) {
  auto it = problems_.find(request.problem_id);
  if (it == problems_.end()) {
    fail(ErrorCode::InvalidArgument,
         "simulator has no problem with id '" + request.problem_id + "'");
  }
  return simulate(request, spec_, seed, it->second);
}

json build_chat_request_body(const StageRequest& request, const BackendConfig& config) {
  const json schema = tool_schema_to_json(request.tool_schema);
  json user_content;
  if (request.attachment) {
    user_content = json::array(
        {json{{"type", "text"}, {"text", request.user_prompt}},
         json{{"type", "image_url"},
              {"image_url",
               {{"url", "data:" + request.attachment->media_type + ";base64," +
                            base64_encode(request.attachment->data)}}}}});
  } else {
    user_content = request.user_prompt;
  }
  return json{
      {"model", config.model},
      {"messages",
       json::array({json{{"role", "system"}, {"content", request.system_prompt}},
                    json{{"role", "user"}, {"content", user_content}}})},
      {"tools", json::array({json{{"type", "function"},
                                  {"function",
                                   {{"name", request.tool_schema.name},
                                    {"parameters", schema.at("input_schema")}}}}})},
      {"tool_choice",
       {{"type", "function"}, {"function", {{"name", request.tool_schema.name}}}}},
      {"temperature", config.temperature},
      {"max_tokens", config.max_output_tokens}};
}

HttpBackend::HttpBackend(BackendConfig config) : config_(std::move(config)) {
  if (config_.endpoint.empty()) {
    fail(ErrorCode::InvalidArgument, "http backend requires a nonempty endpoint");
  }
  if (!(config_.timeout_seconds > 0.0)) {
    fail(ErrorCode::InvalidArgument, "timeout must be positive");
  }
}

BackendResult HttpBackend::invoke(const StageRequest& request, std::uint64_t /*seed*/) {
  const char* key = std::getenv(config_.api_key_env.c_str());
  if (key == nullptr || *key == '\0') {
    fail(ErrorCode::AuthMissing,
         "environment variable " + config_.api_key_env + " is not set");
  }

  std::string base = config_.endpoint;
  std::string path = "/v1/chat/completions";
  const std::size_t scheme_end = base.find("://");
  if (scheme_end != std::string::npos) {
    const std::size_t path_start = base.find('/', scheme_end + 3);
    if (path_start != std::string::npos) {
      path = base.substr(path_start);
      base = base.substr(0, path_start);
    }
  }

  const json body = build_chat_request_body(request, config_);
  const std::string body_text = body.dump();
  if (config_.debug_log && debug_sink) {
    debug_sink(json{{"direction", "request"}, {"body", body}});
  }

  httplib::Client client(base);
  const auto timeout = std::chrono::milliseconds(
      static_cast<long long>(config_.timeout_seconds * 1000.0));
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  const httplib::Headers headers{{"Authorization", std::string("Bearer ") + key}};

  ErrorCode last_code = ErrorCode::TransportError;
  std::string last_detail = "no response";
  for (int attempt = 0; attempt <= config_.max_transport_retries; ++attempt) {
    if (attempt > 0) {
      const double delay =
          config_.backoff_base_seconds * std::pow(2.0, static_cast<double>(attempt - 1));
      std::this_thread::sleep_for(std::chrono::duration<double>(delay));
    }
    auto res = client.Post(path, headers, body_text, "application/json");
    if (!res) {
      const bool timed_out = res.error() == httplib::Error::ConnectionTimeout ||
                             res.error() == httplib::Error::Read ||
                             res.error() == httplib::Error::Write;
      last_code = timed_out ? ErrorCode::Timeout : ErrorCode::TransportError;
      last_detail = httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429) {
      last_code = ErrorCode::RateLimited;
      last_detail = "HTTP 429";
      continue;
    }
    if (res->status >= 500) {
      last_code = ErrorCode::TransportError;
      last_detail = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      fail(ErrorCode::TransportError, "HTTP " + std::to_string(res->status) + ": " + res->body);
    }
    json payload;
    try {
      payload = json::parse(res->body);
    } catch (const json::exception& e) {
      fail(ErrorCode::TransportError, std::string("response is not JSON: ") + e.what());
    }
    if (config_.debug_log && debug_sink) {
      debug_sink(json{{"direction", "response"}, {"body", payload}});
    }
    TokenUsage usage;
    if (payload.contains("usage")) {
      usage.input_tokens = payload.at("usage").value("prompt_tokens", 0);
      usage.output_tokens = payload.at("usage").value("completion_tokens", 0);
    }
    return BackendResult{std::move(payload), usage};
  }
  fail(last_code, last_detail + " after " + std::to_string(config_.max_transport_retries + 1) +
                      " transport attempts");
}

double usage_cost(const TokenUsage& usage, const PricingTable& pricing) {
  return static_cast<double>(usage.input_tokens) * pricing.per_input_token +
         static_cast<double>(usage.output_tokens) * pricing.per_output_token;
}

}  // namespace metaharness
