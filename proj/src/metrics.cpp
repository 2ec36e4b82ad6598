#include "metaharness/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "metaharness/rng.hpp"

namespace metaharness {

namespace {

Eigen::VectorXd to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Eigen::VectorXi to_labels(const std::vector<int>& v) {
  return Eigen::Map<const Eigen::VectorXi>(v.data(), static_cast<Eigen::Index>(v.size()));
}

double population_std(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double acc = 0.0;
  for (double x : v) acc += (x - mean) * (x - mean);
  return std::sqrt(acc / static_cast<double>(v.size()));
}

// Linear-interpolation quantile over a sorted vector (the common "type 7").
double sorted_quantile(const std::vector<double>& sorted, double q) {
  const std::size_t n = sorted.size();
  if (n == 1) return sorted[0];
  const double pos = q * static_cast<double>(n - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, n - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

}  // namespace

double auroc(const VectorRef& scores, const LabelRef& labels) {
  const Eigen::Index n = scores.size();
  if (labels.size() != n || n < 1) {
    fail(ErrorCode::InvalidArgument, "scores and labels must have equal nonzero length");
  }
  Eigen::Index n_pos = 0;
  for (Eigen::Index i = 0; i < n; ++i) n_pos += labels[i] ? 1 : 0;
  const Eigen::Index n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    fail(ErrorCode::DegenerateLabels, "AUROC requires both classes");
  }

  // Rank-sum form with midranks for ties; equals pairwise counting with
  // ties scored 1/2.
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return scores[a] < scores[b]; });

  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t t = i; t <= j; ++t) {
      if (labels[order[t]]) rank_sum_pos += midrank;
    }
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos);
  const double nn = static_cast<double>(n_neg);
  return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  const Eigen::VectorXd s = to_vector(scores);
  const Eigen::VectorXi l = to_labels(labels);
  return auroc(VectorRef(s), LabelRef(l));
}

double ece(const VectorRef& scores, const LabelRef& labels, int n_bins) {
  const Eigen::Index n = scores.size();
  if (labels.size() != n || n < 1) {
    fail(ErrorCode::InvalidArgument, "scores and labels must have equal nonzero length");
  }
  if (n_bins < 1) fail(ErrorCode::InvalidArgument, "n_bins must be >= 1");

  std::vector<double> sum_score(static_cast<std::size_t>(n_bins), 0.0);
  std::vector<double> sum_label(static_cast<std::size_t>(n_bins), 0.0);
  std::vector<Eigen::Index> count(static_cast<std::size_t>(n_bins), 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    int b = static_cast<int>(scores[i] * n_bins);
    b = std::clamp(b, 0, n_bins - 1);  // score 1.0 lands in the top bin
    sum_score[static_cast<std::size_t>(b)] += scores[i];
    sum_label[static_cast<std::size_t>(b)] += labels[i] ? 1.0 : 0.0;
    count[static_cast<std::size_t>(b)] += 1;
  }
  double out = 0.0;
  for (int b = 0; b < n_bins; ++b) {
    const auto c = count[static_cast<std::size_t>(b)];
    if (c == 0) continue;
    const double mean_score = sum_score[static_cast<std::size_t>(b)] / static_cast<double>(c);
    const double mean_label = sum_label[static_cast<std::size_t>(b)] / static_cast<double>(c);
    out += std::fabs(mean_score - mean_label) * static_cast<double>(c) / static_cast<double>(n);
  }
  return out;
}

double ece(const std::vector<double>& scores, const std::vector<int>& labels, int n_bins) {
  const Eigen::VectorXd s = to_vector(scores);
  const Eigen::VectorXi l = to_labels(labels);
  return ece(VectorRef(s), LabelRef(l), n_bins);
}

std::pair<double, double> bootstrap_ci(const std::vector<int>& correct, int B,
                                       std::uint64_t seed) {
  if (correct.empty()) fail(ErrorCode::InvalidArgument, "empty correctness vector");
  if (B < 1) fail(ErrorCode::InvalidArgument, "B must be >= 1");
  const std::size_t n = correct.size();
  Rng rng(seed);
  std::vector<double> means(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b) {
    std::int64_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
      hits += correct[static_cast<std::size_t>(rng.bounded(n))] ? 1 : 0;
    }
    means[static_cast<std::size_t>(b)] = 100.0 * static_cast<double>(hits) / static_cast<double>(n);
  }
  std::sort(means.begin(), means.end());
  return {sorted_quantile(means, 0.025), sorted_quantile(means, 0.975)};
}

std::vector<Band> band_split(const std::vector<double>& scores) {
  const std::size_t n = scores.size();
  if (n < 10) fail(ErrorCode::TooFew, "band split needs at least 10 scores");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  const std::size_t n_low = static_cast<std::size_t>(0.3 * static_cast<double>(n));
  const std::size_t n_high = n_low;
  std::vector<Band> out(n, Band::Medium);
  for (std::size_t i = 0; i < n_low; ++i) out[order[i]] = Band::Low;
  for (std::size_t i = n - n_high; i < n; ++i) out[order[i]] = Band::High;
  return out;
}

DispersionSummary jol_dispersion(std::span<const Trajectory> trajectories) {
  std::vector<double> within;
  std::vector<double> firsts;
  for (const auto& t : trajectories) {
    if (t.attempts.empty()) continue;
    firsts.push_back(t.attempts.front().jol.jol_score);
    if (t.attempts.size() >= 2) {
      std::vector<double> jols;
      jols.reserve(t.attempts.size());
      for (const auto& a : t.attempts) jols.push_back(a.jol.jol_score);
      within.push_back(population_std(jols));
    }
  }
  if (within.empty()) {
    fail(ErrorCode::NoMultiAttempt, "no trajectory has two or more attempts");
  }
  std::sort(within.begin(), within.end());
  const std::size_t m = within.size();
  const double median = (m % 2 == 1) ? within[m / 2]
                                     : 0.5 * (within[m / 2 - 1] + within[m / 2]);
  return DispersionSummary{median, population_std(firsts)};
}

std::optional<double> early_stop_hit_rate(std::span<const Trajectory> trajectories,
                                          const std::vector<bool>& first_attempt_correct) {
  if (trajectories.size() != first_attempt_correct.size()) {
    fail(ErrorCode::InvalidArgument, "correctness vector must parallel trajectories");
  }
  std::size_t denom = 0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    const auto& t = trajectories[i];
    if (t.attempts.size() == 1 && t.stop_reason == StopReason::trusted) {
      ++denom;
      if (first_attempt_correct[i]) ++hits;
    }
  }
  if (denom == 0) return std::nullopt;
  return static_cast<double>(hits) / static_cast<double>(denom);
}

double oracle_at_k(std::span<const Trajectory> trajectories,
                   const std::vector<Problem>& problems) {
  if (trajectories.empty()) fail(ErrorCode::InvalidArgument, "no trajectories");
  std::unordered_map<std::string, const Problem*> by_id;
  for (const auto& p : problems) by_id[p.id] = &p;
  std::size_t hits = 0;
  for (const auto& t : trajectories) {
    auto it = by_id.find(t.problem_id);
    if (it == by_id.end() || !it->second->gold) {
      fail(ErrorCode::MissingGold, "no gold answer for problem '" + t.problem_id + "'");
    }
    const Problem& p = *it->second;
    for (const auto& a : t.attempts) {
      bool match = false;
      try {
        match = answer_matches(a.answer, *p.gold, p.grader);
      } catch (const Error&) {
        match = false;  // unparseable numeric answers simply do not match
      }
      if (match) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(trajectories.size());
}

}  // namespace metaharness
