#include "metaharness/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace metaharness {

IsotonicMap fit_isotonic(const VectorRef& scores, const LabelRef& labels) {
  const Eigen::Index n = scores.size();
  if (n < 2) fail(ErrorCode::TooFew, "isotonic fit needs at least 2 points");
  if (labels.size() != n) fail(ErrorCode::InvalidArgument, "length mismatch");

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return scores[a] < scores[b]; });

  // Pre-pool identical scores into one weighted point.
  std::vector<double> xs, ys, ws;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    double sum = labels[order[i]] ? 1.0 : 0.0;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) {
      ++j;
      sum += labels[order[j]] ? 1.0 : 0.0;
    }
    const double w = static_cast<double>(j - i + 1);
    xs.push_back(scores[order[i]]);
    ys.push_back(sum / w);
    ws.push_back(w);
    i = j + 1;
  }

  // PAVA: maintain a stack of blocks with nondecreasing means; merge backwards
  // whenever a new block violates the order.
  std::vector<double> block_sum, block_w;
  std::vector<std::size_t> block_count;  // how many pooled points each block spans
  for (std::size_t k = 0; k < xs.size(); ++k) {
    block_sum.push_back(ys[k] * ws[k]);
    block_w.push_back(ws[k]);
    block_count.push_back(1);
    while (block_sum.size() > 1) {
      const std::size_t m = block_sum.size();
      if (block_sum[m - 2] / block_w[m - 2] <= block_sum[m - 1] / block_w[m - 1]) break;
      block_sum[m - 2] += block_sum[m - 1];
      block_w[m - 2] += block_w[m - 1];
      block_count[m - 2] += block_count[m - 1];
      block_sum.pop_back();
      block_w.pop_back();
      block_count.pop_back();
    }
  }

  IsotonicMap map;
  map.thresholds = std::move(xs);
  map.values.resize(map.thresholds.size());
  std::size_t pos = 0;
  for (std::size_t b = 0; b < block_sum.size(); ++b) {
    const double v = block_sum[b] / block_w[b];
    for (std::size_t c = 0; c < block_count[b]; ++c) map.values[pos++] = v;
  }
  return map;
}

double apply_calibrator(const IsotonicMap& map, double score) {
  if (map.thresholds.empty()) fail(ErrorCode::InvalidArgument, "empty isotonic map");
  // First breakpoint with threshold > score; the one before it is the lookup.
  auto it = std::upper_bound(map.thresholds.begin(), map.thresholds.end(), score);
  if (it == map.thresholds.begin()) return map.values.front();
  const std::size_t idx = static_cast<std::size_t>(it - map.thresholds.begin()) - 1;
  return map.values[idx];
}

SigmoidParams fit_platt(const VectorRef& scores, const LabelRef& labels) {
  const Eigen::Index n = scores.size();
  if (labels.size() != n || n < 1) fail(ErrorCode::InvalidArgument, "length mismatch");
  Eigen::Index n_pos = 0;
  for (Eigen::Index i = 0; i < n; ++i) n_pos += labels[i] ? 1 : 0;
  const Eigen::Index n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    fail(ErrorCode::DegenerateLabels, "Platt scaling requires both classes");
  }

  const double t_pos = (static_cast<double>(n_pos) + 1.0) / (static_cast<double>(n_pos) + 2.0);
  const double t_neg = 1.0 / (static_cast<double>(n_neg) + 2.0);

  // Negative log-likelihood of p_i = 1/(1+exp(a*s_i+b)) against targets t_i.
  const auto nll = [&](double a, double b) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double t = labels[i] ? t_pos : t_neg;
      const double f = a * scores[i] + b;
      // log(1+e^f) - (1-t)*f, computed stably for either sign of f
      const double soft = f > 0.0 ? f + std::log1p(std::exp(-f)) : std::log1p(std::exp(f));
      acc += soft - (1.0 - t) * f;
    }
    return acc;
  };

  double a = 0.0;
  double b = std::log((static_cast<double>(n_neg) + 1.0) / (static_cast<double>(n_pos) + 1.0));
  double current = nll(a, b);

  for (int iter = 0; iter < 100; ++iter) {
    double g_a = 0.0, g_b = 0.0, h_aa = 1e-12, h_ab = 0.0, h_bb = 1e-12;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double t = labels[i] ? t_pos : t_neg;
      const double f = a * scores[i] + b;
      const double p = 1.0 / (1.0 + std::exp(f));
      const double d = t - p;         // dNLL/df
      const double h = p * (1.0 - p);  // d2NLL/df2
      g_a += d * scores[i];
      g_b += d;
      h_aa += h * scores[i] * scores[i];
      h_ab += h * scores[i];
      h_bb += h;
    }
    if (std::sqrt(g_a * g_a + g_b * g_b) < 1e-8) break;

    const double det = h_aa * h_bb - h_ab * h_ab;
    double step_a = -(h_bb * g_a - h_ab * g_b) / det;
    double step_b = -(h_aa * g_b - h_ab * g_a) / det;

    // Halve the step until the objective decreases.
    double scale = 1.0;
    for (int ls = 0; ls < 30; ++ls) {
      const double cand = nll(a + scale * step_a, b + scale * step_b);
      if (cand < current + 1e-15) {
        a += scale * step_a;
        b += scale * step_b;
        current = cand;
        break;
      }
      scale *= 0.5;
    }
  }
  return SigmoidParams{a, b};
}

double apply_calibrator(const SigmoidParams& params, double score) {
  const double f = params.a * score + params.b;
  const double p = 1.0 / (1.0 + std::exp(f));
  return std::clamp(p, 0.0, 1.0);
}

const char* head_kind_to_string(HeadKind k) {
  return k == HeadKind::isotonic ? "isotonic" : "sigmoid";
}

HeadKind head_kind_from_string(const std::string& s) {
  if (s == "isotonic") return HeadKind::isotonic;
  if (s == "sigmoid") return HeadKind::sigmoid;
  fail(ErrorCode::ParseError, "unknown calibration head '" + s + "'");
}

CalibrationHead fit_head(HeadKind kind, const VectorRef& scores, const LabelRef& labels) {
  CalibrationHead head;
  head.kind = kind;
  if (kind == HeadKind::isotonic) {
    head.isotonic = fit_isotonic(scores, labels);
  } else {
    head.sigmoid = fit_platt(scores, labels);
  }
  return head;
}

}  // namespace metaharness
