#include "metaharness/svm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace metaharness {

namespace {

constexpr double kTol = 1e-3;       // KKT violation tolerance
constexpr double kTau = 1e-12;      // floor for second-order curvature
constexpr double kSvEps = 1e-12;    // coefficient magnitude counted as a support vector
constexpr double kInf = std::numeric_limits<double>::infinity();

Eigen::MatrixXd gram_matrix(const KernelParams& k, const FeatureMatrix& X) {
  const Eigen::Index n = X.rows();
  Eigen::MatrixXd K(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double v = kernel_eval(k, X.row(i), X.row(j));
      K(i, j) = v;
      K(j, i) = v;
    }
  }
  return K;
}

Eigen::VectorXd signed_labels(const Eigen::VectorXi& y01) {
  Eigen::VectorXd y(y01.size());
  for (Eigen::Index i = 0; i < y01.size(); ++i) y[i] = y01[i] ? 1.0 : -1.0;
  return y;
}

void require_both_classes(const Eigen::VectorXi& y01) {
  Eigen::Index pos = 0;
  for (Eigen::Index i = 0; i < y01.size(); ++i) pos += y01[i] ? 1 : 0;
  if (pos == 0 || pos == y01.size()) {
    fail(ErrorCode::DegenerateLabels, "both classes required to fit a classifier");
  }
}

SvcModel build_model(const KernelParams& kernel, const FeatureMatrix& X,
                     const Eigen::VectorXd& coef, double bias) {
  Eigen::Index n_sv = 0;
  for (Eigen::Index i = 0; i < coef.size(); ++i) {
    if (std::fabs(coef[i]) > kSvEps) ++n_sv;
  }
  SvcModel model;
  model.kernel = kernel;
  model.support_vectors.resize(n_sv, 2);
  model.dual_coef.resize(n_sv);
  Eigen::Index at = 0;
  for (Eigen::Index i = 0; i < coef.size(); ++i) {
    if (std::fabs(coef[i]) > kSvEps) {
      model.support_vectors.row(at) = X.row(i);
      model.dual_coef[at] = coef[i];
      ++at;
    }
  }
  model.bias = bias;
  return model;
}

// Two-variable subproblem update shared by both solvers; clips to
// [0, cap] boxes while preserving the equality constraint through the pair.
void smo_pair_update(Eigen::VectorXd& alpha, const Eigen::VectorXd& y,
                     const Eigen::VectorXd& G, const Eigen::MatrixXd& K,
                     const Eigen::VectorXd& cap, Eigen::Index i, Eigen::Index j) {
  const double Ci = cap[i];
  const double Cj = cap[j];
  if (y[i] != y[j]) {
    double quad = K(i, i) + K(j, j) + 2.0 * K(i, j);
    if (quad <= 0.0) quad = kTau;
    const double delta = (-G[i] - G[j]) / quad;
    const double diff = alpha[i] - alpha[j];
    alpha[i] += delta;
    alpha[j] += delta;
    if (diff > 0.0) {
      if (alpha[j] < 0.0) {
        alpha[j] = 0.0;
        alpha[i] = diff;
      }
    } else {
      if (alpha[i] < 0.0) {
        alpha[i] = 0.0;
        alpha[j] = -diff;
      }
    }
    if (diff > Ci - Cj) {
      if (alpha[i] > Ci) {
        alpha[i] = Ci;
        alpha[j] = Ci - diff;
      }
    } else {
      if (alpha[j] > Cj) {
        alpha[j] = Cj;
        alpha[i] = Cj + diff;
      }
    }
  } else {
    double quad = K(i, i) + K(j, j) - 2.0 * K(i, j);
    if (quad <= 0.0) quad = kTau;
    const double delta = (G[i] - G[j]) / quad;
    const double sum = alpha[i] + alpha[j];
    alpha[i] -= delta;
    alpha[j] += delta;
    if (sum > Ci) {
      if (alpha[i] > Ci) {
        alpha[i] = Ci;
        alpha[j] = sum - Ci;
      }
    } else {
      if (alpha[j] < 0.0) {
        alpha[j] = 0.0;
        alpha[i] = sum;
      }
    }
    if (sum > Cj) {
      if (alpha[j] > Cj) {
        alpha[j] = Cj;
        alpha[i] = sum - Cj;
      }
    } else {
      if (alpha[i] < 0.0) {
        alpha[i] = 0.0;
        alpha[j] = sum;
      }
    }
  }
}

}  // namespace

double kernel_eval(const KernelParams& k, const FeatureRow& u, const FeatureRow& v) {
  switch (k.kind) {
    case KernelKind::linear:
      return u.dot(v);
    case KernelKind::rbf:
      return std::exp(-k.gamma * (u - v).squaredNorm());
    case KernelKind::poly:
      return std::pow(k.gamma * u.dot(v) + k.coef0, k.degree);
    case KernelKind::sigmoid:
      return std::tanh(k.gamma * u.dot(v) + k.coef0);
  }
  return 0.0;
}

double svc_decision(const SvcModel& model, const FeatureRow& x) {
  double acc = model.bias;
  for (Eigen::Index i = 0; i < model.dual_coef.size(); ++i) {
    acc += model.dual_coef[i] * kernel_eval(model.kernel, model.support_vectors.row(i), x);
  }
  return acc;
}

Eigen::Vector2d balanced_class_weights(const Eigen::VectorXi& y01) {
  require_both_classes(y01);
  const double n = static_cast<double>(y01.size());
  double n_pos = 0.0;
  for (Eigen::Index i = 0; i < y01.size(); ++i) n_pos += y01[i] ? 1.0 : 0.0;
  return Eigen::Vector2d(n / (2.0 * (n - n_pos)), n / (2.0 * n_pos));
}

SvcModel fit_svc(const FeatureMatrix& X, const Eigen::VectorXi& y01,
                 const Eigen::Vector2d& class_weights, double C,
                 const KernelParams& kernel) {
  require_both_classes(y01);
  const Eigen::Index n = X.rows();
  const Eigen::VectorXd y = signed_labels(y01);
  const Eigen::MatrixXd K = gram_matrix(kernel, X);

  Eigen::VectorXd cap(n);
  for (Eigen::Index i = 0; i < n; ++i) cap[i] = C * class_weights[y01[i] ? 1 : 0];

  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd G = Eigen::VectorXd::Constant(n, -1.0);  // gradient of the dual

  const long long max_iter = 10LL * static_cast<long long>(n) * static_cast<long long>(n);
  bool converged = false;
  for (long long iter = 0; iter < max_iter; ++iter) {
    // Maximal violating pair.
    Eigen::Index i = -1, j = -1;
    double m_up = -kInf, m_low = kInf;
    for (Eigen::Index t = 0; t < n; ++t) {
      const bool in_up = (y[t] > 0.0 && alpha[t] < cap[t]) || (y[t] < 0.0 && alpha[t] > 0.0);
      const bool in_low = (y[t] > 0.0 && alpha[t] > 0.0) || (y[t] < 0.0 && alpha[t] < cap[t]);
      const double v = -y[t] * G[t];
      if (in_up && v > m_up) {
        m_up = v;
        i = t;
      }
      if (in_low && v < m_low) {
        m_low = v;
        j = t;
      }
    }
    if (i < 0 || j < 0 || m_up - m_low < kTol) {
      converged = true;
      break;
    }

    const double old_i = alpha[i];
    const double old_j = alpha[j];
    smo_pair_update(alpha, y, G, K, cap, i, j);
    const double di = alpha[i] - old_i;
    const double dj = alpha[j] - old_j;
    for (Eigen::Index t = 0; t < n; ++t) {
      G[t] += y[t] * (y[i] * K(t, i) * di + y[j] * K(t, j) * dj);
    }
  }
  if (!converged) {
    fail(ErrorCode::NoConvergence, "SMO iteration cap reached before KKT tolerance");
  }

  // Bias from the KKT conditions: average over free support vectors, midpoint
  // of the bound constraints when none are free.
  double ub = kInf, lb = -kInf, sum_free = 0.0;
  Eigen::Index n_free = 0;
  for (Eigen::Index t = 0; t < n; ++t) {
    const double yG = y[t] * G[t];
    if (alpha[t] >= cap[t] - kSvEps) {
      if (y[t] < 0.0) {
        ub = std::min(ub, yG);
      } else {
        lb = std::max(lb, yG);
      }
    } else if (alpha[t] <= kSvEps) {
      if (y[t] > 0.0) {
        ub = std::min(ub, yG);
      } else {
        lb = std::max(lb, yG);
      }
    } else {
      ++n_free;
      sum_free += yG;
    }
  }
  const double rho = n_free > 0 ? sum_free / static_cast<double>(n_free) : (ub + lb) / 2.0;

  Eigen::VectorXd coef(n);
  for (Eigen::Index t = 0; t < n; ++t) coef[t] = alpha[t] * y[t];
  return build_model(kernel, X, coef, -rho);
}

SvcModel fit_nu_svc(const FeatureMatrix& X, const Eigen::VectorXi& y01,
                    const Eigen::Vector2d& class_weights, double nu,
                    const KernelParams& kernel) {
  require_both_classes(y01);
  if (!(nu > 0.0 && nu < 1.0)) fail(ErrorCode::InvalidArgument, "nu must lie in (0, 1)");
  const Eigen::Index n = X.rows();
  const Eigen::VectorXd y = signed_labels(y01);
  const Eigen::MatrixXd K = gram_matrix(kernel, X);

  Eigen::VectorXd cap(n);
  for (Eigen::Index i = 0; i < n; ++i) cap[i] = class_weights[y01[i] ? 1 : 0];

  // Feasible start: fill each class up to nu*n/2 subject to the caps.
  const double per_class = nu * static_cast<double>(n) / 2.0;
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(n);
  for (int cls = 0; cls <= 1; ++cls) {
    double remaining = per_class;
    for (Eigen::Index i = 0; i < n && remaining > 0.0; ++i) {
      if (y01[i] != cls) continue;
      alpha[i] = std::min(cap[i], remaining);
      remaining -= alpha[i];
    }
    if (remaining > 1e-9) {
      fail(ErrorCode::NoConvergence, "nu is infeasible for these class weights");
    }
  }

  // G = Q*alpha with Q_ts = y_t y_s K_ts.
  Eigen::VectorXd G(n);
  for (Eigen::Index t = 0; t < n; ++t) {
    double acc = 0.0;
    for (Eigen::Index s = 0; s < n; ++s) acc += y[t] * y[s] * K(t, s) * alpha[s];
    G[t] = acc;
  }

  const long long max_iter = 10LL * static_cast<long long>(n) * static_cast<long long>(n);
  bool converged = false;
  for (long long iter = 0; iter < max_iter; ++iter) {
    // Per-class maximal violating pairs; updates stay inside one class so both
    // equality constraints are preserved.
    Eigen::Index ip = -1, jp = -1, in = -1, jn = -1;
    double up_p = -kInf, low_p = kInf, up_n = -kInf, low_n = kInf;
    for (Eigen::Index t = 0; t < n; ++t) {
      const double v = -G[t];
      if (y[t] > 0.0) {
        if (alpha[t] < cap[t] && v > up_p) {
          up_p = v;
          ip = t;
        }
        if (alpha[t] > 0.0 && v < low_p) {
          low_p = v;
          jp = t;
        }
      } else {
        if (alpha[t] < cap[t] && v > up_n) {
          up_n = v;
          in = t;
        }
        if (alpha[t] > 0.0 && v < low_n) {
          low_n = v;
          jn = t;
        }
      }
    }
    const double gap_p = (ip >= 0 && jp >= 0) ? up_p - low_p : -kInf;
    const double gap_n = (in >= 0 && jn >= 0) ? up_n - low_n : -kInf;
    if (std::max(gap_p, gap_n) < kTol) {
      converged = true;
      break;
    }
    const Eigen::Index i = gap_p >= gap_n ? ip : in;
    const Eigen::Index j = gap_p >= gap_n ? jp : jn;

    const double old_i = alpha[i];
    const double old_j = alpha[j];
    smo_pair_update(alpha, y, G, K, cap, i, j);
    const double di = alpha[i] - old_i;
    const double dj = alpha[j] - old_j;
    for (Eigen::Index t = 0; t < n; ++t) {
      G[t] += y[t] * (y[i] * K(t, i) * di + y[j] * K(t, j) * dj);
    }
  }
  if (!converged) {
    fail(ErrorCode::NoConvergence, "nu-SMO iteration cap reached before KKT tolerance");
  }

  // Per-class margin offsets; free SVs of class c satisfy G = r_c.
  double r[2];
  for (int cls = 0; cls <= 1; ++cls) {
    const double sign = cls == 1 ? 1.0 : -1.0;
    double ub = kInf, lb = -kInf, sum_free = 0.0;
    Eigen::Index n_free = 0;
    for (Eigen::Index t = 0; t < n; ++t) {
      if (y[t] != sign) continue;
      if (alpha[t] >= cap[t] - kSvEps) {
        lb = std::max(lb, G[t]);
      } else if (alpha[t] <= kSvEps) {
        ub = std::min(ub, G[t]);
      } else {
        ++n_free;
        sum_free += G[t];
      }
    }
    r[cls] = n_free > 0 ? sum_free / static_cast<double>(n_free) : (ub + lb) / 2.0;
  }
  const double r1 = r[1];  // positive class
  const double r2 = r[0];  // negative class
  const double rho = (r1 + r2) / 2.0;
  if (!(rho > kSvEps) || !std::isfinite(rho)) {
    fail(ErrorCode::NoConvergence, "degenerate nu-SVC solution (rho <= 0)");
  }
  const double bias = (r2 - r1) / 2.0;

  Eigen::VectorXd coef(n);
  for (Eigen::Index t = 0; t < n; ++t) coef[t] = alpha[t] * y[t] / rho;
  return build_model(kernel, X, coef, bias / rho);
}

double logistic_decision(const LogisticModel& model, const FeatureRow& x) {
  return model.w[0] * x[0] + model.w[1] * x[1] + model.b;
}

LogisticModel fit_logistic(const FeatureMatrix& X, const Eigen::VectorXi& y01,
                           const Eigen::Vector2d& class_weights, double C, bool l1) {
  require_both_classes(y01);
  const Eigen::Index n = X.rows();
  Eigen::VectorXd sw(n);  // per-sample weight, scaled by C
  for (Eigen::Index i = 0; i < n; ++i) sw[i] = C * class_weights[y01[i] ? 1 : 0];

  LogisticModel model;
  Eigen::VectorXd f = Eigen::VectorXd::Zero(n);  // current linear predictor

  const auto refresh_f = [&]() {
    for (Eigen::Index i = 0; i < n; ++i) {
      f[i] = model.w[0] * X(i, 0) + model.w[1] * X(i, 1) + model.b;
    }
  };

  if (!l1) {
    // Newton with step halving on 0.5*||w||^2 + sum sw*logloss.
    const auto loss = [&]() {
      double acc = 0.5 * model.w.squaredNorm();
      for (Eigen::Index i = 0; i < n; ++i) {
        const double z = y01[i] ? 1.0 : -1.0;
        const double m = -z * f[i];
        acc += sw[i] * (m > 0.0 ? m + std::log1p(std::exp(-m)) : std::log1p(std::exp(m)));
      }
      return acc;
    };
    refresh_f();
    double current = loss();
    for (int iter = 0; iter < 200; ++iter) {
      Eigen::Vector3d g = Eigen::Vector3d::Zero();
      Eigen::Matrix3d H = Eigen::Matrix3d::Zero();
      g[0] = model.w[0];
      g[1] = model.w[1];
      H(0, 0) = 1.0;
      H(1, 1) = 1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double p = 1.0 / (1.0 + std::exp(-f[i]));
        const double t = y01[i] ? 1.0 : 0.0;
        const double d = sw[i] * (p - t);
        const double h = std::max(sw[i] * p * (1.0 - p), 1e-12);
        const Eigen::Vector3d xi(X(i, 0), X(i, 1), 1.0);
        g += d * xi;
        H += h * xi * xi.transpose();
      }
      if (g.lpNorm<Eigen::Infinity>() < 1e-8) break;
      const Eigen::Vector3d step = H.ldlt().solve(-g);
      double scale = 1.0;
      for (int ls = 0; ls < 40; ++ls) {
        LogisticModel trial = model;
        trial.w[0] += scale * step[0];
        trial.w[1] += scale * step[1];
        trial.b += scale * step[2];
        std::swap(model, trial);
        refresh_f();
        const double cand = loss();
        if (cand <= current + 1e-15) {
          current = cand;
          break;
        }
        std::swap(model, trial);  // revert
        refresh_f();
        scale *= 0.5;
      }
    }
    return model;
  }

  // l1: cyclic coordinate descent with a Newton-style quadratic bound per
  // coordinate and soft thresholding; intercept gets a plain Newton step.
  refresh_f();
  for (int sweep = 0; sweep < 500; ++sweep) {
    double max_change = 0.0;
    for (int coord = 0; coord < 2; ++coord) {
      double g = 0.0, h = 1e-12;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double p = 1.0 / (1.0 + std::exp(-f[i]));
        const double t = y01[i] ? 1.0 : 0.0;
        g += sw[i] * (p - t) * X(i, coord);
        h += sw[i] * std::max(p * (1.0 - p), 1e-6) * X(i, coord) * X(i, coord);
      }
      const double w_old = model.w[coord];
      const double raw = w_old - g / h;
      const double thr = 1.0 / h;
      double w_new = 0.0;
      if (raw > thr) {
        w_new = raw - thr;
      } else if (raw < -thr) {
        w_new = raw + thr;
      }
      if (w_new != w_old) {
        for (Eigen::Index i = 0; i < n; ++i) f[i] += (w_new - w_old) * X(i, coord);
        model.w[coord] = w_new;
        max_change = std::max(max_change, std::fabs(w_new - w_old));
      }
    }
    double g_b = 0.0, h_b = 1e-12;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double p = 1.0 / (1.0 + std::exp(-f[i]));
      const double t = y01[i] ? 1.0 : 0.0;
      g_b += sw[i] * (p - t);
      h_b += sw[i] * std::max(p * (1.0 - p), 1e-6);
    }
    const double db = -g_b / h_b;
    model.b += db;
    for (Eigen::Index i = 0; i < n; ++i) f[i] += db;
    max_change = std::max(max_change, std::fabs(db));
    if (max_change < 1e-10) break;
  }
  return model;
}

}  // namespace metaharness
