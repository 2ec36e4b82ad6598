#pragma once

#include <Eigen/Dense>

#include "metaharness/errors.hpp"

namespace metaharness {

// Two input features (FOK, JOL) everywhere; the controller owns the mapping
// from anchors to rows.
using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, 2>;
using FeatureRow = Eigen::RowVector2d;

enum class KernelKind { linear, rbf, poly, sigmoid };

struct KernelParams {
  KernelKind kind = KernelKind::linear;
  double gamma = 1.0;  // resolved to a concrete value before fitting
  double coef0 = 0.0;
  int degree = 3;
};

double kernel_eval(const KernelParams& k, const FeatureRow& u, const FeatureRow& v);

struct SvcModel {
  KernelParams kernel;
  FeatureMatrix support_vectors;
  Eigen::VectorXd dual_coef;  // alpha_i * y_i (scaled by 1/rho for the nu form)
  double bias = 0.0;
};

// Signed margin; positive means class 1.
double svc_decision(const SvcModel& model, const FeatureRow& x);

// Soft-margin C-SVC solved by SMO on the dual with per-sample cost
// C * class_weight[y_i]. class_weights = (weight for y=0, weight for y=1).
// Converges at KKT violation < 1e-3; iteration cap 10*n^2 raises
// NoConvergence. Requires both classes (DegenerateLabels otherwise).
SvcModel fit_svc(const FeatureMatrix& X, const Eigen::VectorXi& y01,
                 const Eigen::Vector2d& class_weights, double C,
                 const KernelParams& kernel);

// nu-SVC solved directly on the nu-parameterized dual (same-class pair
// updates, two equality constraints), then rescaled so free support vectors
// sit at margin 1. Box caps are the class weights.
SvcModel fit_nu_svc(const FeatureMatrix& X, const Eigen::VectorXi& y01,
                    const Eigen::Vector2d& class_weights, double nu,
                    const KernelParams& kernel);

struct LogisticModel {
  Eigen::Vector2d w = Eigen::Vector2d::Zero();
  double b = 0.0;
};

// Log-odds; positive means class 1.
double logistic_decision(const LogisticModel& model, const FeatureRow& x);

// Penalized maximum likelihood with per-class sample weights: Newton for l2,
// cyclic coordinate descent with soft thresholding for l1. The intercept is
// never penalized.
LogisticModel fit_logistic(const FeatureMatrix& X, const Eigen::VectorXi& y01,
                           const Eigen::Vector2d& class_weights, double C, bool l1);

// Balanced class weights n / (2 * n_c), indexed (weight for y=0, weight for y=1).
Eigen::Vector2d balanced_class_weights(const Eigen::VectorXi& y01);

}  // namespace metaharness
