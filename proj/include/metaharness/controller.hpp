#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "metaharness/calibration.hpp"
#include "metaharness/core_types.hpp"
#include "metaharness/svm.hpp"

namespace metaharness {

// The fitted decision function g(FOK, JOL) -> (p_correct, stop). Candidates
// are enumerated over a fixed estimator/calibration grid, ranked by repeated
// stratified cross-validation, and the winner is refit on all anchors.

enum class EstimatorFamily { svc_linear, svc_rbf, svc_poly, svc_sigmoid, nu_svc_rbf, logistic };
enum class Penalty { l1, l2 };
enum class SignalMask { joint, fok_only, jol_only };

const char* estimator_family_to_string(EstimatorFamily f);
EstimatorFamily estimator_family_from_string(const std::string& s);
const char* signal_mask_to_string(SignalMask m);
SignalMask signal_mask_from_string(const std::string& s);

struct GammaSpec {
  bool scale = true;  // gamma = 1 / (n_features * pooled variance) of the fit's inputs
  double value = 0.0;
};

// Only family-relevant hyperparameters are populated.
struct EstimatorConfig {
  EstimatorFamily family = EstimatorFamily::svc_linear;
  std::optional<double> C;
  std::optional<GammaSpec> gamma;
  std::optional<int> degree;
  std::optional<double> coef0;
  std::optional<double> nu;
  std::optional<Penalty> penalty;
  HeadKind head = HeadKind::isotonic;

  std::string describe() const;
};

// The fixed 134-candidate grid: 67 estimator configurations, each crossed
// with the two calibration heads.
std::vector<EstimatorConfig> enumerate_search_space();

// Per-feature location/scale fitted on a training fold only.
struct Standardizer {
  Eigen::RowVector2d mean = Eigen::RowVector2d::Zero();
  Eigen::RowVector2d stddev = Eigen::RowVector2d::Ones();

  static Standardizer fit(const FeatureMatrix& X);  // ConstantFeature when a column is flat
  FeatureMatrix transform(const FeatureMatrix& X) const;
  FeatureRow transform_one(double fok, double jol) const;
};

// Zeroes the standardized column the mask excludes, which pins that signal at
// its training-fold mean.
void apply_signal_mask(FeatureMatrix& X, SignalMask mask);
void apply_signal_mask(FeatureRow& x, SignalMask mask);

FeatureMatrix anchors_to_features(const std::vector<AnchorTriple>& anchors);
Eigen::VectorXi anchors_to_labels(const std::vector<AnchorTriple>& anchors);

struct FittedEstimator {
  bool is_logistic = false;
  SvcModel svc;
  LogisticModel logistic;
};

// Balanced class weights are applied inside; gamma = scale resolves against
// the supplied (standardized) features.
FittedEstimator train_estimator(const FeatureMatrix& X_std, const Eigen::VectorXi& y01,
                                const Eigen::Vector2d& class_weights,
                                const EstimatorConfig& config);

// Signed margin (SVC) or log-odds (logistic); positive predicts class 1.
double decision_score(const FittedEstimator& estimator, const FeatureRow& x_std);

struct CvPlan {
  int n_splits = 5;
  int n_repeats = 3;
  std::uint64_t seed = 0;
};

// Fold assignments per repeat: stratified by label, grouped by group_id when
// any group id repeats. assignment[repeat][i] = fold of anchor i.
std::vector<std::vector<int>> make_cv_folds(const Eigen::VectorXi& labels,
                                            const std::vector<std::string>& groups,
                                            const CvPlan& plan);

struct CvProvenance {
  double oof_auroc = 0.0;
  double oof_ece = 0.0;
  std::uint64_t seed = 0;
  int n_anchors = 0;
};

struct Controller {
  std::string model_id;
  EstimatorConfig config;
  Standardizer standardizer;
  FittedEstimator estimator;
  CalibrationHead head;
  double p_stop = 0.7;
  SignalMask mask = SignalMask::joint;
  CvProvenance provenance;
};

struct CandidateSummary {
  EstimatorConfig config;
  bool converged = false;
  double oof_auroc = 0.0;  // mean over repeats of pooled out-of-fold AUROC
  double oof_ece = 0.0;
};

struct FoldAudit {
  int repeat = 0;
  int fold = 0;
  std::vector<int> test_indices;
  Standardizer standardizer;  // fitted on that fold's training part only
};

struct SearchDiagnostics {
  std::vector<CandidateSummary> candidates;
  int winner_index = -1;
  double winner_oof_auroc = 0.0;
  double winner_oof_ece = 0.0;
  std::vector<double> winner_oof_probability;  // per anchor, mean over repeats
  std::vector<FoldAudit> fold_audits;
  std::uint64_t seed = 0;
};

// The full sweep. Requires >= 20 anchors with both classes; candidates that
// fail to converge are excluded; AllCandidatesFailed if none survive.
// jobs = 0 uses all hardware threads.
std::pair<Controller, SearchDiagnostics> cross_validated_search(
    const std::vector<AnchorTriple>& anchors, const CvPlan& plan,
    const std::string& model_id, SignalMask mask = SignalMask::joint,
    double p_stop = 0.7, int jobs = 0);

struct Decision {
  double p_correct = 0.0;
  bool stop = false;  // p_correct >= p_stop; the boundary itself stops
};

Decision decide(const Controller& controller, double fok, double jol);

// Ablation baseline: retry whenever (1 - jol) * fok > tau.
bool hand_rule_retry(double fok, double jol, double tau);

std::string save_controller(const Controller& controller);
Controller load_controller(const std::string& bytes);
void write_controller_file(const Controller& controller, const std::string& path);
Controller read_controller_file(const std::string& path);

}  // namespace metaharness
