#include "metaharness/controller.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "metaharness/metrics.hpp"
#include "metaharness/parallel.hpp"
#include "metaharness/rng.hpp"

namespace metaharness {

namespace {

constexpr int kEceBins = 10;
constexpr int kInnerFolds = 3;
constexpr const char* kArtifactFormat = "metaharness-controller";
constexpr int kArtifactVersion = 1;

double resolve_gamma(const GammaSpec& spec, const FeatureMatrix& X) {
  if (!spec.scale) return spec.value;
  // 1 / (n_features * pooled variance) of the fit's input features.
  const double mean = X.mean();
  const double var = (X.array() - mean).square().mean();
  if (!(var > 1e-12)) return 1.0;
  return 1.0 / (2.0 * var);
}

KernelParams kernel_for(const EstimatorConfig& cfg, const FeatureMatrix& X) {
  KernelParams k;
  switch (cfg.family) {
    case EstimatorFamily::svc_linear:
      k.kind = KernelKind::linear;
      break;
    case EstimatorFamily::svc_rbf:
    case EstimatorFamily::nu_svc_rbf:
      k.kind = KernelKind::rbf;
      break;
    case EstimatorFamily::svc_poly:
      k.kind = KernelKind::poly;
      break;
    case EstimatorFamily::svc_sigmoid:
      k.kind = KernelKind::sigmoid;
      break;
    case EstimatorFamily::logistic:
      k.kind = KernelKind::linear;
      break;
  }
  if (cfg.gamma) k.gamma = resolve_gamma(*cfg.gamma, X);
  if (cfg.coef0) k.coef0 = *cfg.coef0;
  if (cfg.degree) k.degree = *cfg.degree;
  return k;
}

}  // namespace

const char* estimator_family_to_string(EstimatorFamily f) {
  switch (f) {
    case EstimatorFamily::svc_linear: return "svc_linear";
    case EstimatorFamily::svc_rbf: return "svc_rbf";
    case EstimatorFamily::svc_poly: return "svc_poly";
    case EstimatorFamily::svc_sigmoid: return "svc_sigmoid";
    case EstimatorFamily::nu_svc_rbf: return "nu_svc_rbf";
    case EstimatorFamily::logistic: return "logistic";
  }
  return "svc_linear";
}

EstimatorFamily estimator_family_from_string(const std::string& s) {
  if (s == "svc_linear") return EstimatorFamily::svc_linear;
  if (s == "svc_rbf") return EstimatorFamily::svc_rbf;
  if (s == "svc_poly") return EstimatorFamily::svc_poly;
  if (s == "svc_sigmoid") return EstimatorFamily::svc_sigmoid;
  if (s == "nu_svc_rbf") return EstimatorFamily::nu_svc_rbf;
  if (s == "logistic") return EstimatorFamily::logistic;
  fail(ErrorCode::ParseError, "unknown estimator family '" + s + "'");
}

const char* signal_mask_to_string(SignalMask m) {
  switch (m) {
    case SignalMask::joint: return "joint";
    case SignalMask::fok_only: return "fok_only";
    case SignalMask::jol_only: return "jol_only";
  }
  return "joint";
}

SignalMask signal_mask_from_string(const std::string& s) {
  if (s == "joint") return SignalMask::joint;
  if (s == "fok_only") return SignalMask::fok_only;
  if (s == "jol_only") return SignalMask::jol_only;
  fail(ErrorCode::ParseError, "unknown signal mask '" + s + "'");
}

std::string EstimatorConfig::describe() const {
  std::ostringstream out;
  out << estimator_family_to_string(family) << "(";
  bool first = true;
  const auto sep = [&]() {
    if (!first) out << ", ";
    first = false;
  };
  if (C) {
    sep();
    out << "C=" << *C;
  }
  if (nu) {
    sep();
    out << "nu=" << *nu;
  }
  if (gamma) {
    sep();
    out << "gamma=";
    if (gamma->scale) {
      out << "scale";
    } else {
      out << gamma->value;
    }
  }
  if (degree) {
    sep();
    out << "d=" << *degree;
  }
  if (coef0) {
    sep();
    out << "coef0=" << *coef0;
  }
  if (penalty) {
    sep();
    out << "penalty=" << (*penalty == Penalty::l1 ? "l1" : "l2");
  }
  out << ") + " << head_kind_to_string(head);
  return out.str();
}

std::vector<EstimatorConfig> enumerate_search_space() {
  std::vector<EstimatorConfig> base;

  for (double c : {0.01, 0.1, 1.0, 10.0, 100.0}) {
    EstimatorConfig cfg;
    cfg.family = EstimatorFamily::svc_linear;
    cfg.C = c;
    base.push_back(cfg);
  }
  for (double c : {0.1, 1.0, 10.0, 100.0}) {
    for (int g = 0; g < 5; ++g) {
      EstimatorConfig cfg;
      cfg.family = EstimatorFamily::svc_rbf;
      cfg.C = c;
      static const double kGammas[] = {0.0, 0.5, 1.0, 2.0, 5.0};
      cfg.gamma = g == 0 ? GammaSpec{true, 0.0} : GammaSpec{false, kGammas[g]};
      base.push_back(cfg);
    }
  }
  for (int d : {2, 3, 4}) {
    for (double coef0 : {0.0, 1.0, 2.0}) {
      for (double c : {0.1, 1.0, 10.0}) {
        EstimatorConfig cfg;
        cfg.family = EstimatorFamily::svc_poly;
        cfg.C = c;
        cfg.gamma = GammaSpec{true, 0.0};
        cfg.degree = d;
        cfg.coef0 = coef0;
        base.push_back(cfg);
      }
    }
  }
  for (double c : {0.1, 1.0, 10.0}) {
    for (double coef0 : {0.0, 1.0}) {
      EstimatorConfig cfg;
      cfg.family = EstimatorFamily::svc_sigmoid;
      cfg.C = c;
      cfg.gamma = GammaSpec{true, 0.0};
      cfg.coef0 = coef0;
      base.push_back(cfg);
    }
  }
  for (double nu : {0.3, 0.5, 0.7}) {
    EstimatorConfig cfg;
    cfg.family = EstimatorFamily::nu_svc_rbf;
    cfg.nu = nu;
    cfg.gamma = GammaSpec{true, 0.0};
    base.push_back(cfg);
  }
  for (Penalty penalty : {Penalty::l1, Penalty::l2}) {
    for (double c : {0.1, 1.0, 10.0}) {
      EstimatorConfig cfg;
      cfg.family = EstimatorFamily::logistic;
      cfg.C = c;
      cfg.penalty = penalty;
      base.push_back(cfg);
    }
  }

  std::vector<EstimatorConfig> out;
  out.reserve(base.size() * 2);
  for (const auto& cfg : base) {
    for (HeadKind head : {HeadKind::isotonic, HeadKind::sigmoid}) {
      EstimatorConfig c = cfg;
      c.head = head;
      out.push_back(c);
    }
  }
  return out;
}

Standardizer Standardizer::fit(const FeatureMatrix& X) {
  if (X.rows() < 2) fail(ErrorCode::TooFew, "standardizer needs at least 2 rows");
  Standardizer s;
  s.mean = X.colwise().mean();
  for (int c = 0; c < 2; ++c) {
    const double var = (X.col(c).array() - s.mean[c]).square().mean();
    if (!(var > 1e-24)) {
      fail(ErrorCode::ConstantFeature, "feature column " + std::to_string(c) + " is constant");
    }
    s.stddev[c] = std::sqrt(var);
  }
  return s;
}

FeatureMatrix Standardizer::transform(const FeatureMatrix& X) const {
  FeatureMatrix out = X;
  out.rowwise() -= mean;
  out.array().rowwise() /= stddev.array();
  return out;
}

FeatureRow Standardizer::transform_one(double fok, double jol) const {
  FeatureRow x;
  x << (fok - mean[0]) / stddev[0], (jol - mean[1]) / stddev[1];
  return x;
}

void apply_signal_mask(FeatureMatrix& X, SignalMask mask) {
  if (mask == SignalMask::fok_only) X.col(1).setZero();
  if (mask == SignalMask::jol_only) X.col(0).setZero();
}

void apply_signal_mask(FeatureRow& x, SignalMask mask) {
  if (mask == SignalMask::fok_only) x[1] = 0.0;
  if (mask == SignalMask::jol_only) x[0] = 0.0;
}

FeatureMatrix anchors_to_features(const std::vector<AnchorTriple>& anchors) {
  FeatureMatrix X(static_cast<Eigen::Index>(anchors.size()), 2);
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    X(static_cast<Eigen::Index>(i), 0) = anchors[i].fok;
    X(static_cast<Eigen::Index>(i), 1) = anchors[i].jol;
  }
  return X;
}

Eigen::VectorXi anchors_to_labels(const std::vector<AnchorTriple>& anchors) {
  Eigen::VectorXi y(static_cast<Eigen::Index>(anchors.size()));
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    y[static_cast<Eigen::Index>(i)] = anchors[i].y;
  }
  return y;
}

FittedEstimator train_estimator(const FeatureMatrix& X_std, const Eigen::VectorXi& y01,
                                const Eigen::Vector2d& class_weights,
                                const EstimatorConfig& config) {
  FittedEstimator est;
  if (config.family == EstimatorFamily::logistic) {
    est.is_logistic = true;
    est.logistic = fit_logistic(X_std, y01, class_weights, config.C.value_or(1.0),
                                config.penalty == Penalty::l1);
    return est;
  }
  const KernelParams kernel = kernel_for(config, X_std);
  if (config.family == EstimatorFamily::nu_svc_rbf) {
    est.svc = fit_nu_svc(X_std, y01, class_weights, config.nu.value_or(0.5), kernel);
  } else {
    est.svc = fit_svc(X_std, y01, class_weights, config.C.value_or(1.0), kernel);
  }
  return est;
}

double decision_score(const FittedEstimator& estimator, const FeatureRow& x_std) {
  return estimator.is_logistic ? logistic_decision(estimator.logistic, x_std)
                               : svc_decision(estimator.svc, x_std);
}

// ---- cross-validation folds ---------------------------------------------------

namespace {

bool has_duplicate_groups(const std::vector<std::string>& groups) {
  std::vector<std::string> nonempty;
  for (const auto& g : groups) {
    if (!g.empty()) nonempty.push_back(g);
  }
  std::sort(nonempty.begin(), nonempty.end());
  return std::adjacent_find(nonempty.begin(), nonempty.end()) != nonempty.end();
}

std::vector<int> stratified_assignment(const Eigen::VectorXi& labels, int n_splits,
                                       std::uint64_t seed) {
  std::vector<int> assignment(static_cast<std::size_t>(labels.size()), 0);
  for (int cls = 0; cls <= 1; ++cls) {
    std::vector<int> idx;
    for (Eigen::Index i = 0; i < labels.size(); ++i) {
      if (labels[i] == cls) idx.push_back(static_cast<int>(i));
    }
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(cls), fnv1a64("stratified")));
    rng.shuffle(idx);
    for (std::size_t t = 0; t < idx.size(); ++t) {
      assignment[static_cast<std::size_t>(idx[t])] = static_cast<int>(t % static_cast<std::size_t>(n_splits));
    }
  }
  return assignment;
}

// Greedy grouped assignment: shuffle groups, take larger ones first, always
// placing into the fold that stays closest to the per-fold class targets.
std::vector<int> grouped_assignment(const Eigen::VectorXi& labels,
                                    const std::vector<std::string>& groups, int n_splits,
                                    std::uint64_t seed) {
  struct GroupInfo {
    std::vector<int> members;
    int pos = 0;
    int neg = 0;
  };
  std::vector<std::string> names;
  std::vector<GroupInfo> infos;
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    // Anchors without a group id stay singletons.
    const std::string key = groups[i].empty() ? "#" + std::to_string(i) : groups[i];
    auto [it, inserted] = index.emplace(key, infos.size());
    if (inserted) {
      names.push_back(key);
      infos.emplace_back();
    }
    auto& info = infos[it->second];
    info.members.push_back(static_cast<int>(i));
    if (labels[static_cast<Eigen::Index>(i)] == 1) {
      info.pos++;
    } else {
      info.neg++;
    }
  }

  std::vector<std::size_t> order(infos.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(seed, fnv1a64("grouped")));
  rng.shuffle(order);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return infos[a].members.size() > infos[b].members.size();
  });

  const double target_pos = static_cast<double>(labels.sum()) / n_splits;
  const double target_neg =
      static_cast<double>(labels.size() - labels.sum()) / n_splits;
  std::vector<double> fold_pos(static_cast<std::size_t>(n_splits), 0.0);
  std::vector<double> fold_neg(static_cast<std::size_t>(n_splits), 0.0);
  std::vector<int> assignment(groups.size(), 0);
  for (std::size_t g : order) {
    int best = 0;
    double best_cost = std::numeric_limits<double>::infinity();
    for (int f = 0; f < n_splits; ++f) {
      const double dp = fold_pos[static_cast<std::size_t>(f)] + infos[g].pos - target_pos;
      const double dn = fold_neg[static_cast<std::size_t>(f)] + infos[g].neg - target_neg;
      const double cost = dp * dp + dn * dn;
      if (cost < best_cost) {
        best_cost = cost;
        best = f;
      }
    }
    fold_pos[static_cast<std::size_t>(best)] += infos[g].pos;
    fold_neg[static_cast<std::size_t>(best)] += infos[g].neg;
    for (int m : infos[g].members) assignment[static_cast<std::size_t>(m)] = best;
  }
  return assignment;
}

}  // namespace

std::vector<std::vector<int>> make_cv_folds(const Eigen::VectorXi& labels,
                                            const std::vector<std::string>& groups,
                                            const CvPlan& plan) {
  if (plan.n_splits < 2) fail(ErrorCode::InvalidArgument, "n_splits must be >= 2");
  const bool grouped = has_duplicate_groups(groups);
  std::vector<std::vector<int>> out;
  out.reserve(static_cast<std::size_t>(plan.n_repeats));
  for (int r = 0; r < plan.n_repeats; ++r) {
    const std::uint64_t seed = mix_seed(plan.seed, static_cast<std::uint64_t>(r), fnv1a64("repeat"));
    out.push_back(grouped ? grouped_assignment(labels, groups, plan.n_splits, seed)
                          : stratified_assignment(labels, plan.n_splits, seed));
  }
  return out;
}

// ---- the search ----------------------------------------------------------------

namespace {

struct FoldContext {
  int repeat = 0;
  int fold = 0;
  std::vector<int> train_idx, test_idx;  // global anchor indices
  FeatureMatrix Xtr, Xte;                // standardized + masked
  Eigen::VectorXi ytr;
  Eigen::Vector2d weights;
  Standardizer standardizer;
  std::vector<std::vector<int>> inner_train, inner_test;  // local row indices
};

std::vector<std::vector<int>> inner_split(const Eigen::VectorXi& y, std::uint64_t seed) {
  std::vector<int> assignment = stratified_assignment(y, kInnerFolds, seed);
  std::vector<std::vector<int>> folds(kInnerFolds);
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    folds[static_cast<std::size_t>(assignment[i])].push_back(static_cast<int>(i));
  }
  return folds;
}

FeatureMatrix take_rows(const FeatureMatrix& X, const std::vector<int>& rows) {
  FeatureMatrix out(static_cast<Eigen::Index>(rows.size()), 2);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = X.row(rows[i]);
  }
  return out;
}

Eigen::VectorXi take_labels(const Eigen::VectorXi& y, const std::vector<int>& rows) {
  Eigen::VectorXi out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) out[static_cast<Eigen::Index>(i)] = y[rows[i]];
  return out;
}

bool both_classes(const Eigen::VectorXi& y) {
  const int sum = y.sum();
  return sum > 0 && sum < y.size();
}

// Inner out-of-fold decision scores on the training part, used to fit the
// calibration head without leaking the outer estimator's training fit.
CalibrationHead fit_fold_head(const FoldContext& ctx, const EstimatorConfig& config) {
  const std::size_t n = ctx.train_idx.size();
  std::vector<double> scores(n, 0.0);
  std::vector<bool> has(n, false);
  for (int k = 0; k < kInnerFolds; ++k) {
    const auto& tr = ctx.inner_train[static_cast<std::size_t>(k)];
    const auto& te = ctx.inner_test[static_cast<std::size_t>(k)];
    if (tr.empty() || te.empty()) continue;
    const Eigen::VectorXi y_in = take_labels(ctx.ytr, tr);
    if (!both_classes(y_in)) continue;  // degenerate inner split, skip its scores
    const FittedEstimator est =
        train_estimator(take_rows(ctx.Xtr, tr), y_in, balanced_class_weights(y_in), config);
    for (int t : te) {
      scores[static_cast<std::size_t>(t)] =
          decision_score(est, ctx.Xtr.row(static_cast<Eigen::Index>(t)));
      has[static_cast<std::size_t>(t)] = true;
    }
  }
  std::vector<double> s;
  std::vector<int> l;
  for (std::size_t i = 0; i < n; ++i) {
    if (has[i]) {
      s.push_back(scores[i]);
      l.push_back(ctx.ytr[static_cast<Eigen::Index>(i)]);
    }
  }
  const Eigen::VectorXd sv = Eigen::Map<const Eigen::VectorXd>(s.data(), static_cast<Eigen::Index>(s.size()));
  const Eigen::VectorXi lv = Eigen::Map<const Eigen::VectorXi>(l.data(), static_cast<Eigen::Index>(l.size()));
  return fit_head(config.head, sv, lv);
}

struct CandidateEval {
  CandidateSummary summary;
  std::vector<double> oof_probability;  // mean over repeats
};

CandidateEval evaluate_candidate(const EstimatorConfig& config,
                                 const std::vector<std::vector<FoldContext>>& fold_ctx,
                                 const Eigen::VectorXi& y, int n_repeats) {
  const Eigen::Index n = y.size();
  CandidateEval eval;
  eval.summary.config = config;
  eval.oof_probability.assign(static_cast<std::size_t>(n), 0.0);
  try {
    double auroc_sum = 0.0;
    double ece_sum = 0.0;
    for (int r = 0; r < n_repeats; ++r) {
      Eigen::VectorXd prob(n);
      for (const FoldContext& ctx : fold_ctx[static_cast<std::size_t>(r)]) {
        const CalibrationHead head = fit_fold_head(ctx, config);
        const FittedEstimator est = train_estimator(ctx.Xtr, ctx.ytr, ctx.weights, config);
        for (std::size_t t = 0; t < ctx.test_idx.size(); ++t) {
          const double score = decision_score(est, ctx.Xte.row(static_cast<Eigen::Index>(t)));
          prob[ctx.test_idx[t]] = head.apply(score);
        }
      }
      auroc_sum += auroc(prob, y);
      ece_sum += ece(prob, y, kEceBins);
      for (Eigen::Index i = 0; i < n; ++i) {
        eval.oof_probability[static_cast<std::size_t>(i)] += prob[i] / n_repeats;
      }
    }
    eval.summary.converged = true;
    eval.summary.oof_auroc = auroc_sum / n_repeats;
    eval.summary.oof_ece = ece_sum / n_repeats;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::NoConvergence || e.code() == ErrorCode::DegenerateLabels ||
        e.code() == ErrorCode::TooFew) {
      eval.summary.converged = false;
      eval.oof_probability.assign(static_cast<std::size_t>(n), 0.0);
    } else {
      throw;
    }
  }
  return eval;
}

CalibrationHead fit_final_head(const FeatureMatrix& X_std, const Eigen::VectorXi& y,
                               const EstimatorConfig& config, std::uint64_t seed) {
  FoldContext ctx;
  ctx.train_idx.resize(static_cast<std::size_t>(y.size()));
  std::iota(ctx.train_idx.begin(), ctx.train_idx.end(), 0);
  ctx.Xtr = X_std;
  ctx.ytr = y;
  ctx.weights = balanced_class_weights(y);
  const auto folds = inner_split(y, seed);
  ctx.inner_train.resize(kInnerFolds);
  ctx.inner_test.resize(kInnerFolds);
  for (int k = 0; k < kInnerFolds; ++k) {
    ctx.inner_test[static_cast<std::size_t>(k)] = folds[static_cast<std::size_t>(k)];
    for (int other = 0; other < kInnerFolds; ++other) {
      if (other == k) continue;
      for (int i : folds[static_cast<std::size_t>(other)]) {
        ctx.inner_train[static_cast<std::size_t>(k)].push_back(i);
      }
    }
  }
  return fit_fold_head(ctx, config);
}

}  // namespace

std::pair<Controller, SearchDiagnostics> cross_validated_search(
    const std::vector<AnchorTriple>& anchors, const CvPlan& plan,
    const std::string& model_id, SignalMask mask, double p_stop, int jobs) {
  if (anchors.size() < 20) {
    fail(ErrorCode::TooFewAnchors,
         "need at least 20 anchors, got " + std::to_string(anchors.size()));
  }
  if (!(p_stop > 0.0 && p_stop < 1.0)) {
    fail(ErrorCode::InvalidArgument, "p_stop must lie in (0, 1)");
  }
  const FeatureMatrix X = anchors_to_features(anchors);
  const Eigen::VectorXi y = anchors_to_labels(anchors);
  if (!both_classes(y)) {
    fail(ErrorCode::DegenerateLabels, "anchor labels contain a single class");
  }
  std::vector<std::string> groups;
  groups.reserve(anchors.size());
  for (const auto& a : anchors) groups.push_back(a.group_id);

  const auto assignments = make_cv_folds(y, groups, plan);

  // Fold contexts are candidate-independent: standardizers, masked features
  // and inner splits are computed once and shared read-only by the sweep.
  std::vector<std::vector<FoldContext>> fold_ctx(static_cast<std::size_t>(plan.n_repeats));
  std::vector<FoldAudit> audits;
  for (int r = 0; r < plan.n_repeats; ++r) {
    for (int f = 0; f < plan.n_splits; ++f) {
      FoldContext ctx;
      ctx.repeat = r;
      ctx.fold = f;
      for (std::size_t i = 0; i < anchors.size(); ++i) {
        if (assignments[static_cast<std::size_t>(r)][i] == f) {
          ctx.test_idx.push_back(static_cast<int>(i));
        } else {
          ctx.train_idx.push_back(static_cast<int>(i));
        }
      }
      if (ctx.test_idx.empty() || ctx.train_idx.empty()) continue;
      const FeatureMatrix Xtr_raw = take_rows(X, ctx.train_idx);
      ctx.standardizer = Standardizer::fit(Xtr_raw);
      ctx.Xtr = ctx.standardizer.transform(Xtr_raw);
      ctx.Xte = ctx.standardizer.transform(take_rows(X, ctx.test_idx));
      apply_signal_mask(ctx.Xtr, mask);
      apply_signal_mask(ctx.Xte, mask);
      ctx.ytr = take_labels(y, ctx.train_idx);
      if (!both_classes(ctx.ytr)) {
        fail(ErrorCode::DegenerateLabels,
             "training fold lost one class; provide more balanced anchors");
      }
      ctx.weights = balanced_class_weights(ctx.ytr);
      const auto inner = inner_split(
          ctx.ytr, mix_seed(plan.seed, static_cast<std::uint64_t>(r),
                            static_cast<std::uint64_t>(f), fnv1a64("inner")));
      ctx.inner_train.resize(kInnerFolds);
      ctx.inner_test.resize(kInnerFolds);
      for (int k = 0; k < kInnerFolds; ++k) {
        ctx.inner_test[static_cast<std::size_t>(k)] = inner[static_cast<std::size_t>(k)];
        for (int other = 0; other < kInnerFolds; ++other) {
          if (other == k) continue;
          for (int i : inner[static_cast<std::size_t>(other)]) {
            ctx.inner_train[static_cast<std::size_t>(k)].push_back(i);
          }
        }
      }
      FoldAudit audit;
      audit.repeat = r;
      audit.fold = f;
      audit.test_indices = ctx.test_idx;
      audit.standardizer = ctx.standardizer;
      audits.push_back(std::move(audit));
      fold_ctx[static_cast<std::size_t>(r)].push_back(std::move(ctx));
    }
  }

  const std::vector<EstimatorConfig> space = enumerate_search_space();
  std::vector<CandidateEval> evals(space.size());
  run_ordered<CandidateEval>(
      space.size(), jobs,
      [&](std::size_t c) {
        return evaluate_candidate(space[c], fold_ctx, y, plan.n_repeats);
      },
      [&](std::size_t c, CandidateEval&& e) { evals[c] = std::move(e); });

  int winner = -1;
  for (std::size_t c = 0; c < evals.size(); ++c) {
    const auto& s = evals[c].summary;
    if (!s.converged) continue;
    if (winner < 0) {
      winner = static_cast<int>(c);
      continue;
    }
    const auto& w = evals[static_cast<std::size_t>(winner)].summary;
    if (s.oof_auroc > w.oof_auroc ||
        (s.oof_auroc == w.oof_auroc && s.oof_ece < w.oof_ece)) {
      winner = static_cast<int>(c);
    }
  }
  if (winner < 0) {
    fail(ErrorCode::AllCandidatesFailed, "no candidate converged in the search");
  }

  SearchDiagnostics diag;
  diag.candidates.reserve(evals.size());
  for (const auto& e : evals) diag.candidates.push_back(e.summary);
  diag.winner_index = winner;
  diag.winner_oof_auroc = evals[static_cast<std::size_t>(winner)].summary.oof_auroc;
  diag.winner_oof_ece = evals[static_cast<std::size_t>(winner)].summary.oof_ece;
  diag.winner_oof_probability = evals[static_cast<std::size_t>(winner)].oof_probability;
  diag.fold_audits = std::move(audits);
  diag.seed = plan.seed;

  // Final refit on all anchors with the winning configuration.
  const EstimatorConfig& best = space[static_cast<std::size_t>(winner)];
  Controller controller;
  controller.model_id = model_id;
  controller.config = best;
  controller.standardizer = Standardizer::fit(X);
  FeatureMatrix X_std = controller.standardizer.transform(X);
  apply_signal_mask(X_std, mask);
  controller.head = fit_final_head(X_std, y, best, mix_seed(plan.seed, fnv1a64("final-head")));
  controller.estimator = train_estimator(X_std, y, balanced_class_weights(y), best);
  controller.p_stop = p_stop;
  controller.mask = mask;
  controller.provenance =
      CvProvenance{diag.winner_oof_auroc, diag.winner_oof_ece, plan.seed,
                   static_cast<int>(anchors.size())};
  return {std::move(controller), std::move(diag)};
}

Decision decide(const Controller& controller, double fok, double jol) {
  FeatureRow x = controller.standardizer.transform_one(fok, jol);
  apply_signal_mask(x, controller.mask);
  const double score = decision_score(controller.estimator, x);
  const double p = controller.head.apply(score);
  return Decision{p, p >= controller.p_stop};
}

bool hand_rule_retry(double fok, double jol, double tau) {
  return (1.0 - jol) * fok > tau;
}

// ---- artifact -------------------------------------------------------------------

namespace {

json gamma_to_json(const GammaSpec& g) {
  if (g.scale) return json("scale");
  return json(g.value);
}

GammaSpec gamma_from_json(const json& j) {
  if (j.is_string()) {
    if (j.get<std::string>() != "scale") {
      fail(ErrorCode::CorruptArtifact, "bad gamma spec");
    }
    return GammaSpec{true, 0.0};
  }
  return GammaSpec{false, j.get<double>()};
}

json config_to_json(const EstimatorConfig& c) {
  json j{{"family", estimator_family_to_string(c.family)},
         {"head", head_kind_to_string(c.head)}};
  if (c.C) j["C"] = *c.C;
  if (c.gamma) j["gamma"] = gamma_to_json(*c.gamma);
  if (c.degree) j["degree"] = *c.degree;
  if (c.coef0) j["coef0"] = *c.coef0;
  if (c.nu) j["nu"] = *c.nu;
  if (c.penalty) j["penalty"] = *c.penalty == Penalty::l1 ? "l1" : "l2";
  return j;
}

EstimatorConfig config_from_json(const json& j) {
  EstimatorConfig c;
  c.family = estimator_family_from_string(j.at("family").get<std::string>());
  c.head = head_kind_from_string(j.at("head").get<std::string>());
  if (j.contains("C")) c.C = j.at("C").get<double>();
  if (j.contains("gamma")) c.gamma = gamma_from_json(j.at("gamma"));
  if (j.contains("degree")) c.degree = j.at("degree").get<int>();
  if (j.contains("coef0")) c.coef0 = j.at("coef0").get<double>();
  if (j.contains("nu")) c.nu = j.at("nu").get<double>();
  if (j.contains("penalty")) {
    c.penalty = j.at("penalty").get<std::string>() == "l1" ? Penalty::l1 : Penalty::l2;
  }
  return c;
}

const char* kernel_kind_name(KernelKind k) {
  switch (k) {
    case KernelKind::linear: return "linear";
    case KernelKind::rbf: return "rbf";
    case KernelKind::poly: return "poly";
    case KernelKind::sigmoid: return "sigmoid";
  }
  return "linear";
}

KernelKind kernel_kind_from_name(const std::string& s) {
  if (s == "linear") return KernelKind::linear;
  if (s == "rbf") return KernelKind::rbf;
  if (s == "poly") return KernelKind::poly;
  if (s == "sigmoid") return KernelKind::sigmoid;
  fail(ErrorCode::CorruptArtifact, "unknown kernel kind '" + s + "'");
}

}  // namespace

std::string save_controller(const Controller& controller) {
  json estimator;
  if (controller.estimator.is_logistic) {
    estimator = json{{"type", "logistic"},
                     {"w", {controller.estimator.logistic.w[0], controller.estimator.logistic.w[1]}},
                     {"b", controller.estimator.logistic.b}};
  } else {
    const SvcModel& m = controller.estimator.svc;
    json sv = json::array();
    json coef = json::array();
    for (Eigen::Index i = 0; i < m.dual_coef.size(); ++i) {
      sv.push_back({m.support_vectors(i, 0), m.support_vectors(i, 1)});
      coef.push_back(m.dual_coef[i]);
    }
    estimator = json{{"type", "svc"},
                     {"kernel",
                      {{"kind", kernel_kind_name(m.kernel.kind)},
                       {"gamma", m.kernel.gamma},
                       {"coef0", m.kernel.coef0},
                       {"degree", m.kernel.degree}}},
                     {"support_vectors", sv},
                     {"dual_coef", coef},
                     {"bias", m.bias}};
  }

  json head;
  if (controller.head.kind == HeadKind::isotonic) {
    head = json{{"kind", "isotonic"},
                {"thresholds", controller.head.isotonic.thresholds},
                {"values", controller.head.isotonic.values}};
  } else {
    head = json{{"kind", "sigmoid"},
                {"a", controller.head.sigmoid.a},
                {"b", controller.head.sigmoid.b}};
  }

  const json artifact{
      {"format", kArtifactFormat},
      {"version", kArtifactVersion},
      {"model_id", controller.model_id},
      {"p_stop", controller.p_stop},
      {"signal_mask", signal_mask_to_string(controller.mask)},
      {"config", config_to_json(controller.config)},
      {"standardizer",
       {{"mean", {controller.standardizer.mean[0], controller.standardizer.mean[1]}},
        {"std", {controller.standardizer.stddev[0], controller.standardizer.stddev[1]}}}},
      {"estimator", estimator},
      {"head", head},
      {"provenance",
       {{"seed", controller.provenance.seed},
        {"oof_auroc", controller.provenance.oof_auroc},
        {"oof_ece", controller.provenance.oof_ece},
        {"n_anchors", controller.provenance.n_anchors}}}};
  return artifact.dump(2) + "\n";
}

Controller load_controller(const std::string& bytes) {
  json j;
  try {
    j = json::parse(bytes);
  } catch (const json::exception& e) {
    fail(ErrorCode::CorruptArtifact, std::string("artifact is not valid JSON: ") + e.what());
  }
  try {
    if (j.value("format", std::string{}) != kArtifactFormat) {
      fail(ErrorCode::CorruptArtifact, "not a controller artifact");
    }
    if (j.at("version").get<int>() != kArtifactVersion) {
      fail(ErrorCode::VersionMismatch,
           "artifact version " + j.at("version").dump() + ", expected " +
               std::to_string(kArtifactVersion));
    }
    Controller c;
    c.model_id = j.at("model_id").get<std::string>();
    c.p_stop = j.at("p_stop").get<double>();
    if (!(c.p_stop > 0.0 && c.p_stop < 1.0)) {
      fail(ErrorCode::CorruptArtifact, "p_stop outside (0, 1)");
    }
    c.mask = signal_mask_from_string(j.at("signal_mask").get<std::string>());
    c.config = config_from_json(j.at("config"));
    c.standardizer.mean << j.at("standardizer").at("mean").at(0).get<double>(),
        j.at("standardizer").at("mean").at(1).get<double>();
    c.standardizer.stddev << j.at("standardizer").at("std").at(0).get<double>(),
        j.at("standardizer").at("std").at(1).get<double>();

    const json& est = j.at("estimator");
    if (est.at("type").get<std::string>() == "logistic") {
      c.estimator.is_logistic = true;
      c.estimator.logistic.w << est.at("w").at(0).get<double>(), est.at("w").at(1).get<double>();
      c.estimator.logistic.b = est.at("b").get<double>();
    } else {
      c.estimator.is_logistic = false;
      SvcModel& m = c.estimator.svc;
      m.kernel.kind = kernel_kind_from_name(est.at("kernel").at("kind").get<std::string>());
      m.kernel.gamma = est.at("kernel").at("gamma").get<double>();
      m.kernel.coef0 = est.at("kernel").at("coef0").get<double>();
      m.kernel.degree = est.at("kernel").at("degree").get<int>();
      const auto& sv = est.at("support_vectors");
      const auto& coef = est.at("dual_coef");
      m.support_vectors.resize(static_cast<Eigen::Index>(sv.size()), 2);
      m.dual_coef.resize(static_cast<Eigen::Index>(coef.size()));
      if (sv.size() != coef.size()) {
        fail(ErrorCode::CorruptArtifact, "support vector / coefficient length mismatch");
      }
      for (std::size_t i = 0; i < sv.size(); ++i) {
        m.support_vectors(static_cast<Eigen::Index>(i), 0) = sv.at(i).at(0).get<double>();
        m.support_vectors(static_cast<Eigen::Index>(i), 1) = sv.at(i).at(1).get<double>();
        m.dual_coef[static_cast<Eigen::Index>(i)] = coef.at(i).get<double>();
      }
      m.bias = est.at("bias").get<double>();
    }

    const json& head = j.at("head");
    if (head.at("kind").get<std::string>() == "isotonic") {
      c.head.kind = HeadKind::isotonic;
      c.head.isotonic.thresholds = head.at("thresholds").get<std::vector<double>>();
      c.head.isotonic.values = head.at("values").get<std::vector<double>>();
      if (c.head.isotonic.thresholds.empty() ||
          c.head.isotonic.thresholds.size() != c.head.isotonic.values.size()) {
        fail(ErrorCode::CorruptArtifact, "bad isotonic head");
      }
    } else {
      c.head.kind = HeadKind::sigmoid;
      c.head.sigmoid.a = head.at("a").get<double>();
      c.head.sigmoid.b = head.at("b").get<double>();
    }

    const json& prov = j.at("provenance");
    c.provenance.seed = prov.at("seed").get<std::uint64_t>();
    c.provenance.oof_auroc = prov.at("oof_auroc").get<double>();
    c.provenance.oof_ece = prov.at("oof_ece").get<double>();
    c.provenance.n_anchors = prov.at("n_anchors").get<int>();
    return c;
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    fail(ErrorCode::CorruptArtifact, std::string("malformed controller artifact: ") + e.what());
  }
}

void write_controller_file(const Controller& controller, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::InvalidArgument, "cannot write controller artifact: " + path);
  out << save_controller(controller);
}

Controller read_controller_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::CorruptArtifact, "cannot open controller artifact: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return load_controller(ss.str());
}

}  // namespace metaharness
