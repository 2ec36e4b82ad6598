#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "metaharness/core_types.hpp"

namespace metaharness {

// Discrimination, calibration, resampling and dispersion metrics. Pure
// functions over immutable inputs; everything here is Eigen-friendly so the
// controller can pass expressions and blocks without copies.

using VectorRef = Eigen::Ref<const Eigen::VectorXd>;
using LabelRef = Eigen::Ref<const Eigen::VectorXi>;

// Mann-Whitney statistic: over all (positive, negative) pairs, the fraction
// where score_pos > score_neg, ties counted 1/2. Throws DegenerateLabels when
// one class is absent.
double auroc(const VectorRef& scores, const LabelRef& labels);
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);

// Expected calibration error over equal-width bins on [0, 1].
double ece(const VectorRef& scores, const LabelRef& labels, int n_bins = 10);
double ece(const std::vector<double>& scores, const std::vector<int>& labels,
           int n_bins = 10);

// Percentile bootstrap interval (2.5th/97.5th of the resampled mean), scaled
// to percentage points. Deterministic for a fixed seed.
std::pair<double, double> bootstrap_ci(const std::vector<int>& correct, int B,
                                       std::uint64_t seed);

enum class Band { Low, Medium, High };

// Stable sort by score (ties broken by original index); bottom 30% Low,
// top 30% High, remainder Medium. Requires n >= 10.
std::vector<Band> band_split(const std::vector<double>& scores);

struct DispersionSummary {
  double median_within_std;  // over problems with K >= 2, population convention
  double across_std;         // std of first-attempt JOL over all problems
};

// Throws NoMultiAttempt when no trajectory has K >= 2.
DispersionSummary jol_dispersion(std::span<const Trajectory> trajectories);

// Among trajectories stopped at K=1 with a trusted decision, the fraction
// whose first attempt was correct. Empty denominator reports absent, not 0.
// first_attempt_correct runs parallel to trajectories.
std::optional<double> early_stop_hit_rate(std::span<const Trajectory> trajectories,
                                          const std::vector<bool>& first_attempt_correct);

// Fraction of trajectories with at least one attempt matching gold. Problems
// are looked up by trajectory problem_id; every one must carry gold.
double oracle_at_k(std::span<const Trajectory> trajectories,
                   const std::vector<Problem>& problems);

}  // namespace metaharness
