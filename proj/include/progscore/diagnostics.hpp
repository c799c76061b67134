#pragma once

#include <cstdint>
#include <vector>

#include "progscore/model.hpp"

namespace progscore {

/// Empirical semivariogram of per-visit residual fields. Bins with no
/// pairs carry count 0 and NaN semivariance.
struct Semivariogram {
  Vec bin_centers;             // mm
  Vec gamma_hat;               // semivariance per bin (NaN where empty)
  std::vector<long> counts;    // (visit, pair) samples per bin
  double max_distance_mm = 0.0;
};

/// Residuals y_ij - a s_ij - b of a stage-1 fit, standardized per voxel by
/// the fitted noise scales so the semivariogram sill is comparable across
/// voxels. Rows follow the dataset's visit order.
Mat standardized_residuals(const Dataset& data, const ModelParams& theta,
                           const std::vector<SubjectPosterior>& posteriors);

/// Classical (Matheron) estimator: gamma(h) = (1/2N_h) sum (r_k - r_k')^2
/// over voxel pairs whose distance falls in bin h, pooled over visits.
/// When the grid has more than max_pairs_per_visit pairs, each visit uses
/// that many uniformly sampled pairs instead of full enumeration.
Semivariogram empirical_semivariogram(const Mat& residuals, const VoxelGrid& grid,
                                      int n_bins = 30, double max_distance_mm = 100.0,
                                      long max_pairs_per_visit = 1000000,
                                      std::uint64_t seed = 1);

struct SemivariogramFit {
  KernelFamily family = KernelFamily::Exponential;
  double rho = 0.0;
  double sill = 0.0;
  double sse = 0.0;
};

/// Least-squares fit of gamma(h) = sill * (1 - C(h; rho)) per family over
/// the nonempty bins (sill profiled analytically), ranked by SSE ascending.
/// Requires at least 5 nonempty bins.
std::vector<SemivariogramFit> fit_semivariogram(const Semivariogram& sv,
                                                const std::vector<KernelFamily>& families);

struct BlandAltman {
  double mean_diff = 0.0;
  double limit_lo = 0.0, limit_hi = 0.0;  // mean +- 1.96 * SD of differences
  std::vector<std::pair<double, double>> points;  // (mean, diff = a - b) per visit
};

/// Agreement of two per-visit score vectors over the same visit set.
BlandAltman bland_altman(const Vec& ps_a, const Vec& ps_b);

}  // namespace progscore
