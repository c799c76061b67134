#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <utility>

#include "progscore/model.hpp"

namespace progscore {

/// Per-voxel parameter ranges used when no explicit truth is supplied;
/// values are drawn uniformly per voxel from the design's seed.
struct ThetaRanges {
  double a_lo = 0.0, a_hi = 0.15;
  double b_lo = 0.9, b_hi = 1.3;
  double lambda_lo = 0.3, lambda_hi = 0.8;
};

/// Synthetic-dataset design: subject schedule, lattice grid, and ground
/// truth. Generation is a pure function of the design (including seed).
struct SimDesign {
  int n = 100;
  int max_visits = 7;                     // visit counts uniform on {1..max_visits}
  double base_age_lo = 55.0, base_age_hi = 93.0;
  double visit_gap_years = 1.5;

  std::array<int, 3> grid_dims{5, 5, 5};  // K = product
  double spacing_mm = 4.0;
  int roi_slabs = 5;                      // z-slab ROI labels; 0 disables

  Vec2 m{0.05, -3.5};
  double u_sd_alpha = 0.02, u_sd_beta = 1.0, u_corr = -0.3;
  KernelFamily family = KernelFamily::RationalQuadratic;
  double rho = 4.5;
  ThetaRanges ranges;
  std::optional<ModelParams> theta_explicit;  // overrides drawn a/b/lambda and m/nu

  std::uint64_t seed = 1;

  int n_voxels() const { return grid_dims[0] * grid_dims[1] * grid_dims[2]; }
};

/// Ground truth paired with a generated dataset.
struct SimTruth {
  ModelParams theta;
  Mat u;  // n x 2, subject variables
  Vec s;  // per visit, dataset row order
};

/// Lattice grid for a design (x varies fastest; ids v000, v001, ...).
VoxelGrid make_lattice_grid(const SimDesign& design);

/// Draws u_i ~ N2(m, V), schedules visits, and generates
/// y = a s + b + eps with eps ~ N_K(0, Lambda C Lambda).
std::pair<Dataset, SimTruth> simulate(const SimDesign& design);

/// phi . phi_hat / (|phi| |phi_hat|); throws on zero-norm input.
double cosine_similarity(const Vec& truth, const Vec& estimate);

/// Percentage of elements whose CI [lo, hi] contains the truth.
double percent_correct(const std::vector<std::pair<double, double>>& cis, const Vec& truth);

/// Rewrites the truth on the canonical score scale (baseline scores mean 0,
/// SD 1, mean slope >= 0) so fitted models are directly comparable to it.
SimTruth standardized_truth(const SimTruth& truth, const Dataset& data);

/// Appends exact copies of the chosen voxel columns; grid gains entries at
/// identical positions under fresh ids (original id + "_dupN").
Dataset duplicate_biomarkers(const Dataset& data, const std::vector<std::string>& voxel_ids,
                             int copies);

}  // namespace progscore
