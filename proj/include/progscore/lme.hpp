#pragma once

#include <vector>

#include "progscore/dataset.hpp"

namespace progscore {

/// Maximum-likelihood fit of the per-voxel linear mixed-effects model
/// y_ijk = (eta + eta_i) t_ij + (gamma + gamma_i) + eps with random
/// (eta_i, gamma_i) ~ N2(0, Xi) and eps ~ N(0, sigma2).
struct LmeVoxelFit {
  double eta = 0.0;     // fixed slope per year
  double gamma = 0.0;   // fixed intercept
  Mat2 xi = Mat2::Zero();
  double sigma2 = 0.0;
  double loglik = 0.0;
  bool flagged = false;  // Xi pinned near zero (insufficient longitudinal data)
};

struct LmeConfig {
  int max_evals = 600;
  double ftol = 1e-8;
};

LmeVoxelFit fit_lme_voxel(const Dataset& data, int voxel, const LmeConfig& config = {});

std::vector<LmeVoxelFit> fit_lme_all(const Dataset& data, const LmeConfig& config = {},
                                     int threads = 1);

struct LmeSummary {
  double total_loglik = 0.0;
  double aic = 0.0;  // 2 * 6K - 2 * total (eta, gamma, 3 Xi entries, sigma2 per voxel)
};

LmeSummary lme_model_summary(const std::vector<LmeVoxelFit>& fits);

}  // namespace progscore
