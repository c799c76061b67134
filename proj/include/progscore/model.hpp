#pragma once

#include <vector>

#include "progscore/common.hpp"
#include "progscore/dataset.hpp"
#include "progscore/spatial.hpp"

namespace progscore {

/// Full parameter set of the progression-score model.
struct ModelParams {
  Vec a;   // per-voxel trajectory slopes
  Vec b;   // per-voxel trajectory intercepts
  Vec2 m;  // prior mean of the subject variables (alpha, beta)
  Vec3 nu; // log-Cholesky parameters of the prior covariance V
  NoiseModel noise;

  Mat2 v() const { return v_from_nu(nu); }
  int n_voxels() const { return static_cast<int>(a.size()); }
};

/// Posterior of one subject's (alpha, beta) and the implied visit scores.
struct SubjectPosterior {
  Vec2 u_hat;  // posterior mean
  Mat2 sigma;  // posterior covariance
  Vec s;       // s_j = [age_j, 1] . u_hat, one per visit
};

/// Per-parameter quantities shared by every subject within one E-step.
struct EStepCache {
  Vec r_inv_a;   // R^{-1} a
  double a_r_a;  // a^T R^{-1} a
  Mat2 v_inv;
  Vec2 v_inv_m;
  double logdet_v;
  double logdet_r;
};

EStepCache make_estep_cache(const ModelParams& theta, const NoiseCov& nc);

/// Posterior for one subject given visit rows (v_i x K) and ages.
/// The normal prior keeps the 2x2 system nonsingular even for a single visit.
SubjectPosterior posterior_subject(const Eigen::Ref<const Mat>& y_rows,
                                   const std::vector<double>& ages,
                                   const ModelParams& theta, const NoiseCov& nc,
                                   const EStepCache* cache = nullptr);

std::vector<SubjectPosterior> e_step(const Dataset& data, const ModelParams& theta,
                                     const NoiseCov& nc);

/// E-step and marginal log-likelihood in one pass (the per-subject solves
/// are shared). Used by the EM driver.
struct EStepResult {
  std::vector<SubjectPosterior> posteriors;
  double loglik = 0.0;
};
EStepResult e_step_loglik(const Dataset& data, const ModelParams& theta, const NoiseCov& nc);

/// EM surrogate Q(theta, theta'): posteriors must come from theta'.
double q_function(const Dataset& data, const ModelParams& theta, const NoiseCov& nc,
                  const std::vector<SubjectPosterior>& posteriors);

/// Marginal (incomplete-data) log-likelihood of theta.
double marginal_loglik(const Dataset& data, const ModelParams& theta, const NoiseCov& nc);
double marginal_loglik(const Dataset& data, const ModelParams& theta);

// ---- M-step updates -------------------------------------------------------

struct TrajUpdate {
  Vec a, b;
};

/// Joint closed-form update of the trajectory slopes and intercepts.
/// Throws NumericError when the shared denominator is not positive
/// (all scores equal with vanishing posterior spread).
TrajUpdate update_traj(const Dataset& data, const std::vector<SubjectPosterior>& posteriors);

Vec2 update_m(const std::vector<SubjectPosterior>& posteriors);

/// Prior-covariance update: analytic maximizer
///   V* = (1/n) sum_i [(u_i - m)(u_i - m)^T + Sigma_i],
/// regularized with 1e-8 * tr(V*)/2 * I when rank deficient.
Vec3 update_nu(const std::vector<SubjectPosterior>& posteriors, const Vec2& m);

/// Per-voxel floor used to keep Lambda invertible: 1e-6 * per-voxel data SD.
Vec lambda_floor(const Dataset& data);

/// Stage-1 (C = I) closed-form noise scales, floored elementwise.
Vec update_lambda_diag(const Dataset& data, const std::vector<SubjectPosterior>& posteriors,
                       const Vec& a, const Vec& b, const Vec& floor);

struct LambdaRhoUpdate {
  double lambda = 1.0;
  double rho = 0.0;
  bool improved = false;  // false = stagnation, previous values retained
  int evals = 0;
};

struct RhoBounds {
  double lo = 0.0, hi = 0.0;
};

/// Search bounds for rho: [0.1 * min nonzero distance, 10 * max distance].
RhoBounds rho_search_bounds(const VoxelGrid& grid);

/// Stage-2 noise update: derivative-free simplex over (log lambda, log rho)
/// maximizing the R-terms of Q; accepts a candidate only if it improves on
/// the previous point (generalized EM step).
LambdaRhoUpdate update_lambda_rho(const Dataset& data,
                                  const std::vector<SubjectPosterior>& posteriors,
                                  const Vec& a, const Vec& b, const Vec& lambda_hat,
                                  KernelFamily family, const VoxelGrid& grid,
                                  double prev_lambda, double prev_rho,
                                  const RhoBounds& bounds,
                                  std::optional<double> cutoff_mm = std::nullopt,
                                  int max_evals = 50);

/// Exact maximizer of Q over lambda alone with the correlation frozen
/// (bootstrap refits with rho fixed): lambda^2 = T / (J * K).
double update_lambda_fixed_corr(const Dataset& data,
                                const std::vector<SubjectPosterior>& posteriors,
                                const Vec& a, const Vec& b, const Vec& lambda_hat,
                                const CorrelationFactor& corr);

}  // namespace progscore
