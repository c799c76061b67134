#pragma once

#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "progscore/model.hpp"

namespace progscore {

enum class FitStage { IndependentNoise, CorrelatedNoise };

struct FitConfig {
  /// Correlation families to try in stage 2. Empty = automatic selection
  /// over all four; a single Identity entry stops after stage 1.
  std::vector<KernelFamily> candidates;
  double tol = 1e-6;          // relative log-likelihood increase for convergence
  int max_iter_stage1 = 100;
  int max_iter_stage2 = 30;
  int lambda_rho_evals = 50;  // objective budget per stage-2 noise update
  std::optional<double> rho_fixed;  // freeze rho (bootstrap refits)
  std::optional<double> cutoff_mm;  // hard-zero cutoff, Spherical only
  int prescreen_top = 0;      // >0: semivariogram ranking restricts candidates

  static FitConfig for_kernel(const std::string& name);  // "auto" | family name
};

struct IterationRecord {
  int stage = 1;
  int iter = 0;
  double loglik = 0.0;
};

struct VisitKey {
  long visit_index = 0;
  double age = 0.0;
};

/// A fitted, standardized progression-score model. Carries its grid so a
/// serialized model is self-contained for prediction.
struct FittedModel {
  ModelParams theta;  // standardized parameters
  std::vector<SubjectPosterior> posteriors;  // recomputed under theta
  std::vector<std::string> subject_ids;
  std::vector<std::vector<VisitKey>> subject_visits;
  VoxelGrid grid;

  FitStage stage = FitStage::IndependentNoise;
  double w = 1.0, z = 0.0;  // standardization applied to the raw fit
  bool sign_flipped = false;
  double loglik = 0.0;
  double aic = 0.0;
  int iterations = 0;
  bool converged = false;
  bool scores_informative = true;
  std::vector<IterationRecord> trace;

  // Stage-1 companion metrics (populated on two-stage fits).
  double stage1_loglik = std::numeric_limits<double>::quiet_NaN();
  double stage1_aic = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::pair<KernelFamily, double>> family_logliks;
  std::string lambda_hat_digest;

  /// Cached correlation factor for predictions (not serialized).
  std::shared_ptr<const CorrelationFactor> corr;

  int parameter_count() const;
  Vec baseline_scores() const;  // first-visit score per subject
};

/// Two-stage EM fit: stage 1 with C = I and per-voxel noise scales, then
/// stage 2 with the correlation model initialized from stage 1 and
/// Lambda = lambda * Lambda_hat. The returned model is standardized so the
/// baseline scores have mean 0 and SD 1.
FittedModel fit(const Dataset& data, const FitConfig& config);

/// Number of free parameters for the AIC convention:
/// 2 (m) + 3 (nu) + K (a) + K (b) + {K in stage 1, 2 in stage 2}.
int parameter_count(int n_voxels, FitStage stage);
double aic_value(double loglik, int n_voxels, FitStage stage);

/// Standardizes parameters and per-subject estimates in place so baseline
/// scores have mean 0 / SD 1, flipping signs so mean(a) >= 0. Returns the
/// applied (w, z); marginal log-likelihood is unchanged.
void standardize(ModelParams& theta, std::vector<SubjectPosterior>& posteriors,
                 const Dataset& data, double& w_out, double& z_out, bool& flipped_out);

/// Scores new visits under a fitted model (K must match).
SubjectPosterior predict_ps(const FittedModel& model, const Eigen::Ref<const Mat>& y_rows,
                            const std::vector<double>& ages);

/// Trajectory prediction a * s + b.
Vec predict_traj(const ModelParams& theta, double s);

// Model file (JSON) round trip.
void save_model(const FittedModel& model, const std::string& path);
FittedModel load_model(const std::string& path);
std::string model_to_json(const FittedModel& model);
FittedModel model_from_json(const std::string& text);

}  // namespace progscore
