#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "progscore/em_fit.hpp"

namespace progscore {

struct BootstrapConfig {
  int replicates = 200;
  std::uint64_t seed = 1;
  int threads = 1;
  FitConfig fit;  // kernel/rho are overridden from the full-sample model
};

/// One converged bootstrap replicate: standardized parameters, ROI
/// summaries, and the original subjects scored under the replicate model.
struct ReplicateRecord {
  int replicate = 0;  // 0-based index into the PRNG substream layout
  Vec a, b;
  Vec2 m;
  Vec3 nu;
  double lambda_scale = 1.0;
  double loglik = 0.0;
  Vec roi_mean_a, roi_mean_b;   // per ROI (empty without labels)
  Vec alpha_orig, beta_orig;    // per original subject
  Vec s_orig;                   // per original visit (dataset row order)
};

struct BootstrapSamples {
  int requested = 0;
  std::uint64_t seed = 0;
  double rho_fixed = 0.0;
  KernelFamily family = KernelFamily::Identity;
  std::vector<std::string> roi_names;
  std::vector<ReplicateRecord> replicates;        // converged only
  std::vector<int> excluded;                      // replicate indices dropped
  std::vector<std::vector<int>> resample_indices; // per requested replicate

  int usable() const { return static_cast<int>(replicates.size()); }
};

/// Resample-with-replacement indices for one replicate: n draws from
/// stream (seed -> substream r) via next_below(n).
std::vector<int> bootstrap_indices(int n, std::uint64_t seed, int replicate);

/// Draws subjects with replacement (duplicates become distinct subjects),
/// refits with the full-sample kernel and rho frozen, standardizes, and
/// records parameters plus ROI and original-subject summaries.
/// Non-converged replicates are flagged and excluded.
BootstrapSamples bootstrap(const Dataset& data, const FittedModel& full_fit,
                           const BootstrapConfig& config);

/// Percentile interval with linear interpolation between order statistics
/// (position 1 + p(n-1)). Requires at least 20 samples.
std::pair<double, double> percentile_ci(std::vector<double> samples, double level);

struct HypothesisResult {
  std::string roi;
  std::optional<double> level_s;  // set for the level test
  std::vector<double> t_samples;
  double p_value = 1.0;
  bool clamped = false;  // true when the raw p fell below 1/B
  int n_replicates = 0;
};

/// ROI-average trajectory (1/|ROI|) sum_k (a_k s + b_k).
double roi_trajectory(const ModelParams& theta, const VoxelGrid& grid,
                      const std::string& roi, double s);

/// Level test: T = yhat_target(s) - max_{r != target} yhat_r(s) per
/// replicate; p = 2 min(F(0), 1 - F(0-)) clamped to [1/B, 1].
HypothesisResult test_level(const BootstrapSamples& samples, const std::string& target_roi,
                            double s);

/// Rate test: T = mean-a_target - max_{r != target} mean-a_r.
HypothesisResult test_rate(const BootstrapSamples& samples, const std::string& target_roi);

}  // namespace progscore
