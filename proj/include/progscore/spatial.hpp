#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "progscore/common.hpp"
#include "progscore/dataset.hpp"

namespace progscore {

enum class KernelFamily { Identity, Exponential, Gaussian, RationalQuadratic, Spherical };

KernelFamily kernel_from_name(const std::string& name);
std::string kernel_name(KernelFamily f);

/// The four non-identity correlation families usable as noise models.
const std::vector<KernelFamily>& correlated_families();

/// Correlation at distance d (mm) for range rho (mm). Identity returns
/// 1 at d == 0 and 0 otherwise regardless of rho.
double correlation(KernelFamily family, double d, double rho);

/// V = U^T U with U = [[exp(nu1), nu2], [0, exp(nu3)]]; SPD for every finite nu.
Mat2 v_from_nu(const Vec3& nu);
/// Inverse map; throws DataError if V is not symmetric positive definite.
Vec3 nu_from_v(const Mat2& v);

/// Dense correlation matrix C for a grid (unit diagonal, symmetric).
/// A cutoff zeroes entries at d > cutoff_mm; it is honored only for the
/// Spherical family, where truncation beyond the range is exact.
Mat build_correlation_dense(const VoxelGrid& grid, KernelFamily family, double rho,
                            std::optional<double> cutoff_mm = std::nullopt);

/// Cholesky factor of C for one (grid, family, rho); immutable and
/// shareable across noise covariances and bootstrap replicates.
class CorrelationFactor {
 public:
  /// Factorizes C. On failure retries once with +1e-10 on the diagonal;
  /// a second failure raises NumericError with grid diagnostics.
  static std::shared_ptr<const CorrelationFactor> build(
      const VoxelGrid& grid, KernelFamily family, double rho,
      std::optional<double> cutoff_mm = std::nullopt);

  static std::shared_ptr<const CorrelationFactor> identity(int dim);

  bool is_identity() const { return identity_; }
  int dim() const { return dim_; }
  KernelFamily family() const { return family_; }
  double rho() const { return rho_; }
  double logdet() const { return logdet_; }
  bool jittered() const { return jittered_; }

  /// C^{-1} x via two triangular solves.
  Vec solve(const Vec& x) const;
  Mat solve(const Mat& x) const;
  /// x^T C^{-1} x = ||L^{-1} x||^2.
  double quad(const Vec& x) const;
  const Mat& chol_lower() const { return l_; }

 private:
  CorrelationFactor() = default;
  bool identity_ = false;
  int dim_ = 0;
  KernelFamily family_ = KernelFamily::Identity;
  double rho_ = 0.0;
  double logdet_ = 0.0;
  bool jittered_ = false;
  Mat l_;  // lower Cholesky of C (empty when identity)
};

/// Noise covariance parameters. Two parameterizations share the struct:
/// per-voxel scales (scaled == false, Lambda = diag(lambda_diag)) and the
/// scaled form Lambda = lambda_scale * diag(lambda_diag) with lambda_diag
/// held fixed as a reference.
struct NoiseModel {
  KernelFamily family = KernelFamily::Identity;
  double rho = 0.0;
  Vec lambda_diag;
  double lambda_scale = 1.0;
  bool scaled = false;

  Vec effective_diag() const {
    return scaled ? Vec(lambda_scale * lambda_diag) : lambda_diag;
  }
};

/// R = Lambda C Lambda with cached factorization. Solves and log
/// determinants go through Lambda^{-1} and triangular solves on C's
/// factor; R^{-1} is never formed.
class NoiseCov {
 public:
  NoiseCov(NoiseModel model, std::shared_ptr<const CorrelationFactor> corr);

  /// Convenience: builds (and factorizes) the correlation for the grid.
  static NoiseCov build(const NoiseModel& model, const VoxelGrid& grid,
                        std::optional<double> cutoff_mm = std::nullopt);

  const NoiseModel& model() const { return model_; }
  const std::shared_ptr<const CorrelationFactor>& corr() const { return corr_; }
  int dim() const { return static_cast<int>(lambda_eff_.size()); }
  const Vec& effective_diag() const { return lambda_eff_; }

  double logdet() const;         // log|R|
  Vec solve(const Vec& b) const;  // R^{-1} b
  Mat solve(const Mat& b) const;
  double quad(const Vec& x) const;  // x^T R^{-1} x

 private:
  NoiseModel model_;
  std::shared_ptr<const CorrelationFactor> corr_;
  Vec lambda_eff_;
  Vec inv_lambda_;
  double sum_log_lambda_ = 0.0;
};

}  // namespace progscore
