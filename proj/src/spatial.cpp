#include "progscore/spatial.hpp"

#include <cmath>
#include <limits>

#include "progscore/io_util.hpp"

namespace progscore {

KernelFamily kernel_from_name(const std::string& name) {
  if (name == "identity") return KernelFamily::Identity;
  if (name == "exponential") return KernelFamily::Exponential;
  if (name == "gaussian") return KernelFamily::Gaussian;
  if (name == "rational_quadratic") return KernelFamily::RationalQuadratic;
  if (name == "spherical") return KernelFamily::Spherical;
  throw DataError("unknown kernel family '" + name + "'");
}

std::string kernel_name(KernelFamily f) {
  switch (f) {
    case KernelFamily::Identity: return "identity";
    case KernelFamily::Exponential: return "exponential";
    case KernelFamily::Gaussian: return "gaussian";
    case KernelFamily::RationalQuadratic: return "rational_quadratic";
    case KernelFamily::Spherical: return "spherical";
  }
  throw DataError("invalid kernel family value");
}

const std::vector<KernelFamily>& correlated_families() {
  static const std::vector<KernelFamily> fams = {
      KernelFamily::Exponential, KernelFamily::Gaussian, KernelFamily::RationalQuadratic,
      KernelFamily::Spherical};
  return fams;
}

double correlation(KernelFamily family, double d, double rho) {
  if (family == KernelFamily::Identity) return d == 0.0 ? 1.0 : 0.0;
  if (!(rho > 0.0)) throw DataError("correlation: rho must be > 0, got " + format_double(rho));
  if (!(d >= 0.0) || !std::isfinite(d))
    throw DataError("correlation: distance must be finite and >= 0");
  const double r = d / rho;
  switch (family) {
    case KernelFamily::Exponential: return std::exp(-r);
    case KernelFamily::Gaussian: return std::exp(-r * r);
    case KernelFamily::RationalQuadratic: return 1.0 / (1.0 + r * r);
    case KernelFamily::Spherical:
      return d < rho ? 1.0 - 1.5 * r + 0.5 * r * r * r : 0.0;
    default: return d == 0.0 ? 1.0 : 0.0;
  }
}

Mat2 v_from_nu(const Vec3& nu) {
  Mat2 u;
  u << std::exp(nu(0)), nu(1), 0.0, std::exp(nu(2));
  return u.transpose() * u;
}

Vec3 nu_from_v(const Mat2& v) {
  const double asym = std::abs(v(0, 1) - v(1, 0));
  const double scale = v.cwiseAbs().maxCoeff();
  if (asym > 1e-10 * std::max(scale, 1.0))
    throw DataError("nu_from_v: matrix is not symmetric");
  if (!(v(0, 0) > 0.0)) throw DataError("nu_from_v: matrix is not positive definite");
  const double u11 = std::sqrt(v(0, 0));
  const double u12 = v(0, 1) / u11;
  const double rest = v(1, 1) - u12 * u12;
  if (!(rest > 0.0)) throw DataError("nu_from_v: matrix is not positive definite");
  return Vec3(std::log(u11), u12, std::log(std::sqrt(rest)));
}

Mat build_correlation_dense(const VoxelGrid& grid, KernelFamily family, double rho,
                            std::optional<double> cutoff_mm) {
  const int k = grid.n_voxels();
  Mat c = Mat::Identity(k, k);
  if (family == KernelFamily::Identity) return c;
  if (!(rho > 0.0))
    throw DataError("build_correlation: rho must be > 0, got " + format_double(rho));
  const bool use_cutoff = cutoff_mm.has_value() && family == KernelFamily::Spherical;
  for (int i = 0; i < k; ++i) {
    for (int j = i + 1; j < k; ++j) {
      const double d = grid.distance(i, j);
      double v = (use_cutoff && d > *cutoff_mm) ? 0.0 : correlation(family, d, rho);
      c(i, j) = c(j, i) = v;
    }
  }
  return c;
}

std::shared_ptr<const CorrelationFactor> CorrelationFactor::identity(int dim) {
  auto f = std::shared_ptr<CorrelationFactor>(new CorrelationFactor());
  f->identity_ = true;
  f->dim_ = dim;
  return f;
}

std::shared_ptr<const CorrelationFactor> CorrelationFactor::build(
    const VoxelGrid& grid, KernelFamily family, double rho,
    std::optional<double> cutoff_mm) {
  if (family == KernelFamily::Identity) return identity(grid.n_voxels());

  Mat c = build_correlation_dense(grid, family, rho, cutoff_mm);
  auto f = std::shared_ptr<CorrelationFactor>(new CorrelationFactor());
  f->dim_ = grid.n_voxels();
  f->family_ = family;
  f->rho_ = rho;

  Eigen::LLT<Mat> llt(c);
  if (llt.info() != Eigen::Success) {
    // Finite-precision guard: one jitter retry, then give up.
    c.diagonal().array() += 1e-10;
    llt.compute(c);
    if (llt.info() != Eigen::Success) {
      double dmin = std::numeric_limits<double>::infinity(), dmax = 0.0;
      for (int i = 0; i < f->dim_; ++i)
        for (int j = i + 1; j < f->dim_; ++j) {
          const double d = grid.distance(i, j);
          dmin = std::min(dmin, d);
          dmax = std::max(dmax, d);
        }
      throw NumericError("correlation matrix factorization failed: family=" +
                         kernel_name(family) + " rho=" + format_double(rho) +
                         " K=" + std::to_string(f->dim_) + " distance range=[" +
                         format_double(dmin) + ", " + format_double(dmax) + "] mm");
    }
    f->jittered_ = true;
  }
  f->l_ = llt.matrixL();
  f->logdet_ = 2.0 * f->l_.diagonal().array().log().sum();
  return f;
}

Vec CorrelationFactor::solve(const Vec& x) const {
  if (identity_) return x;
  Vec y = l_.triangularView<Eigen::Lower>().solve(x);
  return l_.triangularView<Eigen::Lower>().transpose().solve(y);
}

Mat CorrelationFactor::solve(const Mat& x) const {
  if (identity_) return x;
  Mat y = l_.triangularView<Eigen::Lower>().solve(x);
  return l_.triangularView<Eigen::Lower>().transpose().solve(y);
}

double CorrelationFactor::quad(const Vec& x) const {
  if (identity_) return x.squaredNorm();
  return l_.triangularView<Eigen::Lower>().solve(x).squaredNorm();
}

NoiseCov::NoiseCov(NoiseModel model, std::shared_ptr<const CorrelationFactor> corr)
    : model_(std::move(model)), corr_(std::move(corr)) {
  lambda_eff_ = model_.effective_diag();
  if (lambda_eff_.size() == 0) throw DataError("NoiseCov: empty lambda diagonal");
  if (corr_->dim() != lambda_eff_.size())
    throw DataError("NoiseCov: correlation dimension does not match lambda diagonal");
  if ((lambda_eff_.array() <= 0.0).any())
    throw DataError("NoiseCov: lambda diagonal must be positive");
  inv_lambda_ = lambda_eff_.cwiseInverse();
  sum_log_lambda_ = lambda_eff_.array().log().sum();
}

NoiseCov NoiseCov::build(const NoiseModel& model, const VoxelGrid& grid,
                         std::optional<double> cutoff_mm) {
  return NoiseCov(model, CorrelationFactor::build(grid, model.family, model.rho, cutoff_mm));
}

double NoiseCov::logdet() const { return 2.0 * sum_log_lambda_ + corr_->logdet(); }

Vec NoiseCov::solve(const Vec& b) const {
  return inv_lambda_.cwiseProduct(corr_->solve(Vec(inv_lambda_.cwiseProduct(b))));
}

Mat NoiseCov::solve(const Mat& b) const {
  Mat scaled = inv_lambda_.asDiagonal() * b;
  return inv_lambda_.asDiagonal() * corr_->solve(scaled);
}

double NoiseCov::quad(const Vec& x) const {
  return corr_->quad(Vec(inv_lambda_.cwiseProduct(x)));
}

}  // namespace progscore
