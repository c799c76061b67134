#include "progscore/lme.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <thread>

#include "progscore/nelder_mead.hpp"
#include "progscore/spatial.hpp"

namespace progscore {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

struct SubjectBlock {
  Mat x;  // v_i x 2, rows [t, 1]
  Vec y;  // v_i
};

// Marginal negative log-likelihood with (eta, gamma) profiled out by GLS.
struct LmeObjective {
  const std::vector<SubjectBlock>& blocks;
  long total = 0;

  struct Eval {
    double negll = std::numeric_limits<double>::infinity();
    Vec2 beta = Vec2::Zero();
  };

  Eval operator()(const Mat2& xi, double sigma2) const {
    Eval out;
    Mat2 xtox = Mat2::Zero();
    Vec2 xtoy = Vec2::Zero();
    double logdet = 0.0;
    std::vector<Mat> omega_chol(blocks.size());
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const auto& blk = blocks[i];
      Mat omega = blk.x * xi * blk.x.transpose();
      omega.diagonal().array() += sigma2;
      Eigen::LLT<Mat> llt(omega);
      if (llt.info() != Eigen::Success) return out;
      omega_chol[i] = llt.matrixL();
      const auto lower = omega_chol[i].triangularView<Eigen::Lower>();
      logdet += 2.0 * omega_chol[i].diagonal().array().log().sum();
      const Mat lx = lower.solve(blk.x);
      const Vec ly = lower.solve(blk.y);
      xtox.noalias() += lx.transpose() * lx;
      xtoy.noalias() += lx.transpose() * ly;
    }
    const double det = xtox(0, 0) * xtox(1, 1) - xtox(0, 1) * xtox(1, 0);
    if (!(det > 0.0)) return out;
    Mat2 inv;
    inv << xtox(1, 1), -xtox(0, 1), -xtox(1, 0), xtox(0, 0);
    inv /= det;
    out.beta = inv * xtoy;

    double quad = 0.0;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const auto lower = omega_chol[i].triangularView<Eigen::Lower>();
      const Vec resid = blocks[i].y - blocks[i].x * out.beta;
      quad += lower.solve(resid).squaredNorm();
    }
    out.negll = 0.5 * (total * kLog2Pi + logdet + quad);
    return out;
  }
};

}  // namespace

LmeVoxelFit fit_lme_voxel(const Dataset& data, int voxel, const LmeConfig& config) {
  if (voxel < 0 || voxel >= data.n_voxels())
    throw DataError("fit_lme_voxel: voxel index out of range");

  std::vector<SubjectBlock> blocks(data.n_subjects());
  long total = 0;
  int longitudinal = 0;
  for (int i = 0; i < data.n_subjects(); ++i) {
    const auto& subj = data.subjects[i];
    blocks[i].x.resize(subj.n_visits, 2);
    blocks[i].y.resize(subj.n_visits);
    for (int j = 0; j < subj.n_visits; ++j) {
      const auto& v = data.visits[subj.first_visit + j];
      blocks[i].x(j, 0) = v.age;
      blocks[i].x(j, 1) = 1.0;
      blocks[i].y(j) = data.Y(subj.first_visit + j, voxel);
    }
    total += subj.n_visits;
    if (subj.n_visits >= 2) ++longitudinal;
  }

  // Pooled OLS start; also the Xi -> 0 reference the optimum must beat.
  const LmeObjective objective{blocks, total};
  Mat2 xtx = Mat2::Zero();
  Vec2 xty = Vec2::Zero();
  for (const auto& blk : blocks) {
    xtx.noalias() += blk.x.transpose() * blk.x;
    xty.noalias() += blk.x.transpose() * blk.y;
  }
  const Vec2 beta_ols = xtx.inverse() * xty;
  double rss = 0.0;
  for (const auto& blk : blocks) rss += (blk.y - blk.x * beta_ols).squaredNorm();
  double sigma2_ols = rss / static_cast<double>(total);
  if (!(sigma2_ols > 0.0)) sigma2_ols = 1e-12;

  double age_var = 0.0, age_mean = 0.0;
  for (const auto& blk : blocks) age_mean += blk.x.col(0).sum();
  age_mean /= static_cast<double>(total);
  for (const auto& blk : blocks)
    age_var += (blk.x.col(0).array() - age_mean).square().sum();
  age_var = std::max(age_var / static_cast<double>(total), 0.25);

  const double xi_eps = 1e-8 * sigma2_ols;
  LmeVoxelFit fit;

  if (longitudinal < 2) {
    // Xi is not identifiable; pin it near zero and fit sigma alone.
    auto neg = [&](const Vec& x) {
      return objective(Mat2(xi_eps * Mat2::Identity()), std::exp(2.0 * x(0))).negll;
    };
    Vec x0(1);
    x0 << 0.5 * std::log(sigma2_ols);
    NelderMeadOptions opt;
    opt.max_evals = 200;
    opt.xtol = 1e-10;
    const auto nm = nelder_mead_minimize(neg, x0, opt);
    fit.xi = xi_eps * Mat2::Identity();
    fit.sigma2 = std::exp(2.0 * nm.x(0));
    const auto eval = objective(fit.xi, fit.sigma2);
    fit.eta = eval.beta(0);
    fit.gamma = eval.beta(1);
    fit.loglik = -eval.negll;
    fit.flagged = true;
    return fit;
  }

  // Simplex over (nu1, nu2, nu3, log sigma) with GLS-profiled fixed effects.
  auto unpack_xi = [](const Vec& x) { return v_from_nu(Vec3(x(0), x(1), x(2))); };
  auto neg = [&](const Vec& x) {
    if (x.cwiseAbs().maxCoeff() > 40.0) return std::numeric_limits<double>::infinity();
    return objective(unpack_xi(x), std::exp(2.0 * x(3))).negll;
  };

  Vec x0(4);
  const double xi_slope0 = 0.1 * sigma2_ols / age_var;
  const double xi_int0 = 0.1 * sigma2_ols;
  x0 << 0.5 * std::log(xi_slope0), 0.0, 0.5 * std::log(xi_int0),
      0.5 * std::log(0.9 * sigma2_ols);
  NelderMeadOptions opt;
  opt.max_evals = config.max_evals;
  opt.xtol = 1e-7;
  opt.ftol = config.ftol;
  opt.initial_step = 0.5;
  const auto nm = nelder_mead_minimize(neg, x0, opt);

  // Keep the better of the simplex optimum and the Xi -> 0 degenerate fit so
  // the mixed model never scores below its OLS submodel.
  const auto ols_eval = objective(Mat2(xi_eps * Mat2::Identity()), sigma2_ols);
  if (nm.f <= ols_eval.negll) {
    fit.xi = unpack_xi(nm.x);
    fit.sigma2 = std::exp(2.0 * nm.x(3));
  } else {
    fit.xi = xi_eps * Mat2::Identity();
    fit.sigma2 = sigma2_ols;
  }
  const auto eval = objective(fit.xi, fit.sigma2);
  fit.eta = eval.beta(0);
  fit.gamma = eval.beta(1);
  fit.loglik = -eval.negll;
  return fit;
}

std::vector<LmeVoxelFit> fit_lme_all(const Dataset& data, const LmeConfig& config,
                                     int threads) {
  std::vector<LmeVoxelFit> fits(data.n_voxels());
  std::atomic<int> next{0};
  auto worker = [&] {
    for (;;) {
      const int k = next.fetch_add(1);
      if (k >= data.n_voxels()) return;
      fits[k] = fit_lme_voxel(data, k, config);
    }
  };
  const int n_threads = std::max(1, threads);
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return fits;
}

LmeSummary lme_model_summary(const std::vector<LmeVoxelFit>& fits) {
  if (fits.empty()) throw DataError("lme_model_summary: no fits");
  LmeSummary s;
  for (const auto& f : fits) s.total_loglik += f.loglik;
  s.aic = 2.0 * 6.0 * static_cast<double>(fits.size()) - 2.0 * s.total_loglik;
  return s;
}

}  // namespace progscore
