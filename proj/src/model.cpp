#include "progscore/model.hpp"

#include <cmath>
#include <limits>

#include "progscore/io_util.hpp"
#include "progscore/nelder_mead.hpp"

namespace progscore {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

inline Vec2 qvec(double age) { return Vec2(age, 1.0); }

struct PosteriorWork {
  SubjectPosterior post;
  double logdet_sigma = 0.0;
  double uhat_dot_rhs = 0.0;  // u_hat^T Sigma^{-1} u_hat
};

PosteriorWork posterior_work(const Eigen::Ref<const Mat>& y_rows,
                             const std::vector<double>& ages, const ModelParams& theta,
                             const EStepCache& cache) {
  const int v = static_cast<int>(ages.size());
  Mat2 precision = cache.v_inv;
  Vec2 rhs = cache.v_inv_m;
  for (int j = 0; j < v; ++j) {
    const Vec2 q = qvec(ages[j]);
    precision.noalias() += cache.a_r_a * (q * q.transpose());
    const double proj = cache.r_inv_a.dot(y_rows.row(j).transpose() - theta.b);
    rhs.noalias() += q * proj;
  }
  const double det = precision(0, 0) * precision(1, 1) - precision(0, 1) * precision(1, 0);
  Mat2 sigma;
  sigma << precision(1, 1), -precision(0, 1), -precision(1, 0), precision(0, 0);
  sigma /= det;

  PosteriorWork w;
  w.post.sigma = sigma;
  w.post.u_hat = sigma * rhs;
  w.post.s.resize(v);
  for (int j = 0; j < v; ++j) w.post.s(j) = qvec(ages[j]).dot(w.post.u_hat);
  w.logdet_sigma = -std::log(det);
  w.uhat_dot_rhs = w.post.u_hat.dot(rhs);
  return w;
}

}  // namespace

EStepCache make_estep_cache(const ModelParams& theta, const NoiseCov& nc) {
  EStepCache c;
  c.r_inv_a = nc.solve(theta.a);
  c.a_r_a = theta.a.dot(c.r_inv_a);
  const Mat2 v = theta.v();
  const double det = v(0, 0) * v(1, 1) - v(0, 1) * v(1, 0);
  c.v_inv << v(1, 1), -v(0, 1), -v(1, 0), v(0, 0);
  c.v_inv /= det;
  c.v_inv_m = c.v_inv * theta.m;
  c.logdet_v = std::log(det);
  c.logdet_r = nc.logdet();
  return c;
}

SubjectPosterior posterior_subject(const Eigen::Ref<const Mat>& y_rows,
                                   const std::vector<double>& ages,
                                   const ModelParams& theta, const NoiseCov& nc,
                                   const EStepCache* cache) {
  if (y_rows.rows() != static_cast<Eigen::Index>(ages.size()))
    throw DataError("posterior_subject: measurement rows do not match ages");
  if (y_rows.cols() != theta.a.size())
    throw DataError("posterior_subject: measurement length does not match model");
  EStepCache local;
  if (!cache) {
    local = make_estep_cache(theta, nc);
    cache = &local;
  }
  return posterior_work(y_rows, ages, theta, *cache).post;
}

std::vector<SubjectPosterior> e_step(const Dataset& data, const ModelParams& theta,
                                     const NoiseCov& nc) {
  const EStepCache cache = make_estep_cache(theta, nc);
  std::vector<SubjectPosterior> out;
  out.reserve(data.n_subjects());
  for (int i = 0; i < data.n_subjects(); ++i) {
    const auto& s = data.subjects[i];
    out.push_back(posterior_subject(data.Y.middleRows(s.first_visit, s.n_visits),
                                    data.ages_of(i), theta, nc, &cache));
  }
  return out;
}

double q_function(const Dataset& data, const ModelParams& theta, const NoiseCov& nc,
                  const std::vector<SubjectPosterior>& posteriors) {
  const EStepCache cache = make_estep_cache(theta, nc);
  const int n = data.n_subjects();
  const double jtot = static_cast<double>(data.total_visits());

  double quad_resid = 0.0;
  double sum_q_sigma_q = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto& subj = data.subjects[i];
    const auto& post = posteriors[i];
    for (int j = 0; j < subj.n_visits; ++j) {
      const int row = subj.first_visit + j;
      const Vec2 q = qvec(data.visits[row].age);
      const Vec resid = data.Y.row(row).transpose() - theta.a * post.s(j) - theta.b;
      quad_resid += nc.quad(resid);
      sum_q_sigma_q += q.dot(post.sigma * q);
    }
  }

  double prior_terms = 0.0;
  for (int i = 0; i < n; ++i) {
    const Vec2 d = posteriors[i].u_hat - theta.m;
    prior_terms += d.dot(cache.v_inv * d) + (cache.v_inv * posteriors[i].sigma).trace();
  }

  return -0.5 * jtot * cache.logdet_r - 0.5 * quad_resid -
         0.5 * cache.a_r_a * sum_q_sigma_q - 0.5 * n * cache.logdet_v - 0.5 * prior_terms;
}

EStepResult e_step_loglik(const Dataset& data, const ModelParams& theta, const NoiseCov& nc) {
  const EStepCache cache = make_estep_cache(theta, nc);
  const int n = data.n_subjects();
  const int k = data.n_voxels();

  EStepResult out;
  out.posteriors.reserve(n);
  double ll = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto& subj = data.subjects[i];
    PosteriorWork w = posterior_work(data.Y.middleRows(subj.first_visit, subj.n_visits),
                                     data.ages_of(i), theta, cache);
    ll += 0.5 * (w.logdet_sigma - cache.logdet_v -
                 subj.n_visits * (k * kLog2Pi + cache.logdet_r));
    ll += 0.5 * w.uhat_dot_rhs;
    out.posteriors.push_back(std::move(w.post));
  }
  for (int row = 0; row < data.total_visits(); ++row) {
    const Vec resid = data.Y.row(row).transpose() - theta.b;
    ll -= 0.5 * nc.quad(resid);
  }
  ll -= 0.5 * n * theta.m.dot(cache.v_inv * theta.m);
  out.loglik = ll;
  return out;
}

double marginal_loglik(const Dataset& data, const ModelParams& theta, const NoiseCov& nc) {
  const EStepCache cache = make_estep_cache(theta, nc);
  const int n = data.n_subjects();
  const int k = data.n_voxels();

  double ll = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto& subj = data.subjects[i];
    const PosteriorWork w = posterior_work(data.Y.middleRows(subj.first_visit, subj.n_visits),
                                           data.ages_of(i), theta, cache);
    ll += 0.5 * (w.logdet_sigma - cache.logdet_v -
                 subj.n_visits * (k * kLog2Pi + cache.logdet_r));
    ll += 0.5 * w.uhat_dot_rhs;
  }
  for (int row = 0; row < data.total_visits(); ++row) {
    const Vec resid = data.Y.row(row).transpose() - theta.b;
    ll -= 0.5 * nc.quad(resid);
  }
  ll -= 0.5 * n * theta.m.dot(cache.v_inv * theta.m);
  return ll;
}

double marginal_loglik(const Dataset& data, const ModelParams& theta) {
  return marginal_loglik(data, theta, NoiseCov::build(theta.noise, data.grid));
}

TrajUpdate update_traj(const Dataset& data, const std::vector<SubjectPosterior>& posteriors) {
  const int k = data.n_voxels();
  const double jtot = static_cast<double>(data.total_visits());
  Vec sum_y = Vec::Zero(k);
  Vec sum_ys = Vec::Zero(k);
  double sum_s = 0.0;
  double dterm = 0.0;  // sum of q' Sigma q + s^2

  for (int i = 0; i < data.n_subjects(); ++i) {
    const auto& subj = data.subjects[i];
    const auto& post = posteriors[i];
    for (int j = 0; j < subj.n_visits; ++j) {
      const int row = subj.first_visit + j;
      const Vec2 q = qvec(data.visits[row].age);
      const double s = post.s(j);
      sum_y += data.Y.row(row).transpose();
      sum_ys += data.Y.row(row).transpose() * s;
      sum_s += s;
      dterm += q.dot(post.sigma * q) + s * s;
    }
  }

  const double denom = jtot * dterm - sum_s * sum_s;
  if (!(denom > 0.0)) {
    throw NumericError(
        "degenerate progression scores: trajectory update denominator is not positive "
        "(all scores equal with zero posterior spread)");
  }
  TrajUpdate u;
  u.a = (jtot * sum_ys - sum_y * sum_s) / denom;
  u.b = (sum_y * dterm - sum_ys * sum_s) / denom;
  return u;
}

Vec2 update_m(const std::vector<SubjectPosterior>& posteriors) {
  if (posteriors.empty()) throw DataError("update_m: no posteriors");
  Vec2 m = Vec2::Zero();
  for (const auto& p : posteriors) m += p.u_hat;
  return m / static_cast<double>(posteriors.size());
}

Vec3 update_nu(const std::vector<SubjectPosterior>& posteriors, const Vec2& m) {
  if (posteriors.size() < 2) throw DataError("update_nu: need at least 2 subjects");
  Mat2 v = Mat2::Zero();
  for (const auto& p : posteriors) {
    const Vec2 d = p.u_hat - m;
    v += d * d.transpose() + p.sigma;
  }
  v /= static_cast<double>(posteriors.size());

  const double tr = v.trace();
  const double det = v(0, 0) * v(1, 1) - v(0, 1) * v(1, 0);
  if (!(v(0, 0) > 0.0) || !(det > 1e-14 * tr * tr)) {
    const double jitter = tr > 0.0 ? 1e-8 * tr / 2.0 : 1e-12;
    v(0, 0) += jitter;
    v(1, 1) += jitter;
  }
  return nu_from_v(v);
}

Vec lambda_floor(const Dataset& data) {
  const int k = data.n_voxels();
  Vec floor(k);
  const double jtot = static_cast<double>(data.total_visits());
  for (int c = 0; c < k; ++c) {
    const double mean = data.Y.col(c).mean();
    const double var = (data.Y.col(c).array() - mean).square().sum() / jtot;
    floor(c) = 1e-6 * std::sqrt(var);
    if (!(floor(c) > 0.0)) floor(c) = 1e-12;  // constant column
  }
  return floor;
}

Vec update_lambda_diag(const Dataset& data, const std::vector<SubjectPosterior>& posteriors,
                       const Vec& a, const Vec& b, const Vec& floor) {
  const int k = data.n_voxels();
  const double jtot = static_cast<double>(data.total_visits());
  Vec acc = Vec::Zero(k);
  double sum_q_sigma_q = 0.0;
  for (int i = 0; i < data.n_subjects(); ++i) {
    const auto& subj = data.subjects[i];
    const auto& post = posteriors[i];
    for (int j = 0; j < subj.n_visits; ++j) {
      const int row = subj.first_visit + j;
      const Vec2 q = qvec(data.visits[row].age);
      const Vec resid = data.Y.row(row).transpose() - a * post.s(j) - b;
      acc += resid.cwiseProduct(resid);
      sum_q_sigma_q += q.dot(post.sigma * q);
    }
  }
  acc += a.cwiseProduct(a) * sum_q_sigma_q;
  Vec lambda = (acc / jtot).cwiseSqrt();
  return lambda.cwiseMax(floor);
}

RhoBounds rho_search_bounds(const VoxelGrid& grid) {
  double dmin = std::numeric_limits<double>::infinity();
  double dmax = 0.0;
  const int k = grid.n_voxels();
  for (int i = 0; i < k; ++i) {
    for (int j = i + 1; j < k; ++j) {
      const double d = grid.distance(i, j);
      if (d > 0.0) dmin = std::min(dmin, d);
      dmax = std::max(dmax, d);
    }
  }
  if (!std::isfinite(dmin) || dmax <= 0.0)
    throw DataError("rho_search_bounds: grid has no distinct voxel positions");
  return {0.1 * dmin, 10.0 * dmax};
}

namespace {

// Shared pieces of the stage-2 noise objective: the R-dependent terms of Q
// with Lambda = lambda * diag(lambda_hat).
struct NoiseObjective {
  Mat w;         // residual rows scaled by 1 / lambda_hat
  Vec wa;        // a / lambda_hat
  double s_q = 0.0;
  double sum_log_lambda_hat = 0.0;
  double jtot = 0.0;
  int k = 0;

  NoiseObjective(const Dataset& data, const std::vector<SubjectPosterior>& posteriors,
                 const Vec& a, const Vec& b, const Vec& lambda_hat) {
    k = data.n_voxels();
    jtot = static_cast<double>(data.total_visits());
    sum_log_lambda_hat = lambda_hat.array().log().sum();
    const Vec inv_hat = lambda_hat.cwiseInverse();
    wa = a.cwiseProduct(inv_hat);
    w.resize(data.total_visits(), k);
    for (int i = 0; i < data.n_subjects(); ++i) {
      const auto& subj = data.subjects[i];
      const auto& post = posteriors[i];
      for (int j = 0; j < subj.n_visits; ++j) {
        const int row = subj.first_visit + j;
        const Vec2 q = qvec(data.visits[row].age);
        s_q += q.dot(post.sigma * q);
        w.row(row) = (data.Y.row(row).transpose() - a * post.s(j) - b)
                         .cwiseProduct(inv_hat)
                         .transpose();
      }
    }
  }

  // T = sum_ij w' C^{-1} w + (wa' C^{-1} wa) * S_q
  double t_of(const CorrelationFactor& corr) const {
    double t = 0.0;
    if (corr.is_identity()) {
      t = w.squaredNorm() + wa.squaredNorm() * s_q;
    } else {
      const auto lower = corr.chol_lower().triangularView<Eigen::Lower>();
      Mat solved = lower.solve(w.transpose());
      t = solved.squaredNorm() + corr.quad(wa) * s_q;
    }
    return t;
  }

  double value(double lambda, const CorrelationFactor& corr, double t) const {
    const double logdet_r =
        2.0 * k * std::log(lambda) + 2.0 * sum_log_lambda_hat + corr.logdet();
    return -0.5 * jtot * logdet_r - t / (2.0 * lambda * lambda);
  }
};

}  // namespace

LambdaRhoUpdate update_lambda_rho(const Dataset& data,
                                  const std::vector<SubjectPosterior>& posteriors,
                                  const Vec& a, const Vec& b, const Vec& lambda_hat,
                                  KernelFamily family, const VoxelGrid& grid,
                                  double prev_lambda, double prev_rho,
                                  const RhoBounds& bounds, std::optional<double> cutoff_mm,
                                  int max_evals) {
  const NoiseObjective obj(data, posteriors, a, b, lambda_hat);
  const double log_rho_lo = std::log(bounds.lo), log_rho_hi = std::log(bounds.hi);

  auto neg_q = [&](const Vec& x) -> double {
    const double log_lambda = x(0), log_rho = x(1);
    if (log_rho < log_rho_lo || log_rho > log_rho_hi || std::abs(log_lambda) > 18.42)
      return std::numeric_limits<double>::infinity();
    try {
      const auto corr = CorrelationFactor::build(grid, family, std::exp(log_rho), cutoff_mm);
      const double lambda = std::exp(log_lambda);
      return -obj.value(lambda, *corr, obj.t_of(*corr));
    } catch (const NumericError&) {
      return std::numeric_limits<double>::infinity();
    }
  };

  Vec x0(2);
  x0 << std::log(prev_lambda), std::log(prev_rho);
  NelderMeadOptions options;
  options.max_evals = max_evals;
  options.initial_step = 0.25;
  options.xtol = 1e-4;
  const NelderMeadResult nm = nelder_mead_minimize(neg_q, x0, options);

  const double f0 = neg_q(x0);
  LambdaRhoUpdate out;
  out.evals = nm.evals + 1;
  if (nm.f < f0) {
    out.lambda = std::exp(nm.x(0));
    out.rho = std::exp(nm.x(1));
    out.improved = true;
  } else {
    out.lambda = prev_lambda;
    out.rho = prev_rho;
    out.improved = false;
  }
  return out;
}

double update_lambda_fixed_corr(const Dataset& data,
                                const std::vector<SubjectPosterior>& posteriors,
                                const Vec& a, const Vec& b, const Vec& lambda_hat,
                                const CorrelationFactor& corr) {
  const NoiseObjective obj(data, posteriors, a, b, lambda_hat);
  const double t = obj.t_of(corr);
  const double lambda2 = t / (obj.jtot * obj.k);
  return std::sqrt(std::max(lambda2, 1e-24));
}

}  // namespace progscore
