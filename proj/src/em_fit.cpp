#include "progscore/em_fit.hpp"

#include <algorithm>
#include <cmath>

#include "progscore/diagnostics.hpp"
#include "progscore/io_util.hpp"

namespace progscore {

FitConfig FitConfig::for_kernel(const std::string& name) {
  FitConfig c;
  if (name == "auto") return c;
  c.candidates = {kernel_from_name(name)};
  return c;
}

int parameter_count(int n_voxels, FitStage stage) {
  return 2 + 3 + 2 * n_voxels + (stage == FitStage::IndependentNoise ? n_voxels : 2);
}

double aic_value(double loglik, int n_voxels, FitStage stage) {
  return 2.0 * parameter_count(n_voxels, stage) - 2.0 * loglik;
}

int FittedModel::parameter_count() const {
  return progscore::parameter_count(theta.n_voxels(), stage);
}

Vec FittedModel::baseline_scores() const {
  Vec s(posteriors.size());
  for (std::size_t i = 0; i < posteriors.size(); ++i) s(i) = posteriors[i].s(0);
  return s;
}

namespace {

struct BaselineMoments {
  double mean = 0.0;
  double sd = 0.0;
};

BaselineMoments baseline_moments(const std::vector<SubjectPosterior>& posteriors) {
  const double n = static_cast<double>(posteriors.size());
  BaselineMoments bm;
  for (const auto& p : posteriors) bm.mean += p.s(0);
  bm.mean /= n;
  double ss = 0.0;
  for (const auto& p : posteriors) ss += (p.s(0) - bm.mean) * (p.s(0) - bm.mean);
  bm.sd = std::sqrt(ss / n);
  return bm;
}

// Applies the reparameterization {wm + [0,z], w^2 V, a/w, b - (z/w)a, R}
// together with u* = w u + [0,z], s* = w s + z.
void apply_wz(ModelParams& theta, std::vector<SubjectPosterior>& posteriors, double w,
              double z) {
  const Mat2 v_new = w * w * theta.v();
  theta.nu = nu_from_v(v_new);
  theta.b -= (z / w) * theta.a;
  theta.a /= w;
  theta.m = w * theta.m + Vec2(0.0, z);
  for (auto& p : posteriors) {
    p.u_hat = w * p.u_hat + Vec2(0.0, z);
    p.sigma *= w * w;
    p.s = (w * p.s).array() + z;
  }
}

ModelParams init_stage1(const Dataset& data, const Vec& floor) {
  const int k = data.n_voxels();
  const double jtot = static_cast<double>(data.total_visits());

  double mean_t = 0.0;
  for (const auto& v : data.visits) mean_t += v.age;
  mean_t /= jtot;
  double var_t = 0.0;
  for (const auto& v : data.visits) var_t += (v.age - mean_t) * (v.age - mean_t);
  var_t /= jtot;
  if (!(var_t > 0.0))
    throw DataError("stage-1 initialization: all visit ages are identical");
  const double sd_t = std::sqrt(var_t);

  // Initial scores are the standardized ages; a, b by per-voxel least
  // squares on these scores; lambda from the residual spread.
  Vec s0(data.total_visits());
  for (int r = 0; r < data.total_visits(); ++r) s0(r) = (data.visits[r].age - mean_t) / sd_t;

  ModelParams theta;
  theta.b = data.Y.colwise().mean().transpose();
  theta.a.resize(k);
  for (int c = 0; c < k; ++c) {
    theta.a(c) = (data.Y.col(c).array() - theta.b(c)).cwiseProduct(s0.array()).sum() / jtot;
  }
  Vec lam2 = Vec::Zero(k);
  for (int r = 0; r < data.total_visits(); ++r) {
    const Vec resid = data.Y.row(r).transpose() - theta.a * s0(r) - theta.b;
    lam2 += resid.cwiseProduct(resid);
  }
  theta.noise.family = KernelFamily::Identity;
  theta.noise.lambda_diag = (lam2 / jtot).cwiseSqrt().cwiseMax(floor);
  theta.noise.scaled = false;

  const double alpha0 = 1.0 / sd_t;
  const double beta0 = -mean_t / sd_t;
  theta.m = Vec2(alpha0, beta0);
  // The implied per-subject u_i are all identical at this point, so the
  // sample covariance is rank zero; start from a spread of one initial-score
  // unit in beta and a relative spread of one in alpha instead.
  Mat2 v0 = Mat2::Zero();
  v0(0, 0) = alpha0 * alpha0;
  v0(1, 1) = 1.0;
  theta.nu = nu_from_v(v0);
  return theta;
}

struct EmRun {
  ModelParams theta;
  std::vector<SubjectPosterior> posteriors;
  double loglik = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<IterationRecord> trace;
};

EmRun run_em_stage1(const Dataset& data, const FitConfig& config, const Vec& floor) {
  EmRun run;
  run.theta = init_stage1(data, floor);
  auto corr = CorrelationFactor::identity(data.n_voxels());

  NoiseCov nc(run.theta.noise, corr);
  EStepResult e = e_step_loglik(data, run.theta, nc);
  run.loglik = e.loglik;
  run.posteriors = std::move(e.posteriors);
  run.trace.push_back({1, 0, run.loglik});

  for (int iter = 1; iter <= config.max_iter_stage1; ++iter) {
    TrajUpdate traj = update_traj(data, run.posteriors);
    run.theta.a = std::move(traj.a);
    run.theta.b = std::move(traj.b);
    run.theta.m = update_m(run.posteriors);
    run.theta.nu = update_nu(run.posteriors, run.theta.m);
    run.theta.noise.lambda_diag =
        update_lambda_diag(data, run.posteriors, run.theta.a, run.theta.b, floor);

    NoiseCov nc_new(run.theta.noise, corr);
    EStepResult e_new = e_step_loglik(data, run.theta, nc_new);
    run.iterations = iter;
    run.trace.push_back({1, iter, e_new.loglik});
    const double rel = (e_new.loglik - run.loglik) / std::max(1.0, std::abs(run.loglik));
    run.loglik = e_new.loglik;
    run.posteriors = std::move(e_new.posteriors);
    if (rel < config.tol) {
      run.converged = true;
      break;
    }
  }
  return run;
}

EmRun run_em_stage2(const Dataset& data, const FitConfig& config, const EmRun& stage1,
                    KernelFamily family, const RhoBounds& bounds, double min_distance) {
  EmRun run;
  run.theta = stage1.theta;
  const Vec lambda_hat = stage1.theta.noise.lambda_diag;
  run.theta.noise.family = family;
  run.theta.noise.lambda_diag = lambda_hat;
  run.theta.noise.scaled = true;
  run.theta.noise.lambda_scale = 1.0;
  run.theta.noise.rho = config.rho_fixed
                            ? *config.rho_fixed
                            : std::clamp(min_distance, bounds.lo, bounds.hi);

  auto corr = CorrelationFactor::build(data.grid, family, run.theta.noise.rho,
                                       config.cutoff_mm);
  {
    NoiseCov nc(run.theta.noise, corr);
    EStepResult e = e_step_loglik(data, run.theta, nc);
    run.loglik = e.loglik;
    run.posteriors = std::move(e.posteriors);
  }
  run.trace.push_back({2, 0, run.loglik});

  for (int iter = 1; iter <= config.max_iter_stage2; ++iter) {
    TrajUpdate traj = update_traj(data, run.posteriors);
    run.theta.a = std::move(traj.a);
    run.theta.b = std::move(traj.b);
    run.theta.m = update_m(run.posteriors);
    run.theta.nu = update_nu(run.posteriors, run.theta.m);

    if (config.rho_fixed) {
      run.theta.noise.lambda_scale = update_lambda_fixed_corr(
          data, run.posteriors, run.theta.a, run.theta.b, lambda_hat, *corr);
    } else {
      LambdaRhoUpdate u = update_lambda_rho(
          data, run.posteriors, run.theta.a, run.theta.b, lambda_hat, family, data.grid,
          run.theta.noise.lambda_scale, run.theta.noise.rho, bounds, config.cutoff_mm,
          config.lambda_rho_evals);
      if (u.improved && u.rho != run.theta.noise.rho) {
        corr = CorrelationFactor::build(data.grid, family, u.rho, config.cutoff_mm);
      }
      run.theta.noise.lambda_scale = u.lambda;
      run.theta.noise.rho = u.rho;
    }

    NoiseCov nc_new(run.theta.noise, corr);
    EStepResult e_new = e_step_loglik(data, run.theta, nc_new);
    run.iterations = iter;
    run.trace.push_back({2, iter, e_new.loglik});
    const double rel = (e_new.loglik - run.loglik) / std::max(1.0, std::abs(run.loglik));
    run.loglik = e_new.loglik;
    run.posteriors = std::move(e_new.posteriors);
    if (rel < config.tol) {
      run.converged = true;
      break;
    }
  }
  return run;
}

FittedModel finalize_model(const Dataset& data, EmRun run, FitStage stage,
                           std::shared_ptr<const CorrelationFactor> corr) {
  FittedModel m;
  standardize(run.theta, run.posteriors, data, m.w, m.z, m.sign_flipped);
  m.theta = std::move(run.theta);
  m.stage = stage;
  m.loglik = run.loglik;
  m.aic = aic_value(run.loglik, m.theta.n_voxels(), stage);
  m.iterations = run.iterations;
  m.converged = run.converged;
  m.trace = std::move(run.trace);
  m.corr = std::move(corr);

  // Recompute posteriors under the standardized parameters; by the model
  // equivalence they coincide with the transformed ones up to rounding.
  NoiseCov nc(m.theta.noise, m.corr);
  m.posteriors = e_step(data, m.theta, nc);

  double sigma_tr = 0.0;
  for (const auto& p : m.posteriors) sigma_tr += p.sigma.trace();
  sigma_tr /= static_cast<double>(m.posteriors.size());
  m.scores_informative = sigma_tr / m.theta.v().trace() < 0.9;

  m.subject_ids.reserve(data.n_subjects());
  m.subject_visits.resize(data.n_subjects());
  for (int i = 0; i < data.n_subjects(); ++i) {
    const auto& s = data.subjects[i];
    m.subject_ids.push_back(s.id);
    for (int j = 0; j < s.n_visits; ++j) {
      const auto& v = data.visits[s.first_visit + j];
      m.subject_visits[i].push_back({v.visit_index, v.age});
    }
  }
  m.grid = data.grid;
  return m;
}

}  // namespace

void standardize(ModelParams& theta, std::vector<SubjectPosterior>& posteriors,
                 const Dataset& data, double& w_out, double& z_out, bool& flipped_out) {
  (void)data;
  if (posteriors.empty()) throw DataError("standardize: no posteriors");
  const BaselineMoments bm = baseline_moments(posteriors);
  if (!(bm.sd > 0.0))
    throw NumericError("standardize: baseline scores have zero standard deviation");
  double w = 1.0 / bm.sd;
  double z = -w * bm.mean;
  apply_wz(theta, posteriors, w, z);

  bool flipped = false;
  if (theta.a.mean() < 0.0) {
    apply_wz(theta, posteriors, -1.0, 0.0);
    w = -w;
    z = -z;
    flipped = true;
  }
  w_out = w;
  z_out = z;
  flipped_out = flipped;
}

FittedModel fit(const Dataset& data, const FitConfig& config) {
  {
    auto violations = validate_dataset(data);
    if (!violations.empty()) {
      throw DataError("dataset invalid (" + std::to_string(violations.size()) +
                      " violations; first: " + violations.front() + ")");
    }
  }

  const Vec floor = lambda_floor(data);
  EmRun stage1 = run_em_stage1(data, config, floor);

  const bool stage1_only =
      config.candidates.size() == 1 && config.candidates[0] == KernelFamily::Identity;
  if (stage1_only) {
    return finalize_model(data, std::move(stage1), FitStage::IndependentNoise,
                          CorrelationFactor::identity(data.n_voxels()));
  }

  std::vector<KernelFamily> candidates = config.candidates;
  if (candidates.empty()) candidates = correlated_families();
  for (KernelFamily f : candidates)
    if (f == KernelFamily::Identity)
      throw DataError("fit: Identity cannot be mixed with correlated candidates");

  if (config.prescreen_top > 0 &&
      static_cast<int>(candidates.size()) > config.prescreen_top) {
    const Mat resid = standardized_residuals(data, stage1.theta, stage1.posteriors);
    const Semivariogram sv = empirical_semivariogram(resid, data.grid);
    const auto ranked = fit_semivariogram(sv, candidates);
    std::vector<KernelFamily> top;
    for (int i = 0; i < config.prescreen_top && i < static_cast<int>(ranked.size()); ++i)
      top.push_back(ranked[i].family);
    if (!top.empty()) candidates = std::move(top);
  }

  const RhoBounds bounds = rho_search_bounds(data.grid);
  const double min_distance = bounds.lo * 10.0;

  std::vector<std::pair<KernelFamily, double>> family_logliks;
  EmRun best;
  KernelFamily best_family = candidates.front();
  bool have_best = false;
  for (KernelFamily family : candidates) {
    EmRun run = run_em_stage2(data, config, stage1, family, bounds, min_distance);
    family_logliks.emplace_back(family, run.loglik);
    if (!have_best || run.loglik > best.loglik) {
      best = std::move(run);
      best_family = family;
      have_best = true;
    }
  }

  auto corr = CorrelationFactor::build(data.grid, best_family, best.theta.noise.rho,
                                       config.cutoff_mm);
  const double s1_loglik = stage1.loglik;
  std::vector<IterationRecord> full_trace = stage1.trace;
  full_trace.insert(full_trace.end(), best.trace.begin(), best.trace.end());
  best.trace = std::move(full_trace);

  FittedModel m = finalize_model(data, std::move(best), FitStage::CorrelatedNoise, corr);
  m.stage1_loglik = s1_loglik;
  m.stage1_aic = aic_value(s1_loglik, data.n_voxels(), FitStage::IndependentNoise);
  m.family_logliks = std::move(family_logliks);
  m.lambda_hat_digest = digest_doubles(m.theta.noise.lambda_diag.data(),
                                       static_cast<std::size_t>(m.theta.noise.lambda_diag.size()));
  return m;
}

SubjectPosterior predict_ps(const FittedModel& model, const Eigen::Ref<const Mat>& y_rows,
                            const std::vector<double>& ages) {
  if (y_rows.cols() != model.theta.a.size())
    throw DataError("predict_ps: measurement length " + std::to_string(y_rows.cols()) +
                    " does not match model K=" + std::to_string(model.theta.a.size()));
  auto corr = model.corr;
  if (!corr) {
    throw DataError("predict_ps: model has no correlation factor (load_model builds one)");
  }
  NoiseCov nc(model.theta.noise, corr);
  return posterior_subject(y_rows, ages, model.theta, nc);
}

Vec predict_traj(const ModelParams& theta, double s) { return theta.a * s + theta.b; }

}  // namespace progscore
