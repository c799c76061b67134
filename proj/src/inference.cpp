#include "progscore/inference.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <thread>

#include "progscore/rng.hpp"

namespace progscore {

std::vector<int> bootstrap_indices(int n, std::uint64_t seed, int replicate) {
  Rng rng = Rng::seeded(seed).stream(static_cast<std::uint64_t>(replicate));
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i)
    idx[i] = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(n)));
  return idx;
}

namespace {

Dataset resample_dataset(const Dataset& data, const std::vector<int>& idx) {
  Dataset out;
  out.grid = data.grid;
  int total = 0;
  for (int i : idx) total += data.subjects[i].n_visits;
  out.Y.resize(total, data.n_voxels());
  int row = 0;
  for (std::size_t pos = 0; pos < idx.size(); ++pos) {
    const auto& src = data.subjects[idx[pos]];
    SubjectRecord rec;
    rec.id = src.id + "_b" + std::to_string(pos);
    rec.first_visit = row;
    rec.n_visits = src.n_visits;
    for (int j = 0; j < src.n_visits; ++j) {
      const auto& v = data.visits[src.first_visit + j];
      out.visits.push_back({static_cast<int>(pos), v.visit_index, v.age});
      out.Y.row(row) = data.Y.row(src.first_visit + j);
      ++row;
    }
    out.subjects.push_back(std::move(rec));
  }
  return out;
}

Vec roi_means(const Vec& values, const VoxelGrid& grid,
              const std::vector<std::string>& rois) {
  Vec out(static_cast<Eigen::Index>(rois.size()));
  for (std::size_t r = 0; r < rois.size(); ++r) {
    const auto voxels = grid.roi_voxels(rois[r]);
    double acc = 0.0;
    for (int k : voxels) acc += values(k);
    out(static_cast<Eigen::Index>(r)) = acc / static_cast<double>(voxels.size());
  }
  return out;
}

}  // namespace

BootstrapSamples bootstrap(const Dataset& data, const FittedModel& full_fit,
                           const BootstrapConfig& config) {
  if (config.replicates < 1) throw DataError("bootstrap: need at least 1 replicate");

  BootstrapSamples out;
  out.requested = config.replicates;
  out.seed = config.seed;
  out.family = full_fit.theta.noise.family;
  out.rho_fixed = full_fit.theta.noise.rho;
  out.roi_names = data.grid.roi_names();

  FitConfig fit_config = config.fit;
  if (full_fit.stage == FitStage::CorrelatedNoise) {
    fit_config.candidates = {full_fit.theta.noise.family};
    fit_config.rho_fixed = full_fit.theta.noise.rho;
  } else {
    fit_config.candidates = {KernelFamily::Identity};
  }
  fit_config.prescreen_top = 0;

  const int n = data.n_subjects();
  out.resample_indices.resize(config.replicates);
  std::vector<std::optional<ReplicateRecord>> slots(config.replicates);

  std::atomic<int> next{0};
  auto worker = [&] {
    for (;;) {
      const int r = next.fetch_add(1);
      if (r >= config.replicates) return;
      const std::vector<int> idx = bootstrap_indices(n, config.seed, r);
      out.resample_indices[r] = idx;
      try {
        const Dataset resampled = resample_dataset(data, idx);
        FittedModel fitted = fit(resampled, fit_config);
        if (!fitted.converged) continue;

        ReplicateRecord rec;
        rec.replicate = r;
        rec.a = fitted.theta.a;
        rec.b = fitted.theta.b;
        rec.m = fitted.theta.m;
        rec.nu = fitted.theta.nu;
        rec.lambda_scale = fitted.theta.noise.lambda_scale;
        rec.loglik = fitted.loglik;
        if (!out.roi_names.empty()) {
          rec.roi_mean_a = roi_means(fitted.theta.a, data.grid, out.roi_names);
          rec.roi_mean_b = roi_means(fitted.theta.b, data.grid, out.roi_names);
        }
        // Score the original subjects under the replicate model.
        rec.alpha_orig.resize(n);
        rec.beta_orig.resize(n);
        rec.s_orig.resize(data.total_visits());
        NoiseCov nc(fitted.theta.noise, fitted.corr);
        const EStepCache cache = make_estep_cache(fitted.theta, nc);
        for (int i = 0; i < n; ++i) {
          const auto& subj = data.subjects[i];
          const SubjectPosterior p =
              posterior_subject(data.Y.middleRows(subj.first_visit, subj.n_visits),
                                data.ages_of(i), fitted.theta, nc, &cache);
          rec.alpha_orig(i) = p.u_hat(0);
          rec.beta_orig(i) = p.u_hat(1);
          rec.s_orig.segment(subj.first_visit, subj.n_visits) = p.s;
        }
        slots[r] = std::move(rec);
      } catch (const NumericError&) {
        // flagged below as excluded
      }
    }
  };

  const int n_threads = std::max(1, config.threads);
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  for (int r = 0; r < config.replicates; ++r) {
    if (slots[r])
      out.replicates.push_back(std::move(*slots[r]));
    else
      out.excluded.push_back(r);
  }
  return out;
}

std::pair<double, double> percentile_ci(std::vector<double> samples, double level) {
  if (!(level > 0.0 && level < 1.0)) throw DataError("percentile_ci: level must be in (0,1)");
  if (samples.size() < 20)
    throw DataError("percentile_ci: need at least 20 samples, got " +
                    std::to_string(samples.size()));
  std::sort(samples.begin(), samples.end());
  const auto quantile = [&](double p) {
    const double h = p * (static_cast<double>(samples.size()) - 1.0);
    const std::size_t lo = static_cast<std::size_t>(h);
    const double frac = h - static_cast<double>(lo);
    if (lo + 1 >= samples.size()) return samples.back();
    return samples[lo] + frac * (samples[lo + 1] - samples[lo]);
  };
  const double tail = (1.0 - level) / 2.0;
  return {quantile(tail), quantile(1.0 - tail)};
}

double roi_trajectory(const ModelParams& theta, const VoxelGrid& grid,
                      const std::string& roi, double s) {
  if (!grid.has_rois()) throw DataError("roi_trajectory: grid has no ROI labels");
  const auto voxels = grid.roi_voxels(roi);
  if (voxels.empty()) throw DataError("roi_trajectory: unknown or empty ROI '" + roi + "'");
  double acc = 0.0;
  for (int k : voxels) acc += theta.a(k) * s + theta.b(k);
  return acc / static_cast<double>(voxels.size());
}

namespace {

HypothesisResult finish_test(std::vector<double> t_samples, const std::string& roi,
                             std::optional<double> level_s) {
  HypothesisResult res;
  res.roi = roi;
  res.level_s = level_s;
  res.n_replicates = static_cast<int>(t_samples.size());
  const double b = static_cast<double>(t_samples.size());
  long n_le = 0, n_ge = 0;
  for (double t : t_samples) {
    if (t <= 0.0) ++n_le;
    if (t >= 0.0) ++n_ge;
  }
  double p = 2.0 * std::min(n_le, n_ge) / b;
  res.clamped = p < 1.0 / b;
  res.p_value = std::min(1.0, std::max(p, 1.0 / b));
  res.t_samples = std::move(t_samples);
  return res;
}

int roi_index(const BootstrapSamples& samples, const std::string& roi) {
  for (std::size_t r = 0; r < samples.roi_names.size(); ++r)
    if (samples.roi_names[r] == roi) return static_cast<int>(r);
  throw DataError("hypothesis test: unknown ROI '" + roi + "'");
}

}  // namespace

HypothesisResult test_level(const BootstrapSamples& samples, const std::string& target_roi,
                            double s) {
  if (samples.roi_names.size() < 2)
    throw DataError("test_level: need at least 2 ROIs with labels");
  if (samples.replicates.empty()) throw DataError("test_level: no usable replicates");
  const int target = roi_index(samples, target_roi);
  std::vector<double> t;
  t.reserve(samples.replicates.size());
  for (const auto& rec : samples.replicates) {
    const double y_target = rec.roi_mean_a(target) * s + rec.roi_mean_b(target);
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < samples.roi_names.size(); ++r) {
      if (static_cast<int>(r) == target) continue;
      best = std::max(best, rec.roi_mean_a(static_cast<Eigen::Index>(r)) * s +
                                rec.roi_mean_b(static_cast<Eigen::Index>(r)));
    }
    t.push_back(y_target - best);
  }
  return finish_test(std::move(t), target_roi, s);
}

HypothesisResult test_rate(const BootstrapSamples& samples, const std::string& target_roi) {
  if (samples.roi_names.size() < 2)
    throw DataError("test_rate: need at least 2 ROIs with labels");
  if (samples.replicates.empty()) throw DataError("test_rate: no usable replicates");
  const int target = roi_index(samples, target_roi);
  std::vector<double> t;
  t.reserve(samples.replicates.size());
  for (const auto& rec : samples.replicates) {
    const double a_target = rec.roi_mean_a(target);
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < samples.roi_names.size(); ++r) {
      if (static_cast<int>(r) == target) continue;
      best = std::max(best, rec.roi_mean_a(static_cast<Eigen::Index>(r)));
    }
    t.push_back(a_target - best);
  }
  return finish_test(std::move(t), target_roi, std::nullopt);
}

}  // namespace progscore
