#include "progscore/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "progscore/rng.hpp"

namespace progscore {

Mat standardized_residuals(const Dataset& data, const ModelParams& theta,
                           const std::vector<SubjectPosterior>& posteriors) {
  const Vec inv_lambda = theta.noise.effective_diag().cwiseInverse();
  Mat r(data.total_visits(), data.n_voxels());
  for (int i = 0; i < data.n_subjects(); ++i) {
    const auto& subj = data.subjects[i];
    for (int j = 0; j < subj.n_visits; ++j) {
      const int row = subj.first_visit + j;
      r.row(row) = (data.Y.row(row).transpose() - theta.a * posteriors[i].s(j) - theta.b)
                       .cwiseProduct(inv_lambda)
                       .transpose();
    }
  }
  return r;
}

Semivariogram empirical_semivariogram(const Mat& residuals, const VoxelGrid& grid,
                                      int n_bins, double max_distance_mm,
                                      long max_pairs_per_visit, std::uint64_t seed) {
  if (n_bins < 1) throw DataError("empirical_semivariogram: n_bins must be >= 1");
  if (!(max_distance_mm > 0.0))
    throw DataError("empirical_semivariogram: max_distance_mm must be > 0");
  const int k = grid.n_voxels();
  if (residuals.cols() != k)
    throw DataError("empirical_semivariogram: residual columns do not match grid");

  const double width = max_distance_mm / n_bins;
  Semivariogram sv;
  sv.max_distance_mm = max_distance_mm;
  sv.bin_centers.resize(n_bins);
  for (int h = 0; h < n_bins; ++h) sv.bin_centers(h) = (h + 0.5) * width;
  Vec acc = Vec::Zero(n_bins);
  sv.counts.assign(n_bins, 0);

  auto bin_of = [&](double d) -> int {
    if (d > max_distance_mm) return -1;
    int h = static_cast<int>(d / width);
    return std::min(h, n_bins - 1);
  };

  const long n_pairs = static_cast<long>(k) * (k - 1) / 2;
  const int n_visits = static_cast<int>(residuals.rows());

  if (n_pairs <= max_pairs_per_visit) {
    struct Pair {
      int a, b, bin;
    };
    std::vector<Pair> pairs;
    pairs.reserve(static_cast<std::size_t>(n_pairs));
    for (int i = 0; i < k; ++i)
      for (int j = i + 1; j < k; ++j) {
        const int h = bin_of(grid.distance(i, j));
        if (h >= 0) pairs.push_back({i, j, h});
      }
    for (int v = 0; v < n_visits; ++v) {
      const auto row = residuals.row(v);
      for (const auto& p : pairs) {
        const double diff = row(p.a) - row(p.b);
        acc(p.bin) += diff * diff;
        ++sv.counts[p.bin];
      }
    }
  } else {
    // Large grid: per visit, sample pairs uniformly; the per-bin estimator
    // stays unbiased and the bin occupancy mirrors the pair population.
    Rng root = Rng::seeded(seed);
    for (int v = 0; v < n_visits; ++v) {
      Rng rng = root.stream(static_cast<std::uint64_t>(v));
      const auto row = residuals.row(v);
      for (long t = 0; t < max_pairs_per_visit; ++t) {
        const int i = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(k)));
        int j = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(k - 1)));
        if (j >= i) ++j;
        const int h = bin_of(grid.distance(i, j));
        if (h < 0) continue;
        const double diff = row(i) - row(j);
        acc(h) += diff * diff;
        ++sv.counts[h];
      }
    }
  }

  sv.gamma_hat.resize(n_bins);
  for (int h = 0; h < n_bins; ++h) {
    sv.gamma_hat(h) = sv.counts[h] > 0 ? acc(h) / (2.0 * sv.counts[h])
                                       : std::numeric_limits<double>::quiet_NaN();
  }
  return sv;
}

namespace {

struct SseAtRho {
  double sse;
  double sill;
};

SseAtRho sse_for_rho(const Semivariogram& sv, KernelFamily family, double rho) {
  double num = 0.0, den = 0.0;
  for (int h = 0; h < sv.bin_centers.size(); ++h) {
    if (sv.counts[h] == 0) continue;
    const double g = 1.0 - correlation(family, sv.bin_centers(h), rho);
    num += sv.gamma_hat(h) * g;
    den += g * g;
  }
  const double sill = den > 0.0 ? std::max(num / den, 0.0) : 0.0;
  double sse = 0.0;
  for (int h = 0; h < sv.bin_centers.size(); ++h) {
    if (sv.counts[h] == 0) continue;
    const double g = 1.0 - correlation(family, sv.bin_centers(h), rho);
    const double r = sv.gamma_hat(h) - sill * g;
    sse += r * r;
  }
  return {sse, sill};
}

}  // namespace

std::vector<SemivariogramFit> fit_semivariogram(const Semivariogram& sv,
                                                const std::vector<KernelFamily>& families) {
  int nonempty = 0;
  double min_center = 0.0, max_center = 0.0;
  for (int h = 0; h < sv.bin_centers.size(); ++h) {
    if (sv.counts[h] == 0) continue;
    if (nonempty == 0) min_center = sv.bin_centers(h);
    max_center = sv.bin_centers(h);
    ++nonempty;
  }
  if (nonempty < 5)
    throw DataError("fit_semivariogram: need at least 5 nonempty bins, got " +
                    std::to_string(nonempty));

  const double lo = std::log(0.1 * min_center);
  const double hi = std::log(10.0 * max_center);

  std::vector<SemivariogramFit> fits;
  for (KernelFamily family : families) {
    if (family == KernelFamily::Identity) continue;
    // Coarse log-spaced scan, then golden-section refinement.
    const int grid_n = 80;
    double best_rho = std::exp(lo), best_sse = std::numeric_limits<double>::infinity();
    for (int g = 0; g < grid_n; ++g) {
      const double rho = std::exp(lo + (hi - lo) * g / (grid_n - 1));
      const double sse = sse_for_rho(sv, family, rho).sse;
      if (sse < best_sse) {
        best_sse = sse;
        best_rho = rho;
      }
    }
    const double step = (hi - lo) / (grid_n - 1);
    double a = std::log(best_rho) - step, b = std::log(best_rho) + step;
    a = std::max(a, lo);
    b = std::min(b, hi);
    const double invphi = 0.6180339887498949;
    double x1 = b - invphi * (b - a), x2 = a + invphi * (b - a);
    double f1 = sse_for_rho(sv, family, std::exp(x1)).sse;
    double f2 = sse_for_rho(sv, family, std::exp(x2)).sse;
    for (int it = 0; it < 60 && (b - a) > 1e-10; ++it) {
      if (f1 < f2) {
        b = x2;
        x2 = x1;
        f2 = f1;
        x1 = b - invphi * (b - a);
        f1 = sse_for_rho(sv, family, std::exp(x1)).sse;
      } else {
        a = x1;
        x1 = x2;
        f1 = f2;
        x2 = a + invphi * (b - a);
        f2 = sse_for_rho(sv, family, std::exp(x2)).sse;
      }
    }
    const double rho = std::exp(0.5 * (a + b));
    const SseAtRho final = sse_for_rho(sv, family, rho);
    SemivariogramFit fit;
    fit.family = family;
    fit.rho = final.sse <= best_sse ? rho : best_rho;
    const SseAtRho chosen = sse_for_rho(sv, family, fit.rho);
    fit.sill = chosen.sill;
    fit.sse = chosen.sse;
    fits.push_back(fit);
  }
  std::sort(fits.begin(), fits.end(),
            [](const SemivariogramFit& x, const SemivariogramFit& y) { return x.sse < y.sse; });
  return fits;
}

BlandAltman bland_altman(const Vec& ps_a, const Vec& ps_b) {
  if (ps_a.size() != ps_b.size())
    throw DataError("bland_altman: score vectors have different lengths");
  if (ps_a.size() == 0) throw DataError("bland_altman: empty score vectors");
  BlandAltman out;
  const Eigen::Index n = ps_a.size();
  out.points.reserve(n);
  Vec diff = ps_a - ps_b;
  for (Eigen::Index i = 0; i < n; ++i)
    out.points.emplace_back(0.5 * (ps_a(i) + ps_b(i)), diff(i));
  out.mean_diff = diff.mean();
  double sd = 0.0;
  if (n > 1) sd = std::sqrt((diff.array() - out.mean_diff).square().sum() / (n - 1));
  out.limit_lo = out.mean_diff - 1.96 * sd;
  out.limit_hi = out.mean_diff + 1.96 * sd;
  return out;
}

}  // namespace progscore
