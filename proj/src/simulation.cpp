#include "progscore/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "progscore/rng.hpp"

namespace progscore {

VoxelGrid make_lattice_grid(const SimDesign& design) {
  VoxelGrid g;
  const int k = design.n_voxels();
  if (k < 1) throw DataError("simulate: grid dimensions must be positive");
  g.positions.resize(k, 3);
  int idx = 0;
  char buf[32];
  for (int iz = 0; iz < design.grid_dims[2]; ++iz) {
    for (int iy = 0; iy < design.grid_dims[1]; ++iy) {
      for (int ix = 0; ix < design.grid_dims[0]; ++ix) {
        std::snprintf(buf, sizeof(buf), "v%03d", idx);
        g.voxel_ids.emplace_back(buf);
        g.positions(idx, 0) = ix * design.spacing_mm;
        g.positions(idx, 1) = iy * design.spacing_mm;
        g.positions(idx, 2) = iz * design.spacing_mm;
        if (design.roi_slabs > 0) {
          const int slab = iz * design.roi_slabs / design.grid_dims[2];
          std::snprintf(buf, sizeof(buf), "roi%d", slab);
          g.roi_labels.emplace_back(buf);
        }
        ++idx;
      }
    }
  }
  return g;
}

namespace {

ModelParams draw_theta(const SimDesign& design, Rng rng) {
  if (design.theta_explicit) {
    ModelParams t = *design.theta_explicit;
    if (t.n_voxels() != design.n_voxels())
      throw DataError("simulate: explicit theta size does not match grid");
    return t;
  }
  const int k = design.n_voxels();
  ModelParams t;
  t.a.resize(k);
  t.b.resize(k);
  t.noise.lambda_diag.resize(k);
  for (int i = 0; i < k; ++i) t.a(i) = rng.next_uniform(design.ranges.a_lo, design.ranges.a_hi);
  for (int i = 0; i < k; ++i) t.b(i) = rng.next_uniform(design.ranges.b_lo, design.ranges.b_hi);
  for (int i = 0; i < k; ++i)
    t.noise.lambda_diag(i) = rng.next_uniform(design.ranges.lambda_lo, design.ranges.lambda_hi);
  t.noise.family = design.family;
  t.noise.rho = design.rho;
  t.noise.scaled = false;
  t.m = design.m;
  if (!(std::abs(design.u_corr) < 1.0))
    throw DataError("simulate: |u_corr| must be < 1");
  Mat2 v;
  const double cov = design.u_corr * design.u_sd_alpha * design.u_sd_beta;
  v << design.u_sd_alpha * design.u_sd_alpha, cov, cov, design.u_sd_beta * design.u_sd_beta;
  t.nu = nu_from_v(v);
  return t;
}

}  // namespace

std::pair<Dataset, SimTruth> simulate(const SimDesign& design) {
  if (design.n < 2) throw DataError("simulate: need n >= 2 subjects");
  if (design.max_visits < 1) throw DataError("simulate: max_visits must be >= 1");
  if (!(design.base_age_hi >= design.base_age_lo))
    throw DataError("simulate: invalid baseline age range");
  if (!(design.visit_gap_years > 0.0))
    throw DataError("simulate: visit gap must be > 0");

  const Rng root = Rng::seeded(design.seed);
  // Stream layout: 1 = per-voxel truth draws, 2 = subject schedule and
  // subject variables, 3 = observation noise.
  Dataset data;
  data.grid = make_lattice_grid(design);
  const int k = design.n_voxels();

  SimTruth truth;
  truth.theta = draw_theta(design, root.stream(1));

  const Mat2 v = truth.theta.v();
  Eigen::LLT<Mat2> vllt(v);
  const Mat2 v_chol = vllt.matrixL();

  Rng subj_rng = root.stream(2);
  truth.u.resize(design.n, 2);
  std::vector<std::vector<double>> ages(design.n);
  int total = 0;
  char buf[32];
  const int width = design.n >= 1000 ? 5 : 4;
  for (int i = 0; i < design.n; ++i) {
    const int v_i = 1 + static_cast<int>(subj_rng.next_below(
                            static_cast<std::uint64_t>(design.max_visits)));
    const double age0 = subj_rng.next_uniform(design.base_age_lo, design.base_age_hi);
    const Vec2 zdraw(subj_rng.next_normal(), subj_rng.next_normal());
    truth.u.row(i) = (truth.theta.m + v_chol * zdraw).transpose();
    ages[i].resize(v_i);
    for (int j = 0; j < v_i; ++j) ages[i][j] = age0 + j * design.visit_gap_years;

    SubjectRecord rec;
    std::snprintf(buf, sizeof(buf), "s%0*d", width, i + 1);
    rec.id = buf;
    rec.first_visit = total;
    rec.n_visits = v_i;
    data.subjects.push_back(rec);
    total += v_i;
  }

  auto corr = CorrelationFactor::build(data.grid, truth.theta.noise.family,
                                       truth.theta.noise.family == KernelFamily::Identity
                                           ? 1.0
                                           : truth.theta.noise.rho);
  const Vec lambda = truth.theta.noise.effective_diag();

  data.Y.resize(total, k);
  truth.s.resize(total);
  Rng noise_rng = root.stream(3);
  Vec zvec(k);
  int row = 0;
  for (int i = 0; i < design.n; ++i) {
    for (std::size_t j = 0; j < ages[i].size(); ++j) {
      const double age = ages[i][j];
      data.visits.push_back({i, static_cast<long>(j + 1), age});
      const double s = truth.u(i, 0) * age + truth.u(i, 1);
      truth.s(row) = s;
      for (int c = 0; c < k; ++c) zvec(c) = noise_rng.next_normal();
      Vec eps;
      if (corr->is_identity()) {
        eps = lambda.cwiseProduct(zvec);
      } else {
        eps = lambda.cwiseProduct(Vec(corr->chol_lower().triangularView<Eigen::Lower>() * zvec));
      }
      data.Y.row(row) = (truth.theta.a * s + truth.theta.b + eps).transpose();
      ++row;
    }
  }
  return {std::move(data), std::move(truth)};
}

double cosine_similarity(const Vec& truth, const Vec& estimate) {
  if (truth.size() != estimate.size())
    throw DataError("cosine_similarity: length mismatch");
  const double nt = truth.norm(), ne = estimate.norm();
  if (!(nt > 0.0) || !(ne > 0.0))
    throw DataError("cosine_similarity: zero-norm input");
  return truth.dot(estimate) / (nt * ne);
}

double percent_correct(const std::vector<std::pair<double, double>>& cis, const Vec& truth) {
  if (static_cast<Eigen::Index>(cis.size()) != truth.size())
    throw DataError("percent_correct: length mismatch");
  if (cis.empty()) throw DataError("percent_correct: empty input");
  int hits = 0;
  for (std::size_t i = 0; i < cis.size(); ++i) {
    const double t = truth(static_cast<Eigen::Index>(i));
    if (cis[i].first <= t && t <= cis[i].second) ++hits;
  }
  return 100.0 * hits / static_cast<double>(cis.size());
}

SimTruth standardized_truth(const SimTruth& truth, const Dataset& data) {
  const int n = data.n_subjects();
  Vec baseline(n);
  for (int i = 0; i < n; ++i) baseline(i) = truth.s(data.subjects[i].first_visit);
  const double mean = baseline.mean();
  const double sd = std::sqrt((baseline.array() - mean).square().sum() / n);
  if (!(sd > 0.0)) throw NumericError("standardized_truth: zero baseline score SD");
  double w = 1.0 / sd;
  double z = -w * mean;
  SimTruth out = truth;
  if ((out.theta.a / w).mean() < 0.0) {
    w = -w;
    z = -z;
  }
  out.theta.nu = nu_from_v(Mat2(w * w * truth.theta.v()));
  out.theta.b = truth.theta.b - (z / w) * truth.theta.a;
  out.theta.a = truth.theta.a / w;
  out.theta.m = w * truth.theta.m + Vec2(0.0, z);
  out.u.col(0) = w * truth.u.col(0);
  out.u.col(1) = (w * truth.u.col(1)).array() + z;
  out.s = (w * truth.s).array() + z;
  return out;
}

Dataset duplicate_biomarkers(const Dataset& data, const std::vector<std::string>& voxel_ids,
                             int copies) {
  if (copies < 0) throw DataError("duplicate_biomarkers: copies must be >= 0");
  std::vector<int> cols;
  for (const auto& id : voxel_ids) {
    auto it = std::find(data.grid.voxel_ids.begin(), data.grid.voxel_ids.end(), id);
    if (it == data.grid.voxel_ids.end())
      throw DataError("duplicate_biomarkers: unknown voxel id '" + id + "'");
    cols.push_back(static_cast<int>(it - data.grid.voxel_ids.begin()));
  }
  Dataset out = data;
  if (copies == 0 || cols.empty()) return out;

  const int k0 = data.n_voxels();
  const int extra = static_cast<int>(cols.size()) * copies;
  out.grid.positions.conservativeResize(k0 + extra, 3);
  out.Y.conservativeResize(Eigen::NoChange, k0 + extra);
  const bool rois = !data.grid.roi_labels.empty();
  int at = k0;
  for (int c : cols) {
    for (int copy = 1; copy <= copies; ++copy) {
      out.grid.voxel_ids.push_back(data.grid.voxel_ids[c] + "_dup" + std::to_string(copy));
      out.grid.positions.row(at) = data.grid.positions.row(c);
      if (rois) out.grid.roi_labels.push_back(data.grid.roi_labels[c]);
      out.Y.col(at) = data.Y.col(c);
      ++at;
    }
  }
  return out;
}

}  // namespace progscore
