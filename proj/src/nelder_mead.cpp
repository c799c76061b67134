#include "progscore/nelder_mead.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace progscore {

NelderMeadResult nelder_mead_minimize(const std::function<double(const Vec&)>& f, Vec x0,
                                      const NelderMeadOptions& opt) {
  const int n = static_cast<int>(x0.size());
  const double alpha = 1.0, gamma = 2.0, beta = 0.5, delta = 0.5;

  std::vector<Vec> xs;
  std::vector<double> fs;
  int evals = 0;
  auto eval = [&](const Vec& x) {
    ++evals;
    const double v = f(x);
    return std::isnan(v) ? std::numeric_limits<double>::infinity() : v;
  };

  xs.push_back(x0);
  fs.push_back(eval(x0));
  for (int i = 0; i < n && evals < opt.max_evals; ++i) {
    Vec xi = x0;
    xi(i) += opt.initial_step;
    xs.push_back(xi);
    fs.push_back(eval(xi));
  }

  auto order = [&] {
    std::vector<int> idx(xs.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) { return fs[a] < fs[b]; });
    std::vector<Vec> xs2;
    std::vector<double> fs2;
    for (int i : idx) {
      xs2.push_back(xs[i]);
      fs2.push_back(fs[i]);
    }
    xs = std::move(xs2);
    fs = std::move(fs2);
  };

  // Track the best point seen, including mid-iteration candidates.
  Vec best_x = xs[0];
  double best_f = fs[0];
  auto note = [&](const Vec& x, double v) {
    if (v < best_f) {
      best_f = v;
      best_x = x;
    }
  };

  order();
  for (std::size_t i = 0; i < xs.size(); ++i) note(xs[i], fs[i]);

  while (evals < opt.max_evals && xs.size() == static_cast<std::size_t>(n) + 1) {
    order();
    double diam = 0.0;
    for (std::size_t i = 1; i < xs.size(); ++i)
      diam = std::max(diam, (xs[i] - xs[0]).cwiseAbs().maxCoeff());
    if (diam < opt.xtol) break;
    if (opt.ftol > 0.0 && std::isfinite(fs.back()) && fs.back() - fs.front() < opt.ftol) break;

    Vec centroid = Vec::Zero(n);
    for (int i = 0; i < n; ++i) centroid += xs[i];
    centroid /= n;

    const Vec& worst = xs[n];
    Vec xr = centroid + alpha * (centroid - worst);
    const double fr = eval(xr);
    note(xr, fr);

    if (fr < fs[0]) {
      if (evals < opt.max_evals) {
        Vec xe = centroid + gamma * (xr - centroid);
        const double fe = eval(xe);
        note(xe, fe);
        if (fe < fr) {
          xs[n] = xe;
          fs[n] = fe;
        } else {
          xs[n] = xr;
          fs[n] = fr;
        }
      } else {
        xs[n] = xr;
        fs[n] = fr;
      }
    } else if (fr < fs[n - 1]) {
      xs[n] = xr;
      fs[n] = fr;
    } else {
      const bool outside = fr < fs[n];
      Vec xc = outside ? Vec(centroid + beta * (xr - centroid))
                       : Vec(centroid + beta * (worst - centroid));
      if (evals >= opt.max_evals) break;
      const double fc = eval(xc);
      note(xc, fc);
      if (fc < std::min(fr, fs[n])) {
        xs[n] = xc;
        fs[n] = fc;
      } else {
        // Shrink toward the best vertex.
        for (int i = 1; i <= n && evals < opt.max_evals; ++i) {
          xs[i] = xs[0] + delta * (xs[i] - xs[0]);
          fs[i] = eval(xs[i]);
          note(xs[i], fs[i]);
        }
      }
    }
  }

  NelderMeadResult res;
  res.x = best_x;
  res.f = best_f;
  res.evals = evals;
  return res;
}

}  // namespace progscore
