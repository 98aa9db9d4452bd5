#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "tnet/error.hpp"

namespace tnet {

// Gaussian-likelihood BIC up to constants. n is a real count so callers
// can evaluate the closed form at non-integer n.
inline double bic(double rss, double n, double k) {
  if (!(n > k && k >= 1.0))
    fail(ErrorCategory::argument, "bic needs n > k >= 1");
  if (rss < 0.0)
    fail(ErrorCategory::argument, "bic needs rss >= 0");
  if (rss == 0.0)
    fail(ErrorCategory::preprocessing, "bic: degenerate fit with rss = 0");
  return n * std::log(rss / n) + k * std::log(n);
}

struct SplineConfig {
  double min_spacing = 0.5;  // days
  double max_spacing = 20.0;
  int n_spacings = 20;
  double clip_sigma = 3.0;
  int clip_rounds = 3;
};

// Uniform cubic B-spline over [t_lo, t_lo + spans*dt] with phantom end
// knots, so there are spans + 3 coefficients.
struct CubicBSpline {
  double t_lo = 0.0;
  double dt = 1.0;
  int spans = 1;
  std::vector<double> coef;

  // Returns the first active coefficient index and fills the four basis
  // weights at t.
  int basis(double t, double b[4]) const {
    double u = (t - t_lo) / dt;
    int i = int(std::floor(u));
    if (i < 0) i = 0;
    if (i > spans - 1) i = spans - 1;
    double x = u - i;
    double x2 = x * x, x3 = x2 * x;
    b[0] = (1.0 - x) * (1.0 - x) * (1.0 - x) / 6.0;
    b[1] = (3.0 * x3 - 6.0 * x2 + 4.0) / 6.0;
    b[2] = (-3.0 * x3 + 3.0 * x2 + 3.0 * x + 1.0) / 6.0;
    b[3] = x3 / 6.0;
    return i;
  }

  double eval(double t) const {
    double b[4];
    int i = basis(t, b);
    return b[0] * coef[i] + b[1] * coef[i + 1] + b[2] * coef[i + 2] + b[3] * coef[i + 3];
  }
};

struct TrendFit {
  std::vector<double> trend;  // fitted value at every input time
  double spacing = 0.0;       // knot spacing actually used (grid value)
  int n_coef = 0;
  double bic_value = 0.0;
  double rss = 0.0;
  int n_used = 0;  // surviving points in the winning fit
};

namespace detail {

struct BandSystem {
  // Lower band of the normal matrix: band[j][k] = A[j][j-k], k = 0..3.
  std::vector<double> band;
  std::vector<double> rhs;
  int n = 0;

  explicit BandSystem(int n_in) : band(std::size_t(n_in) * 4, 0.0), rhs(n_in, 0.0), n(n_in) {}

  double& at(int j, int k) { return band[std::size_t(j) * 4 + k]; }
  double at(int j, int k) const { return band[std::size_t(j) * 4 + k]; }

  // In-place banded Cholesky followed by the two triangular solves.
  // Returns false when the system is numerically singular.
  bool solve(std::vector<double>& out) {
    double scale = 0.0;
    for (int j = 0; j < n; ++j) scale = std::max(scale, at(j, 0));
    if (scale <= 0.0) return false;
    double tol = scale * 1e-12;
    for (int j = 0; j < n; ++j) {
      for (int k = std::max(0, j - 3); k <= j; ++k) {
        double sum = at(j, j - k);
        for (int p = std::max(0, j - 3); p < k; ++p) sum -= at(j, j - p) * at(k, k - p);
        if (k == j) {
          if (sum <= tol) return false;
          at(j, 0) = std::sqrt(sum);
        } else {
          at(j, j - k) = sum / at(k, 0);
        }
      }
    }
    out.assign(n, 0.0);
    for (int j = 0; j < n; ++j) {
      double sum = rhs[j];
      for (int p = std::max(0, j - 3); p < j; ++p) sum -= at(j, j - p) * out[p];
      out[j] = sum / at(j, 0);
    }
    for (int j = n - 1; j >= 0; --j) {
      double sum = out[j];
      for (int p = j + 1; p <= std::min(n - 1, j + 3); ++p) sum -= at(p, p - j) * out[p];
      out[j] = sum / at(j, 0);
    }
    return true;
  }
};

struct FitState {
  CubicBSpline spline;
  double rss = 0.0;
  int n_active = 0;
  bool ok = false;
};

inline FitState fit_once(const std::vector<double>& time, const std::vector<double>& flux,
                         const std::vector<char>& active, double t_lo, double dt, int spans) {
  FitState st;
  int n_coef = spans + 3;
  BandSystem sys(n_coef);
  CubicBSpline shape{t_lo, dt, spans, {}};
  double b[4];
  for (std::size_t j = 0; j < time.size(); ++j) {
    if (!active[j]) continue;
    ++st.n_active;
    int i = shape.basis(time[j], b);
    for (int a = 0; a < 4; ++a) {
      sys.rhs[i + a] += b[a] * flux[j];
      for (int c = 0; c <= a; ++c) sys.at(i + a, a - c) += b[a] * b[c];
    }
  }
  if (st.n_active < n_coef) return st;
  std::vector<double> coef;
  if (!sys.solve(coef)) return st;
  st.spline = CubicBSpline{t_lo, dt, spans, std::move(coef)};
  st.rss = 0.0;
  for (std::size_t j = 0; j < time.size(); ++j) {
    if (!active[j]) continue;
    double r = flux[j] - st.spline.eval(time[j]);
    st.rss += r * r;
  }
  st.ok = true;
  return st;
}

}  // namespace detail

// Least-squares B-spline trend with BIC selection over a geometric grid
// of knot spacings and iterative sigma clipping. Points with exclude set
// never participate in the fit; grid spacings whose normal equations are
// singular (for example across long masked gaps) are skipped.
inline TrendFit fit_trend(const std::vector<double>& time, const std::vector<double>& flux,
                          const std::vector<char>& exclude, const SplineConfig& cfg = {}) {
  if (time.size() != flux.size() || time.size() != exclude.size())
    fail(ErrorCategory::dimension, "fit_trend needs equal-length time/flux/exclude");
  if (!(cfg.min_spacing > 0.0 && cfg.max_spacing >= cfg.min_spacing && cfg.n_spacings >= 1))
    fail(ErrorCategory::argument, "bad spline spacing grid");
  double t_lo = time.front();
  double span_t = time.back() - t_lo;
  if (!(span_t > 0.0))
    fail(ErrorCategory::argument, "fit_trend needs an increasing time axis");

  bool have_best = false;
  TrendFit best;
  detail::FitState best_state;
  for (int g = 0; g < cfg.n_spacings; ++g) {
    double frac = cfg.n_spacings == 1 ? 0.0 : double(g) / (cfg.n_spacings - 1);
    double spacing = cfg.min_spacing * std::pow(cfg.max_spacing / cfg.min_spacing, frac);
    int spans = std::max(1, int(std::ceil(span_t / spacing)));
    double dt = span_t / spans;
    std::vector<char> active(time.size());
    for (std::size_t j = 0; j < time.size(); ++j) active[j] = !exclude[j];

    detail::FitState st = detail::fit_once(time, flux, active, t_lo, dt, spans);
    if (!st.ok) continue;
    for (int round = 0; round < cfg.clip_rounds; ++round) {
      double sigma = std::sqrt(st.rss / st.n_active);
      if (!(sigma > 0.0)) break;
      int kept = 0;
      std::vector<char> next = active;
      for (std::size_t j = 0; j < time.size(); ++j) {
        if (!active[j]) continue;
        double r = flux[j] - st.spline.eval(time[j]);
        if (std::abs(r) > cfg.clip_sigma * sigma)
          next[j] = 0;
        else
          ++kept;
      }
      if (kept == st.n_active || kept < spans + 3) break;
      detail::FitState refit = detail::fit_once(time, flux, next, t_lo, dt, spans);
      if (!refit.ok) break;
      active = std::move(next);
      st = std::move(refit);
    }
    int n_coef = spans + 3;
    if (st.n_active <= n_coef) continue;
    double rss_for_bic = std::max(st.rss, 1e-30);  // perturb exact fits, see bic()
    double score = bic(rss_for_bic, double(st.n_active), double(n_coef));
    if (!have_best || score < best.bic_value) {
      have_best = true;
      best.spacing = spacing;
      best.n_coef = n_coef;
      best.bic_value = score;
      best.rss = st.rss;
      best.n_used = st.n_active;
      best_state = std::move(st);
    }
  }
  if (!have_best)
    fail(ErrorCategory::preprocessing, "spline trend fit failed: no feasible knot spacing");
  best.trend.resize(time.size());
  for (std::size_t j = 0; j < time.size(); ++j) best.trend[j] = best_state.spline.eval(time[j]);
  return best;
}

}  // namespace tnet
