// Two-sided Wiener paths, the stationary Ornstein-Uhlenbeck process driving
// the random wave system, the time shift on paths, and path integrals of z.
#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace waveim {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derive an independent stream seed from a base seed and a stream tag.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ splitmix64(0x5851f42d4c957f2dULL * (stream + 1)));
}

inline bool grid_aligned(double t, double step) {
  const double q = t / step;
  return std::abs(q - std::round(q)) <= 1e-9 * std::max(1.0, std::abs(q));
}

}  // namespace detail

// A seeded piecewise-linear Brownian sample path on a uniform grid covering
// [t_min, t_max] with 0 an interior (or boundary) grid point and omega(0) = 0.
struct WienerPath {
  std::uint64_t seed = 0;
  double step = 0.0;
  double t_min = 0.0;
  double t_max = 0.0;
  std::vector<double> values;  // values[j] = omega(t_min + j*step)

  std::size_t size() const { return values.size(); }
  double time_at(std::size_t j) const { return t_min + static_cast<double>(j) * step; }

  bool contains(double t) const {
    return t >= t_min - 1e-9 * step && t <= t_max + 1e-9 * step;
  }

  // Piecewise-linear evaluation; outside the window is an error.
  double at(double t) const {
    if (!contains(t))
      throw std::invalid_argument("WienerPath::at: t=" + std::to_string(t) +
                                  " outside sampled window [" + std::to_string(t_min) + ", " +
                                  std::to_string(t_max) + "]");
    const double q = std::min(std::max((t - t_min) / step, 0.0),
                              static_cast<double>(values.size() - 1));
    const auto j = static_cast<std::size_t>(q);
    if (j + 1 >= values.size()) return values.back();
    const double frac = q - static_cast<double>(j);
    return values[j] + frac * (values[j + 1] - values[j]);
  }

  // Index of a grid-aligned time; rejects off-grid input.
  std::size_t index_of(double t) const {
    if (!contains(t)) throw std::invalid_argument("WienerPath::index_of: t outside window");
    const double q = (t - t_min) / step;
    if (std::abs(q - std::round(q)) > 1e-6)
      throw std::invalid_argument("WienerPath::index_of: t=" + std::to_string(t) +
                                  " is not grid-aligned");
    return static_cast<std::size_t>(std::llround(q));
  }
};

// Deterministic two-sided Wiener sample, anchored at omega(0) = 0.  Forward
// (t > 0) and backward (t < 0) increments come from independent streams
// derived from the one seed.
inline WienerPath sample_wiener(std::uint64_t seed, double step, double t_min, double t_max) {
  if (!(step > 0.0)) throw std::invalid_argument("sample_wiener: step must be positive");
  if (!(t_min <= 0.0) || !(t_max >= 0.0))
    throw std::invalid_argument("sample_wiener: need t_min <= 0 <= t_max");
  if (!detail::grid_aligned(t_min, step) || !detail::grid_aligned(t_max, step))
    throw std::invalid_argument("sample_wiener: t_min and t_max must be integer multiples of step");

  const auto n_neg = static_cast<std::size_t>(std::llround(-t_min / step));
  const auto n_pos = static_cast<std::size_t>(std::llround(t_max / step));

  WienerPath path;
  path.seed = seed;
  path.step = step;
  path.t_min = -static_cast<double>(n_neg) * step;
  path.t_max = static_cast<double>(n_pos) * step;
  path.values.assign(n_neg + n_pos + 1, 0.0);

  const double sd = std::sqrt(step);
  {
    std::mt19937_64 rng(detail::derive_seed(seed, 1));
    std::normal_distribution<double> gauss(0.0, sd);
    for (std::size_t j = n_neg; j < n_neg + n_pos; ++j)
      path.values[j + 1] = path.values[j] + gauss(rng);
  }
  {
    std::mt19937_64 rng(detail::derive_seed(seed, 2));
    std::normal_distribution<double> gauss(0.0, sd);
    for (std::size_t j = n_neg; j > 0; --j)
      path.values[j - 1] = path.values[j] + gauss(rng);
  }
  return path;
}

// Wiener shift (theta_s omega)(t) = omega(t+s) - omega(s).  The grid window
// translates by -s and is re-anchored so the shifted path vanishes at 0.
inline WienerPath shift(const WienerPath& path, double s) {
  if (!detail::grid_aligned(s, path.step))
    throw std::invalid_argument("shift: s must be grid-aligned");
  const std::size_t js = path.index_of(s);
  WienerPath out;
  out.seed = path.seed;
  out.step = path.step;
  out.t_min = path.t_min - s;
  out.t_max = path.t_max - s;
  out.values.resize(path.values.size());
  const double anchor = path.values[js];
  for (std::size_t j = 0; j < path.values.size(); ++j) out.values[j] = path.values[j] - anchor;
  // re-snap the translated endpoints onto exact multiples of step
  const auto n_neg = static_cast<std::size_t>(std::llround(-out.t_min / out.step));
  out.t_min = -static_cast<double>(n_neg) * out.step;
  out.t_max = out.t_min + static_cast<double>(out.values.size() - 1) * out.step;
  return out;
}

struct OUParams {
  double lambda = 1.0;  // decay rate, > 0
  double delta = 1.0;   // noise intensity, >= 0

  void validate() const {
    if (!(lambda > 0.0)) throw std::invalid_argument("OUParams: lambda must be positive");
    if (!(delta >= 0.0)) throw std::invalid_argument("OUParams: delta must be nonnegative");
  }
};

enum class OUMethod { recursion, formula };

// A realization of the stationary OU process z(theta_t omega) on (a subwindow
// of) the grid of its base Wiener path.
struct OUPath {
  OUParams params;
  OUMethod method = OUMethod::formula;
  double step = 0.0;
  double t_min = 0.0;
  double t_max = 0.0;
  std::vector<double> values;

  double time_at(std::size_t j) const { return t_min + static_cast<double>(j) * step; }

  bool contains(double t) const {
    return t >= t_min - 1e-9 * step && t <= t_max + 1e-9 * step;
  }

  double at(double t) const {
    if (!contains(t))
      throw std::invalid_argument("OUPath::at: t=" + std::to_string(t) + " outside window [" +
                                  std::to_string(t_min) + ", " + std::to_string(t_max) + "]");
    const double q = std::min(std::max((t - t_min) / step, 0.0),
                              static_cast<double>(values.size() - 1));
    const auto j = static_cast<std::size_t>(q);
    if (j + 1 >= values.size()) return values.back();
    const double frac = q - static_cast<double>(j);
    return values[j] + frac * (values[j + 1] - values[j]);
  }

  // z(theta_t theta_s omega) = z(theta_{t+s} omega): the shift reindexes the
  // stored values without recomputation, so flows over a shifted path consume
  // exactly the same numbers.
  OUPath shifted(double s) const {
    if (!detail::grid_aligned(s, step))
      throw std::invalid_argument("OUPath::shifted: s must be grid-aligned");
    OUPath out = *this;
    out.t_min = t_min - s;
    out.t_max = t_max - s;
    const double n_lo = std::round(out.t_min / step);
    out.t_min = n_lo * step;
    out.t_max = out.t_min + static_cast<double>(values.size() - 1) * step;
    return out;
  }
};

// Stationary OU realization on the base path.
//
// formula:   z(theta_t omega) = -lambda delta Int_{-inf}^0 e^{lambda tau} omega(tau+t) dtau
//            + delta omega(t), tail cut where e^{lambda tau} <= tail_tol,
//            trapezoid quadrature on the path grid.
// recursion: exact AR(1) for the piecewise-linear path,
//            z_{j+1} = a z_j + delta dW_j (1-a)/(lambda step), a = e^{-lambda step},
//            started from a stationary N(0, delta^2/(2 lambda)) draw at the
//            left end of the window (derived seed).
inline OUPath stationary_z(const WienerPath& path, const OUParams& params, OUMethod method,
                           double tail_tol = 1e-8) {
  params.validate();
  if (!(tail_tol > 0.0 && tail_tol < 1.0))
    throw std::invalid_argument("stationary_z: tail_tol must lie in (0,1)");

  OUPath z;
  z.params = params;
  z.method = method;
  z.step = path.step;

  if (method == OUMethod::recursion) {
    z.t_min = path.t_min;
    z.t_max = path.t_max;
    z.values.resize(path.values.size());
    const double a = std::exp(-params.lambda * path.step);
    const double gain = params.delta * (1.0 - a) / (params.lambda * path.step);
    double z0 = 0.0;
    if (params.delta > 0.0) {
      std::mt19937_64 rng(detail::derive_seed(path.seed, 3));
      std::normal_distribution<double> gauss(0.0, params.delta / std::sqrt(2.0 * params.lambda));
      z0 = gauss(rng);
    }
    z.values[0] = z0;
    for (std::size_t j = 0; j + 1 < path.values.size(); ++j)
      z.values[j + 1] = a * z.values[j] + gain * (path.values[j + 1] - path.values[j]);
    return z;
  }

  // formula method
  const double tail_len = std::log(1.0 / tail_tol) / params.lambda;
  const auto n_tail = static_cast<std::size_t>(std::ceil(tail_len / path.step - 1e-9));
  if (static_cast<double>(n_tail) * path.step > path.t_max - path.t_min) {
    std::ostringstream msg;
    msg << "stationary_z: window too short for tail_tol=" << tail_tol
        << "; need t_min <= " << (path.t_max - static_cast<double>(n_tail) * path.step)
        << " (tail length " << static_cast<double>(n_tail) * path.step << ")";
    throw std::invalid_argument(msg.str());
  }
  const std::size_t j_lo = n_tail;  // first index with a full tail to its left
  z.t_min = path.time_at(j_lo);
  z.t_max = path.t_max;
  z.values.resize(path.values.size() - j_lo);

  if (params.delta == 0.0) {
    for (auto& v : z.values) v = 0.0;
    return z;
  }

  // Trapezoid accumulation of I(t) = Int_{-tail}^{0} e^{lambda tau} omega(tau+t) dtau,
  // sliding in t across the grid: recompute per target index (O(n_tail) each).
  const double h = path.step;
  for (std::size_t jt = j_lo; jt < path.values.size(); ++jt) {
    double acc = 0.0;
    // tau_i = -(n_tail - i) * h, i = 0..n_tail
    for (std::size_t i = 0; i <= n_tail; ++i) {
      const double tau = -static_cast<double>(n_tail - i) * h;
      const double w = (i == 0 || i == n_tail) ? 0.5 : 1.0;
      acc += w * std::exp(params.lambda * tau) * path.values[jt - (n_tail - i)];
    }
    acc *= h;
    z.values[jt - j_lo] = -params.lambda * params.delta * acc + params.delta * path.values[jt];
  }
  return z;
}

// Trapezoidal Int_s^t z(theta_r omega) dr on the piecewise-linear z;
// antisymmetric in (s, t) and exactly additive over adjacent intervals.
inline double integral_of_z(const OUPath& z, double s, double t) {
  if (!z.contains(s) || !z.contains(t))
    throw std::invalid_argument("integral_of_z: limits outside window");
  if (s == t) return 0.0;
  if (s > t) return -integral_of_z(z, t, s);

  const auto idx_above = [&](double x) {
    return static_cast<std::size_t>(std::ceil((x - z.t_min) / z.step - 1e-9));
  };
  const auto idx_below = [&](double x) {
    return static_cast<std::size_t>(std::floor((x - z.t_min) / z.step + 1e-9));
  };
  std::size_t ja = std::min(idx_above(s), z.values.size() - 1);
  std::size_t jb = std::min(idx_below(t), z.values.size() - 1);
  double ta = z.time_at(ja);
  double tb = z.time_at(jb);

  double acc = 0.0;
  if (ja >= jb) {  // both ends inside one grid cell (or shared grid point)
    return 0.5 * (z.at(s) + z.at(t)) * (t - s);
  }
  if (ta > s) acc += 0.5 * (z.at(s) + z.values[ja]) * (ta - s);
  for (std::size_t j = ja; j < jb; ++j)
    acc += 0.5 * (z.values[j] + z.values[j + 1]) * z.step;
  if (t > tb) acc += 0.5 * (z.values[jb] + z.at(t)) * (t - tb);
  return acc;
}

struct ErgodicRow {
  double horizon = 0.0;
  double mean_z = 0.0;        // (1/t) Int_0^t z
  double mean_abs_z = 0.0;    // (1/t) Int_0^t |z|
  double growth_ratio = 0.0;  // max_{0<=tau<=t} |z(theta_tau omega)| / (1 + tau)
};

struct ErgodicReport {
  std::vector<ErgodicRow> rows;
};

inline ErgodicReport ergodic_stats(const OUPath& z, const std::vector<double>& horizons) {
  ErgodicReport report;
  for (double t : horizons) {
    if (!z.contains(t) || !z.contains(0.0))
      throw std::invalid_argument("ergodic_stats: horizon outside window");
    ErgodicRow row;
    row.horizon = t;
    row.mean_z = integral_of_z(z, 0.0, t) / t;
    // |z| is piecewise linear except at sign changes; plain trapezoid on the
    // grid keeps the same O(step^2) accuracy class.
    double acc = 0.0;
    double ratio = 0.0;
    const std::size_t j0 = static_cast<std::size_t>(std::llround((0.0 - z.t_min) / z.step));
    const std::size_t j1 = static_cast<std::size_t>(std::llround((t - z.t_min) / z.step));
    for (std::size_t j = j0; j <= j1; ++j) {
      const double w = (j == j0 || j == j1) ? 0.5 : 1.0;
      acc += w * std::abs(z.values[j]);
      const double tau = z.time_at(j);
      ratio = std::max(ratio, std::abs(z.values[j]) / (1.0 + tau));
    }
    row.mean_abs_z = acc * z.step / t;
    row.growth_ratio = ratio;
    report.rows.push_back(row);
  }
  return report;
}

// CSV export: columns t, omega, z with a mandatory header, 17 significant digits.
inline void write_paths_csv(const WienerPath& path, const OUPath& z, const std::string& filename) {
  std::ofstream out(filename);
  if (!out) throw std::runtime_error("write_paths_csv: cannot open " + filename);
  out << "t,omega,z\n";
  out.precision(17);
  for (std::size_t j = 0; j < z.values.size(); ++j) {
    const double t = z.time_at(j);
    out << t << ',' << path.at(t) << ',' << z.values[j] << '\n';
  }
}

}  // namespace waveim
