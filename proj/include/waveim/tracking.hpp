// Asymptotic completeness: the forward fixed point that projects an arbitrary
// initial state onto a manifold orbit tracking it at rate eta.
#pragma once

#include <waveim/manifold.hpp>

#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace waveim {

// Weight e^{-eta t - int_0^t z} on a uniform grid.  The z-integrals are the
// same ones the integrator's kernels consume; for the wave system the
// multiplicative exponent is identically zero.
struct EtaWeightedNorm {
  double eta = 0.0;
  double t0 = 0.0;
  double step = 0.0;
  std::vector<double> z_integrals;

  static EtaWeightedNorm make(double eta, double t0, double step, std::size_t n_nodes,
                              const OUPath& z, EvolutionMode mode) {
    EtaWeightedNorm out;
    out.eta = eta;
    out.t0 = t0;
    out.step = step;
    out.z_integrals.assign(n_nodes, 0.0);
    if (mode == EvolutionMode::abstract_multiplicative)
      for (std::size_t i = 0; i < n_nodes; ++i)
        out.z_integrals[i] = integral_of_z(z, t0, t0 + static_cast<double>(i) * step);
    return out;
  }

  double weight(std::size_t i) const {
    const double t = t0 + static_cast<double>(i) * step;
    const double w = std::exp(-eta * t - z_integrals[i]);
    if (!std::isfinite(w) || w <= 0.0)
      throw std::runtime_error("EtaWeightedNorm: weight not positive-finite at node " +
                               std::to_string(i));
    return w;
  }

  double sup(const std::vector<StateE>& a, const std::vector<StateE>& b,
             const WaveSpec& spec) const {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
      worst = std::max(worst, norm_E((a[i] - b[i]) * weight(i), spec));
    return worst;
  }
};

struct TrackingParams {
  LPParams lp;          // backward solver settings for the h evaluations
  double T_f = 0.0;     // <= 0 selects ln(1/tol)/(alpha-eta)
  double step = 1e-3;
  double tol = 1e-8;
  int max_iter = 200;

  double horizon(const GapReport& gap) const {
    double T = T_f;
    if (T <= 0.0) T = std::log(1.0 / tol) / (gap.alpha - gap.eta);
    return std::ceil(T / step - 1e-9) * step;
  }
};

struct TrackingResult {
  StateE x;
  StateE x_bar;
  Trajectory w_trajectory;  // on [0, T_f]
  double fitted_rate = std::numeric_limits<double>::quiet_NaN();
  double c1_estimate = std::numeric_limits<double>::quiet_NaN();
  double residual = 0.0;           // last weighted sup change of the iteration
  double contraction_observed = 0.0;
  bool coincident = false;         // set by measure_rate when below the floor
};

// Forward fixed point w -> T~w + Tw on [0, T_f]:
//   T~w(t) = e^{At} Q w(0),  Q w(0) = -Q u(0) + h(P u(0) + P w(0), omega),
//   Tw(t)  = int_0^t e^{A(t-s)} Q Ftilde ds + int_{T_f}^t e^{A(t-s)} P Ftilde ds,
// with Ftilde(s) = F(theta_s omega, u(s) + w(s)) - F(theta_s omega, u(s)) and
// the u-orbit computed once and frozen.  Returns x_bar = x + w*(0).
inline TrackingResult solve_tracking_point(const StateE& x, const OUPath& z,
                                           const WaveSpec& spec, const TrackingParams& params) {
  spec.validate();
  const GapReport gap = check_gap(spec);
  if (!gap.pass_gap1)
    throw std::runtime_error("solve_tracking_point: gap1 condition fails (lhs_gap1=" +
                             std::to_string(gap.lhs_gap1) + "), no completeness certificate");
  const double dt = params.step;
  const double T = params.horizon(gap);
  const auto n = static_cast<std::size_t>(std::llround(T / dt));

  const Trajectory u_orbit = integrate(x, z, 0.0, T, dt, spec);
  const double e2f = spec.epsilon * spec.epsilon;
  // Ftilde(s, w) = F(theta_s omega, u(s) + w) - F(theta_s omega, u(s)): the
  // noise term cancels, the nonlinear increment is computed without the
  // cancellation a naive difference would hit once ||w|| << ||u||
  const auto f_tilde = [&](const StateE& u, const StateE& w) {
    StateE out(spec.M);
    if (spec.f.kind != NonlinearityKind::zero)
      out.v = collocation_f_diff(u.u, w.u, spec.f, spec.G) / e2f;
    return out;
  };

  const EigenData eig = eigen_data(spec);
  const double e2 = spec.epsilon * spec.epsilon;
  std::vector<detail::ModeKernel> kernel;
  for (int k = 1; k <= spec.M; ++k) kernel.push_back(detail::ModeKernel::make(eig.mode(k), dt));
  std::vector<double> ep_fwd(spec.N), em_fwd(spec.N), wp(spec.N), wm(spec.N);
  for (int k = 1; k <= spec.N; ++k) {
    const ModeEigen& m = eig.mode(k);
    ep_fwd[k - 1] = std::exp(m.lam_p * dt);
    em_fwd[k - 1] = std::exp(m.lam_m * dt);
    wp[k - 1] = (ep_fwd[k - 1] - 1.0) / m.lam_p;
    wm[k - 1] = (em_fwd[k - 1] - 1.0) / m.lam_m;
  }
  const EtaWeightedNorm weight =
      EtaWeightedNorm::make(gap.eta, 0.0, dt, n + 1, z, EvolutionMode::wave_additive);

  // h cache keyed on P-coordinates rounded to 1e-10
  std::map<std::vector<long long>, StateE> h_cache;
  const auto h_at = [&](const Eigen::VectorXd& xi) -> const StateE& {
    std::vector<long long> key(spec.N);
    for (int k = 0; k < spec.N; ++k) key[k] = std::llround(xi[k] * 1e10);
    auto it = h_cache.find(key);
    if (it == h_cache.end()) it = h_cache.emplace(key, evaluate_h(xi, z, spec, params.lp)).first;
    return it->second;
  };

  const Eigen::VectorXd pu0 = p_coords(x, spec);
  const StateE qu0 = project_Q(x, spec);

  std::vector<StateE> cur(n + 1, StateE(spec.M)), next(n + 1, StateE(spec.M));
  std::vector<StateE> Ft(n);
  double prev_diff = -1.0, ratio = 0.0, worst_ratio = 0.0, diff = 0.0;
  for (int iter = 0; iter < params.max_iter; ++iter) {
    for (std::size_t i = 0; i < n; ++i) Ft[i] = f_tilde(u_orbit.states[i], cur[i]);

    // P part: backward from p(T_f) = 0
    for (int k = 1; k <= spec.N; ++k) {
      const ModeEigen& m = eig.mode(k);
      double p = 0.0;
      next[n].u[k - 1] = 0.0;
      next[n].v[k - 1] = 0.0;
      for (std::size_t i = n; i-- > 0;) {
        const double pf = eigen_coords(Ft[i].u[k - 1], Ft[i].v[k - 1], m).first;
        p = (p - wp[k - 1] * pf) / ep_fwd[k - 1];
        next[i].u[k - 1] = p;
        next[i].v[k - 1] = p * m.lam_p;
      }
    }

    // boundary value from the manifold map at the current P w(0)
    const Eigen::VectorXd pw0 = p_coords(cur[0], spec);
    const StateE qw0 = h_at(pu0 + pw0) - qu0;

    // Q part: forward from Q w(0), split modes then whole modes
    for (int k = 1; k <= spec.N; ++k) {
      const ModeEigen& m = eig.mode(k);
      double q = eigen_coords(qw0.u[k - 1], qw0.v[k - 1], m).second;
      next[0].u[k - 1] += q;
      next[0].v[k - 1] += q * m.lam_m;
      for (std::size_t i = 0; i < n; ++i) {
        const double qf = eigen_coords(Ft[i].u[k - 1], Ft[i].v[k - 1], m).second;
        q = em_fwd[k - 1] * q + wm[k - 1] * qf;
        next[i + 1].u[k - 1] += q;
        next[i + 1].v[k - 1] += q * m.lam_m;
      }
    }
    for (int k = spec.N + 1; k <= spec.M; ++k) {
      const int j = k - 1;
      double qu = qw0.u[j], qv = qw0.v[j];
      next[0].u[j] = qu;
      next[0].v[j] = qv;
      for (std::size_t i = 0; i < n; ++i) {
        double fu = Ft[i].u[j], fv = Ft[i].v[j];
        kernel[j].weight.apply(k, e2, fu, fv);
        kernel[j].prop.apply(k, e2, qu, qv);
        qu += fu;
        qv += fv;
        next[i + 1].u[j] = qu;
        next[i + 1].v[j] = qv;
      }
    }

    // the eta-weight can exceed e^{100}; a change below roundoff of the local
    // trajectory scale is indistinguishable from zero and must not be
    // amplified into a phantom non-convergence
    diff = 0.0;
    for (std::size_t i = 0; i <= n; ++i) {
      const double raw = norm_E(next[i] - cur[i], spec);
      const double floor_i =
          1e-13 * (1.0 + norm_E(u_orbit.states[i], spec) + norm_E(cur[i], spec));
      if (raw > floor_i) diff = std::max(diff, weight.weight(i) * raw);
    }
    std::swap(cur, next);
    if (diff <= params.tol) {
      TrackingResult out;
      out.x = x;
      out.x_bar = x + cur[0];
      out.residual = diff;
      out.contraction_observed = worst_ratio;
      out.w_trajectory.t0 = 0.0;
      out.w_trajectory.step = dt;
      out.w_trajectory.states = std::move(cur);
      return out;
    }
    if (prev_diff > 0.0) {
      ratio = diff / prev_diff;
      worst_ratio = std::max(worst_ratio, ratio);
    }
    prev_diff = diff;
  }
  throw std::runtime_error("solve_tracking_point: max_iter=" + std::to_string(params.max_iter) +
                           " exceeded, last contraction ratio " + std::to_string(ratio));
}

// Integrates both orbits and fits log ||phi(t,x) - phi(t,x_bar)||_E over the
// window past the first 5% of [0, T_f] where the difference is above 10 tol.
// Sets fitted_rate, c1_estimate (intercept over the initial separation) or the
// coincident flag when everything sits below the floor.
inline void measure_rate(TrackingResult& result, const OUPath& z, const WaveSpec& spec,
                         const TrackingParams& params) {
  const double dt = result.w_trajectory.step;
  const double T = dt * static_cast<double>(result.w_trajectory.states.size() - 1);
  const Trajectory a = integrate(result.x, z, 0.0, T, dt, spec);
  const Trajectory b = integrate(result.x_bar, z, 0.0, T, dt, spec);

  double st = 0, sl = 0, stt = 0, stl = 0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < a.states.size(); ++i) {
    const double t = a.time_at(i);
    if (t < 0.05 * T) continue;
    const double d = norm_E(a.states[i] - b.states[i], spec);
    if (d <= 10.0 * params.tol) continue;
    const double l = std::log(d);
    st += t;
    sl += l;
    stt += t * t;
    stl += t * l;
    ++used;
  }
  if (used < 2) {
    result.coincident = true;
    return;
  }
  const double m = static_cast<double>(used);
  result.fitted_rate = (m * stl - st * sl) / (m * stt - st * st);
  const double intercept = (sl - result.fitted_rate * st) / m;
  const double sep = norm_E(result.x - result.x_bar, spec);
  result.c1_estimate = (sep > 0.0) ? std::exp(intercept) / sep : 0.0;
}

// Export: '#' metadata lines, then t, ||difference||_E rows.
inline void write_tracking_csv(const TrackingResult& result, const OUPath& z,
                               const WaveSpec& spec, const std::string& filename) {
  const double dt = result.w_trajectory.step;
  const double T = dt * static_cast<double>(result.w_trajectory.states.size() - 1);
  const Trajectory a = integrate(result.x, z, 0.0, T, dt, spec);
  const Trajectory b = integrate(result.x_bar, z, 0.0, T, dt, spec);
  std::ofstream out(filename);
  if (!out) throw std::runtime_error("write_tracking_csv: cannot open " + filename);
  out.precision(17);
  out << "# fitted_rate=" << result.fitted_rate << '\n'
      << "# c1_estimate=" << result.c1_estimate << '\n'
      << "# residual=" << result.residual << '\n'
      << "# coincident=" << (result.coincident ? 1 : 0) << '\n'
      << "t,difference\n";
  for (std::size_t i = 0; i < a.states.size(); ++i)
    out << a.time_at(i) << ',' << norm_E(a.states[i] - b.states[i], spec) << '\n';
}

}  // namespace waveim
