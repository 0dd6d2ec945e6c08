// Time integration of the random evolution equations, the cocycle contract,
// and the conjugation transforms between the stochastic PDE and the
// random-coefficient system.
#pragma once

#include <waveim/noise.hpp>
#include <waveim/spectral.hpp>

#include <cmath>
#include <stdexcept>
#include <vector>

namespace waveim {

enum class EvolutionMode { wave_additive, abstract_multiplicative };
enum class TransformDirection { forward, inverse };

struct Trajectory {
  double t0 = 0.0;
  double step = 0.0;
  EvolutionMode mode = EvolutionMode::wave_additive;
  std::vector<StateE> states;

  double time_at(std::size_t n) const { return t0 + static_cast<double>(n) * step; }
  const StateE& front() const { return states.front(); }
  const StateE& back() const { return states.back(); }
};

// Forward transform subtracts (0, delta phi z); inverse adds it.
inline StateE conjugate_additive(const StateE& U, double z_value, const WaveSpec& spec,
                                 TransformDirection direction) {
  const double sign = (direction == TransformDirection::forward) ? -1.0 : 1.0;
  StateE out = U;
  out.v += (sign * spec.delta * z_value) * spec.phi_modes;
  return out;
}

// T(omega, u) = u e^{-z}; inverse scales by e^{+z}.
inline StateE conjugate_multiplicative(const StateE& U, double z_value,
                                       TransformDirection direction) {
  if (std::abs(z_value) > 700.0)
    throw std::runtime_error("conjugate_multiplicative: |z| beyond exponent range");
  const double factor =
      std::exp((direction == TransformDirection::forward) ? -z_value : z_value);
  return U * factor;
}

// Nonlinearity of the abstract random-coefficient equation,
// G(omega, u) = e^{-z} F(u e^{z}) with F the wave nonlinearity at delta = 0.
inline StateE abstract_G(const StateE& U, double z_value, const WaveSpec& spec) {
  const StateE scaled = conjugate_multiplicative(U, z_value, TransformDirection::inverse);
  StateE F(spec.M);
  if (spec.f.kind != NonlinearityKind::zero)
    F.v = collocation_f(scaled.u, spec.f, spec.G) / (spec.epsilon * spec.epsilon);
  return conjugate_multiplicative(F, z_value, TransformDirection::forward);
}

// Exponential-Euler step: U_{n+1} = e^{A dt} e^{zeta_n} (U_n + dt F_n), with
// zeta_n = Int z over the step in abstract mode and 0 in wave mode (z enters
// only through F there).
inline Trajectory integrate(const StateE& U0, const OUPath& z, double t0, double t1, double step,
                            const WaveSpec& spec,
                            EvolutionMode mode = EvolutionMode::wave_additive,
                            double overflow_bound = 1e12) {
  spec.validate();
  if (!(t0 < t1)) throw std::invalid_argument("integrate: need t0 < t1");
  if (!(step > 0.0)) throw std::invalid_argument("integrate: step must be positive");
  if (!detail::grid_aligned(t0, z.step) || !detail::grid_aligned(step, z.step))
    throw std::invalid_argument("integrate: t0 and step must align with the noise grid");
  if (!z.contains(t0) || !z.contains(t1))
    throw std::invalid_argument("integrate: [t0, t1] not covered by the noise window");

  const auto n_steps = static_cast<std::size_t>(std::llround((t1 - t0) / step));

  Trajectory traj;
  traj.t0 = t0;
  traj.step = step;
  traj.mode = mode;
  traj.states.reserve(n_steps + 1);
  traj.states.push_back(U0);

  for (std::size_t n = 0; n < n_steps; ++n) {
    const double tn = t0 + static_cast<double>(n) * step;
    const StateE& Un = traj.states.back();
    StateE F(spec.M);
    double zeta = 0.0;
    if (mode == EvolutionMode::wave_additive) {
      F = apply_F(Un, z.at(tn), spec);
    } else {
      F = abstract_G(Un, z.at(tn), spec);
      zeta = integral_of_z(z, tn, tn + step);
    }
    StateE next = semigroup_apply(Un + F * step, step, spec, zeta);
    const double nn = norm_E(next, spec);
    if (!(nn <= overflow_bound))
      throw std::runtime_error("integrate: blow-up guard tripped at step " + std::to_string(n) +
                               " (t=" + std::to_string(tn + step) + ", ||U||_E=" +
                               std::to_string(nn) + ")");
    traj.states.push_back(std::move(next));
  }
  return traj;
}

// Trajectory export: CSV columns t, u_1..u_M, v_1..v_M; optional thinning.
inline void write_trajectory_csv(const Trajectory& traj, const std::string& filename,
                                 std::size_t thin = 1) {
  if (thin == 0) throw std::invalid_argument("write_trajectory_csv: thin must be >= 1");
  std::ofstream out(filename);
  if (!out) throw std::runtime_error("write_trajectory_csv: cannot open " + filename);
  const int M = traj.states.empty() ? 0 : traj.states.front().modes();
  out << "t";
  for (int k = 1; k <= M; ++k) out << ",u_" << k;
  for (int k = 1; k <= M; ++k) out << ",v_" << k;
  out << '\n';
  out.precision(17);
  for (std::size_t n = 0; n < traj.states.size(); n += thin) {
    out << traj.time_at(n);
    for (int i = 0; i < M; ++i) out << ',' << traj.states[n].u[i];
    for (int i = 0; i < M; ++i) out << ',' << traj.states[n].v[i];
    out << '\n';
  }
}

}  // namespace waveim
