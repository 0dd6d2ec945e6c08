// Backward Lyapunov-Perron construction of the manifold map h(xi, omega):
// gap certificates, the fixed-point solver, sampled charts, and the graph
// distance diagnostic.
#pragma once

#include <waveim/noise.hpp>
#include <waveim/rds.hpp>
#include <waveim/spectral.hpp>

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <future>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace waveim {

struct GapReport {
  double alpha = 0.0;       // lambda_N^+
  double beta = 0.0;        // lambda_{N+1}^+
  double eta = 0.0;         // (alpha + beta) / 2
  double K = 1.0;
  double lipF = 0.0;        // 3 lip_f
  double lhs_gap = 0.0;     // K lipF (1/(alpha-eta) + 1/(eta-beta))
  double lip_h_bound = 0.0; // (K lipF / (alpha-eta)) / (1 - lhs_gap)
  double lhs_gap1 = 0.0;    // lhs_gap + K^2 lip_h lipF / (alpha-eta)
  bool pass_gap = false;
  bool pass_gap1 = false;
};

// Evaluates both gap left-hand sides.  lip_h < 0 selects the analytic
// contraction bound; a chart-based empirical estimate can be passed instead.
inline GapReport check_gap(const WaveSpec& spec, double lip_h = -1.0) {
  spec.validate();
  const EigenData eig = eigen_data(spec);
  GapReport r;
  r.alpha = eig.mode(spec.N).lam_p;
  r.beta = eig.mode(spec.N + 1).lam_p;
  r.eta = 0.5 * (r.alpha + r.beta);
  r.lipF = 3.0 * spec.lip_f;
  r.lhs_gap = r.K * r.lipF * (1.0 / (r.alpha - r.eta) + 1.0 / (r.eta - r.beta));
  r.pass_gap = r.lhs_gap < 1.0;
  if (r.pass_gap)
    r.lip_h_bound = (r.K * r.lipF / (r.alpha - r.eta)) / (1.0 - r.lhs_gap);
  else
    r.lip_h_bound = std::numeric_limits<double>::infinity();
  const double lh = (lip_h >= 0.0) ? lip_h : r.lip_h_bound;
  r.lhs_gap1 = r.lhs_gap + r.K * r.K * lh * r.lipF / (r.alpha - r.eta);
  r.pass_gap1 = r.lhs_gap1 < 1.0;
  return r;
}

struct LPParams {
  double T_back = 0.0;  // <= 0 selects the default horizon
  double step = 1e-3;
  double tol = 1e-8;
  int max_iter = 200;
  double radius = 1.0;  // chart radius R

  // max(ln(1/tol)/(eta-beta), 5/(alpha-beta) ln(1/tol)), rounded up to the
  // step grid
  double horizon(const GapReport& gap) const {
    double T = T_back;
    if (T <= 0.0) {
      const double l = std::log(1.0 / tol);
      T = std::max(l / (gap.eta - gap.beta), 5.0 / (gap.alpha - gap.beta) * l);
    }
    return std::ceil(T / step - 1e-9) * step;
  }
};

namespace detail {

// One step of the exponential-kernel quadrature for a single mode: the
// homogeneous propagator E = e^{B dt} and the left-point weight
// W = int_0^dt e^{B s} ds, as p I + q B coefficient pairs.
struct ModeKernel {
  ModeFunction prop;
  ModeFunction weight;

  static ModeKernel make(const ModeEigen& m, double dt) {
    ModeKernel out;
    const auto phi1 = [dt](std::complex<double> lam) {
      return (std::exp(lam * dt) - 1.0) / lam;
    };
    if (m.defective) {
      const double l = m.lam_p, g = std::exp(l * dt);
      out.prop = ModeFunction::from_values(m, g, g, dt * g);
      out.weight = ModeFunction::from_values(m, (g - 1.0) / l, (g - 1.0) / l,
                                             (dt * l * g - g + 1.0) / (l * l));
    } else if (m.complex_pair) {
      const std::complex<double> lam(m.lam_p, m.imag);
      const auto g = std::exp(lam * dt);
      out.prop = ModeFunction::from_values(m, g, std::conj(g), {});
      out.weight = ModeFunction::from_values(m, phi1(lam), std::conj(phi1(lam)), {});
    } else {
      out.prop = ModeFunction::from_values(m, std::exp(m.lam_p * dt), std::exp(m.lam_m * dt), {});
      out.weight = ModeFunction::from_values(m, phi1(m.lam_p), phi1(m.lam_m), {});
    }
    return out;
  }
};

}  // namespace detail

// Backward fixed point on [-T_back, 0]: iterates
//   LP(u)(t) = e^{At} xi + int_0^t e^{A(t-s)} P F(theta_s omega, u(s)) ds
//            + int_{-T_back}^t e^{A(t-s)} Q F(theta_s omega, u(s)) ds,
// quadrature by exact kernel integration against left-point-constant F,
// convergence in the eta-weighted sup norm.  P u(0) = xi by construction.
inline Trajectory solve_backward(const Eigen::VectorXd& xi, const OUPath& z,
                                 const WaveSpec& spec, const LPParams& params,
                                 double* contraction_out = nullptr) {
  spec.validate();
  if (xi.size() != spec.N) throw std::invalid_argument("solve_backward: xi must have N entries");
  const GapReport gap = check_gap(spec);
  if (!gap.pass_gap)
    throw std::runtime_error("solve_backward: gap condition fails (lhs_gap=" +
                             std::to_string(gap.lhs_gap) + "), no contraction certificate");
  const double dt = params.step;
  if (!(dt > 0.0)) throw std::invalid_argument("solve_backward: step must be positive");
  if (!detail::grid_aligned(dt, z.step))
    throw std::invalid_argument("solve_backward: step must align with the noise grid");
  const double T = params.horizon(gap);
  if (!z.contains(-T) || !z.contains(0.0))
    throw std::invalid_argument("solve_backward: noise window does not cover [-T_back, 0]");
  const auto n = static_cast<std::size_t>(std::llround(T / dt));

  const EigenData eig = eigen_data(spec);
  std::vector<detail::ModeKernel> kernel;
  kernel.reserve(spec.M);
  for (int k = 1; k <= spec.M; ++k) kernel.push_back(detail::ModeKernel::make(eig.mode(k), dt));
  // forward/backward scalar factors for the split modes k <= N
  std::vector<double> ep_fwd(spec.N), em_fwd(spec.N), wp(spec.N), wm(spec.N);
  for (int k = 1; k <= spec.N; ++k) {
    const ModeEigen& m = eig.mode(k);
    ep_fwd[k - 1] = std::exp(m.lam_p * dt);
    em_fwd[k - 1] = std::exp(m.lam_m * dt);
    wp[k - 1] = (ep_fwd[k - 1] - 1.0) / m.lam_p;
    wm[k - 1] = (em_fwd[k - 1] - 1.0) / m.lam_m;
  }

  // initial iterate u^0(t) = e^{At} xi, pure P
  std::vector<StateE> cur(n + 1, StateE(spec.M));
  for (std::size_t i = 0; i <= n; ++i) {
    const double t = -T + static_cast<double>(i) * dt;
    for (int k = 1; k <= spec.N; ++k) {
      const double c = xi[k - 1] * std::exp(eig.mode(k).lam_p * t);
      cur[i].u[k - 1] = c;
      cur[i].v[k - 1] = c * eig.mode(k).lam_p;
    }
  }

  const auto weighted_diff = [&](const std::vector<StateE>& a, const std::vector<StateE>& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i <= n; ++i) {
      const double t = -T + static_cast<double>(i) * dt;
      // scale before the norm: backward P iterates can sit far above the
      // square-safe range, the weighted difference never does
      worst = std::max(worst, norm_E((a[i] - b[i]) * std::exp(-gap.eta * t), spec));
    }
    return worst;
  };

  double prev_diff = -1.0, ratio = 0.0, worst_ratio = 0.0;
  std::vector<StateE> F(n), next(n + 1, StateE(spec.M));
  for (int iter = 0; iter < params.max_iter; ++iter) {
    for (std::size_t i = 0; i < n; ++i)
      F[i] = apply_F(cur[i], z.at(-T + static_cast<double>(i) * dt), spec);

    // P part (e_k^+, k <= N): backward from p(0) = xi_k
    for (int k = 1; k <= spec.N; ++k) {
      const ModeEigen& m = eig.mode(k);
      double p = xi[k - 1];
      next[n].u[k - 1] = p;
      next[n].v[k - 1] = p * m.lam_p;
      for (std::size_t i = n; i-- > 0;) {
        const double pf = eigen_coords(F[i].u[k - 1], F[i].v[k - 1], m).first;
        p = (p - wp[k - 1] * pf) / ep_fwd[k - 1];
        next[i].u[k - 1] = p;
        next[i].v[k - 1] = p * m.lam_p;
      }
    }
    // Q part, split modes (e_k^-, k <= N): forward from 0 at -T_back
    for (int k = 1; k <= spec.N; ++k) {
      const ModeEigen& m = eig.mode(k);
      double q = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double qf = eigen_coords(F[i].u[k - 1], F[i].v[k - 1], m).second;
        q = em_fwd[k - 1] * q + wm[k - 1] * qf;
        next[i + 1].u[k - 1] += q;
        next[i + 1].v[k - 1] += q * m.lam_m;
      }
    }
    // Q part, whole modes k > N: forward 2x2 recursion from 0 at -T_back
    for (int k = spec.N + 1; k <= spec.M; ++k) {
      const int j = k - 1;
      const detail::ModeKernel& ker = kernel[j];
      double qu = 0.0, qv = 0.0;
      next[0].u[j] = 0.0;
      next[0].v[j] = 0.0;
      const double e2 = spec.epsilon * spec.epsilon;
      for (std::size_t i = 0; i < n; ++i) {
        double fu = F[i].u[j], fv = F[i].v[j];
        ker.weight.apply(k, e2, fu, fv);
        ker.prop.apply(k, e2, qu, qv);
        qu += fu;
        qv += fv;
        next[i + 1].u[j] = qu;
        next[i + 1].v[j] = qv;
      }
    }

    const double diff = weighted_diff(next, cur);
    std::swap(cur, next);
    if (diff <= params.tol) {
      if (contraction_out) *contraction_out = worst_ratio;
      Trajectory traj;
      traj.t0 = -T;
      traj.step = dt;
      traj.states = std::move(cur);
      return traj;
    }
    if (prev_diff > 0.0) {
      ratio = diff / prev_diff;
      worst_ratio = std::max(worst_ratio, ratio);
    }
    prev_diff = diff;
  }
  throw std::runtime_error("solve_backward: max_iter=" + std::to_string(params.max_iter) +
                           " exceeded, last contraction ratio " + std::to_string(ratio));
}

// h(xi, omega) = int_{-T_back}^0 e^{-As} Q F(theta_s omega, u(s)) ds on the
// converged backward trajectory -- one more pass of the quadrature that
// produced its Q part, so it agrees with Q u(0) up to the stopping tolerance.
inline StateE evaluate_h(const Eigen::VectorXd& xi, const OUPath& z, const WaveSpec& spec,
                         const LPParams& params, double* contraction_out = nullptr) {
  const Trajectory traj = solve_backward(xi, z, spec, params, contraction_out);
  const EigenData eig = eigen_data(spec);
  const double dt = traj.step;
  const auto n = traj.states.size() - 1;
  const double e2 = spec.epsilon * spec.epsilon;

  std::vector<StateE> F(n);
  for (std::size_t i = 0; i < n; ++i)
    F[i] = apply_F(traj.states[i], z.at(traj.time_at(i)), spec);

  StateE h(spec.M);
  for (int k = 1; k <= spec.N; ++k) {
    const ModeEigen& m = eig.mode(k);
    const double ef = std::exp(m.lam_m * dt);
    const double w = (ef - 1.0) / m.lam_m;
    double q = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      q = ef * q + w * eigen_coords(F[i].u[k - 1], F[i].v[k - 1], m).second;
    h.u[k - 1] = q;
    h.v[k - 1] = q * m.lam_m;
  }
  for (int k = spec.N + 1; k <= spec.M; ++k) {
    const int j = k - 1;
    const auto ker = detail::ModeKernel::make(eig.mode(k), dt);
    double qu = 0.0, qv = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double fu = F[i].u[j], fv = F[i].v[j];
      ker.weight.apply(k, e2, fu, fv);
      ker.prop.apply(k, e2, qu, qv);
      qu += fu;
      qv += fv;
    }
    h.u[j] = qu;
    h.v[j] = qv;
  }
  return h;
}

struct ManifoldChart {
  std::uint64_t omega_seed = 0;
  WaveSpec spec;
  std::vector<Eigen::VectorXd> xi_grid;
  std::vector<StateE> h_values;
  double T_back = 0.0;
  double step = 0.0;
  double tol = 0.0;
  double contraction_observed = 0.0;
  double radius = 0.0;
  bool partial = false;
  std::vector<std::string> failures;  // "index: message" per failed point
};

// evaluate_h over the grid, in parallel; a failing point marks the chart
// partial instead of aborting the rest.
inline ManifoldChart build_chart(const std::vector<Eigen::VectorXd>& xi_grid, const OUPath& z,
                                 const WaveSpec& spec, const LPParams& params,
                                 std::uint64_t omega_seed = 0) {
  spec.validate();
  for (const auto& xi : xi_grid)
    if (norm_E(embed_P(xi, spec), spec) > params.radius * (1.0 + 1e-12))
      throw std::invalid_argument("build_chart: grid point outside radius R");

  ManifoldChart chart;
  chart.omega_seed = omega_seed;
  chart.spec = spec;
  chart.xi_grid = xi_grid;
  chart.T_back = params.horizon(check_gap(spec));
  chart.step = params.step;
  chart.tol = params.tol;
  chart.radius = params.radius;
  chart.h_values.assign(xi_grid.size(), StateE(spec.M));

  std::vector<double> ratios(xi_grid.size(), 0.0);
  std::vector<std::string> errors(xi_grid.size());
  std::vector<std::future<void>> jobs;
  jobs.reserve(xi_grid.size());
  for (std::size_t i = 0; i < xi_grid.size(); ++i)
    jobs.push_back(std::async(std::launch::async, [&, i] {
      try {
        chart.h_values[i] = evaluate_h(xi_grid[i], z, spec, params, &ratios[i]);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }));
  for (auto& j : jobs) j.get();

  for (std::size_t i = 0; i < xi_grid.size(); ++i) {
    chart.contraction_observed = std::max(chart.contraction_observed, ratios[i]);
    if (!errors[i].empty()) {
      chart.partial = true;
      chart.failures.push_back(std::to_string(i) + ": " + errors[i]);
    }
  }
  return chart;
}

// max over grid pairs of ||h(xi1) - h(xi2)||_E / ||xi1 - xi2||_E.
inline double estimate_lip_h(const ManifoldChart& chart) {
  if (chart.xi_grid.size() < 2)
    throw std::invalid_argument("estimate_lip_h: need at least 2 chart points");
  double worst = 0.0;
  for (std::size_t i = 0; i < chart.xi_grid.size(); ++i)
    for (std::size_t j = i + 1; j < chart.xi_grid.size(); ++j) {
      const double dx =
          norm_E(embed_P(chart.xi_grid[i], chart.spec) - embed_P(chart.xi_grid[j], chart.spec),
                 chart.spec);
      if (dx < 1e-14) continue;
      worst = std::max(worst,
                       norm_E(chart.h_values[i] - chart.h_values[j], chart.spec) / dx);
    }
  return worst;
}

// ||Q U - h(P U, omega)||_E: zero (up to tol) exactly on the computed graph.
inline double graph_distance(const StateE& U, const OUPath& z, const WaveSpec& spec,
                             const LPParams& params) {
  const StateE h = evaluate_h(p_coords(U, spec), z, spec, params);
  return norm_E(project_Q(U, spec) - h, spec);
}

// Chart persistence: '#' metadata lines, then one CSV row per grid point with
// xi_1..xi_N, h_u_1..h_u_M, h_v_1..h_v_M.
inline void save_chart(const ManifoldChart& chart, const std::string& filename) {
  std::ofstream out(filename);
  if (!out) throw std::runtime_error("save_chart: cannot open " + filename);
  out.precision(17);
  out << "# omega_seed=" << chart.omega_seed << '\n'
      << "# epsilon=" << chart.spec.epsilon << '\n'
      << "# M=" << chart.spec.M << '\n'
      << "# N=" << chart.spec.N << '\n'
      << "# f=" << chart.spec.f.name() << '\n'
      << "# delta=" << chart.spec.delta << '\n'
      << "# T_back=" << chart.T_back << '\n'
      << "# step=" << chart.step << '\n'
      << "# tol=" << chart.tol << '\n'
      << "# contraction_observed=" << chart.contraction_observed << '\n'
      << "# radius=" << chart.radius << '\n'
      << "# partial=" << (chart.partial ? 1 : 0) << '\n';
  for (std::size_t i = 0; i < chart.xi_grid.size(); ++i) {
    for (int k = 0; k < chart.spec.N; ++k) out << chart.xi_grid[i][k] << ',';
    for (int j = 0; j < chart.spec.M; ++j) out << chart.h_values[i].u[j] << ',';
    for (int j = 0; j < chart.spec.M; ++j)
      out << chart.h_values[i].v[j] << (j + 1 < chart.spec.M ? ',' : '\n');
  }
}

// Reload a chart saved next to the spec it was built from.  Geometry comes
// from the caller's spec; metadata rows are checked against it.
inline ManifoldChart load_chart(const std::string& filename, const WaveSpec& spec) {
  std::ifstream in(filename);
  if (!in) throw std::runtime_error("load_chart: cannot open " + filename);
  ManifoldChart chart;
  chart.spec = spec;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = line.substr(2, eq - 2);
      const std::string val = line.substr(eq + 1);
      if (key == "omega_seed") chart.omega_seed = std::stoull(val);
      else if (key == "epsilon" && std::abs(std::stod(val) - spec.epsilon) > 1e-15)
        throw std::runtime_error("load_chart: epsilon mismatch with the supplied spec");
      else if (key == "M" && std::stoi(val) != spec.M)
        throw std::runtime_error("load_chart: M mismatch with the supplied spec");
      else if (key == "N" && std::stoi(val) != spec.N)
        throw std::runtime_error("load_chart: N mismatch with the supplied spec");
      else if (key == "T_back") chart.T_back = std::stod(val);
      else if (key == "step") chart.step = std::stod(val);
      else if (key == "tol") chart.tol = std::stod(val);
      else if (key == "contraction_observed") chart.contraction_observed = std::stod(val);
      else if (key == "radius") chart.radius = std::stod(val);
      else if (key == "partial") chart.partial = std::stoi(val) != 0;
      continue;
    }
    std::stringstream row(line);
    Eigen::VectorXd xi(spec.N);
    StateE h(spec.M);
    std::string cell;
    const auto next_cell = [&] {
      if (!std::getline(row, cell, ','))
        throw std::runtime_error("load_chart: short row in " + filename);
      return std::stod(cell);
    };
    for (int k = 0; k < spec.N; ++k) xi[k] = next_cell();
    for (int j = 0; j < spec.M; ++j) h.u[j] = next_cell();
    for (int j = 0; j < spec.M; ++j) h.v[j] = next_cell();
    chart.xi_grid.push_back(std::move(xi));
    chart.h_values.push_back(std::move(h));
  }
  return chart;
}

}  // namespace waveim
