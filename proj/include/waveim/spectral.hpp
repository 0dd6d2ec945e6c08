// Closed-form spectral machinery for the damped wave generator on (0, pi):
// eigenpairs of the per-mode 2x2 blocks, the equivalent inner product on
// E = H^1_0 x L^2 that makes the dichotomy constants K = 1, the spectral
// projections P/Q, the exact semigroup, and the collocation nonlinearity F.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace waveim {

inline constexpr double kPi = 3.14159265358979323846;

enum class NonlinearityKind { zero, affine, sine, tanh, custom };

// Pointwise nonlinearity f acting on u; built-ins carry their analytic
// Lipschitz constant on L^2.
struct Nonlinearity {
  NonlinearityKind kind = NonlinearityKind::zero;
  double c = 0.0;
  std::function<double(double)> fn;  // custom only
  double declared_lip = 0.0;         // custom only

  static Nonlinearity zero() { return {}; }
  static Nonlinearity affine(double c) { return {NonlinearityKind::affine, c, nullptr, 0.0}; }
  static Nonlinearity sine(double c) { return {NonlinearityKind::sine, c, nullptr, 0.0}; }
  static Nonlinearity tanh(double c) { return {NonlinearityKind::tanh, c, nullptr, 0.0}; }
  static Nonlinearity custom(std::function<double(double)> f, double lip) {
    return {NonlinearityKind::custom, 0.0, std::move(f), lip};
  }

  double operator()(double u) const {
    switch (kind) {
      case NonlinearityKind::zero: return 0.0;
      case NonlinearityKind::affine: return c * u;
      case NonlinearityKind::sine: return c * std::sin(u);
      case NonlinearityKind::tanh: return c * std::tanh(u);
      case NonlinearityKind::custom: return fn(u);
    }
    return 0.0;
  }

  // f(u + w) - f(u) without the cancellation of the naive difference: exact
  // identities per kind, direct subtraction only for custom f.
  double diff(double u, double w) const {
    switch (kind) {
      case NonlinearityKind::zero: return 0.0;
      case NonlinearityKind::affine: return c * w;
      case NonlinearityKind::sine: return 2.0 * c * std::cos(u + 0.5 * w) * std::sin(0.5 * w);
      case NonlinearityKind::tanh:
        return c * std::tanh(w) * (1.0 - std::tanh(u + w) * std::tanh(u));
      case NonlinearityKind::custom: return fn(u + w) - fn(u);
    }
    return 0.0;
  }

  double lip() const {
    switch (kind) {
      case NonlinearityKind::zero: return 0.0;
      case NonlinearityKind::custom: return declared_lip;
      default: return std::abs(c);
    }
  }

  std::string name() const {
    switch (kind) {
      case NonlinearityKind::zero: return "zero";
      case NonlinearityKind::affine: return "affine";
      case NonlinearityKind::sine: return "sine";
      case NonlinearityKind::tanh: return "tanh";
      case NonlinearityKind::custom: return "custom";
    }
    return "?";
  }
};

// Largest epsilon for which 1/sqrt(1/4 - eps^2 (N+1)^2) <= 3, i.e. the
// threshold below which the eps-independent Lipschitz bound 3 Lip f applies.
inline double epsilon_lip(int N) { return std::sqrt(5.0) / (6.0 * (N + 1)); }

struct WaveSpec {
  double epsilon = 0.01;
  int M = 16;  // Galerkin truncation (sine modes)
  int N = 4;   // manifold dimension cut: P spans e_k^+, k <= N
  int G = 64;  // collocation points on (0, pi)
  Nonlinearity f;
  double lip_f = 0.0;
  Eigen::VectorXd phi_modes;  // sine coefficients of phi, size M
  double delta = 0.0;

  void validate() const {
    if (!(epsilon > 0.0)) throw std::invalid_argument("WaveSpec: epsilon must be positive");
    if (M < 1 || N < 1) throw std::invalid_argument("WaveSpec: need M >= 1, N >= 1");
    if (!(1.0 / (2.0 * epsilon) > N + 1))
      throw std::invalid_argument("WaveSpec: hypothesis 1/(2 eps) > N+1 violated (eps=" +
                                  std::to_string(epsilon) + ", N=" + std::to_string(N) + ")");
    if (M < N + 1) throw std::invalid_argument("WaveSpec: need M >= N+1");
    if (G < 2 * M) throw std::invalid_argument("WaveSpec: need G >= 2M");
    if (!(lip_f >= 0.0)) throw std::invalid_argument("WaveSpec: lip_f must be nonnegative");
    if (phi_modes.size() != M) throw std::invalid_argument("WaveSpec: phi_modes must have size M");
    if (!(delta >= 0.0)) throw std::invalid_argument("WaveSpec: delta must be nonnegative");
  }
};

// Convenience builder: default phi = sin x, G = 4M, lip_f from the built-in f.
inline WaveSpec make_spec(double epsilon, int M, int N, Nonlinearity f, double delta = 0.0,
                          int G = 0) {
  WaveSpec spec;
  spec.epsilon = epsilon;
  spec.M = M;
  spec.N = N;
  spec.G = (G > 0) ? G : 4 * M;
  spec.f = f;
  spec.lip_f = f.lip();
  spec.phi_modes = Eigen::VectorXd::Zero(M);
  spec.phi_modes[0] = 1.0;
  spec.delta = delta;
  spec.validate();
  return spec;
}

// Modal state (u_k, v_k), k = 1..M, in the sine basis.
struct StateE {
  Eigen::VectorXd u, v;

  StateE() = default;
  explicit StateE(int M) : u(Eigen::VectorXd::Zero(M)), v(Eigen::VectorXd::Zero(M)) {}
  StateE(Eigen::VectorXd u_, Eigen::VectorXd v_) : u(std::move(u_)), v(std::move(v_)) {}

  int modes() const { return static_cast<int>(u.size()); }
  bool finite() const { return u.allFinite() && v.allFinite(); }

  StateE operator+(const StateE& o) const { return {u + o.u, v + o.v}; }
  StateE operator-(const StateE& o) const { return {u - o.u, v - o.v}; }
  StateE operator*(double a) const { return {a * u, a * v}; }
};

struct ModeEigen {
  int k = 0;
  bool complex_pair = false;  // 4 eps^2 k^2 > 1
  bool defective = false;     // 4 eps^2 k^2 = 1 (Jordan block)
  double lam_p = 0.0;         // real parts for the complex case
  double lam_m = 0.0;
  double imag = 0.0;  // imaginary part of lambda_k^+ (0 when real)
};

struct EigenData {
  double epsilon = 0.0;
  std::vector<ModeEigen> modes;  // index 0 <-> k = 1

  const ModeEigen& mode(int k) const { return modes.at(k - 1); }

  // Real 2x2 generator block for the (u_k, v_k) pair.
  Eigen::Matrix2d block(int k) const {
    const double e2 = epsilon * epsilon;
    Eigen::Matrix2d B;
    B << 0.0, 1.0, -static_cast<double>(k) * k / e2, -1.0 / e2;
    return B;
  }
};

inline EigenData eigen_data(const WaveSpec& spec) {
  spec.validate();
  EigenData data;
  data.epsilon = spec.epsilon;
  const double e2 = spec.epsilon * spec.epsilon;
  for (int k = 1; k <= spec.M; ++k) {
    ModeEigen m;
    m.k = k;
    const double disc = 1.0 - 4.0 * e2 * k * k;
    if (std::abs(disc) <= 1e-14) {
      m.defective = true;
      m.lam_p = m.lam_m = -1.0 / (2.0 * e2);
    } else if (disc > 0.0) {
      const double s = std::sqrt(disc);
      m.lam_p = (-1.0 + s) / (2.0 * e2);
      m.lam_m = (-1.0 - s) / (2.0 * e2);
    } else {
      m.complex_pair = true;
      m.lam_p = m.lam_m = -1.0 / (2.0 * e2);
      m.imag = std::sqrt(-disc) / (2.0 * e2);
    }
    data.modes.push_back(m);
  }
  return data;
}

namespace detail {

// Per-mode coefficient of <u1,u2> in the new inner product (the 1/2 cross
// term and eps^2 v-term are mode-independent).  Modes k <= N use the E11
// form, modes k > N the E22 form.
inline double metric_ucoef(const WaveSpec& spec, int k) {
  const double e2 = spec.epsilon * spec.epsilon;
  if (k <= spec.N) return 1.0 / (2.0 * e2) - static_cast<double>(k) * k;
  return static_cast<double>(k) * k + 1.0 / (2.0 * e2) -
         2.0 * static_cast<double>(spec.N + 1) * (spec.N + 1);
}

inline Eigen::Matrix2d metric_matrix(const WaveSpec& spec, int k) {
  Eigen::Matrix2d G;
  G << metric_ucoef(spec, k), 0.5, 0.5, spec.epsilon * spec.epsilon;
  return (kPi / 2.0) * G;
}

}  // namespace detail

// The equivalent inner product on E (mode-diagonal by sine orthogonality,
// with the ||sin k.||^2 = pi/2 mass factor applied).
inline double inner_product_E(const StateE& U1, const StateE& U2, const WaveSpec& spec) {
  if (U1.modes() != spec.M || U2.modes() != spec.M)
    throw std::invalid_argument("inner_product_E: states must have M modes");
  const double e2 = spec.epsilon * spec.epsilon;
  double acc = 0.0;
  for (int k = 1; k <= spec.M; ++k) {
    const int i = k - 1;
    acc += detail::metric_ucoef(spec, k) * U1.u[i] * U2.u[i] +
           0.5 * (U1.u[i] * U2.v[i] + U1.v[i] * U2.u[i]) + e2 * U1.v[i] * U2.v[i];
  }
  return (kPi / 2.0) * acc;
}

inline double norm_E(const StateE& U, const WaveSpec& spec) {
  return std::sqrt(std::max(0.0, inner_product_E(U, U, spec)));
}

inline double l2_norm(const Eigen::VectorXd& modes) {
  return std::sqrt(kPi / 2.0) * modes.norm();
}

// Eigen-coordinates of one mode: (u,v) = xi_p e_k^+ + xi_m e_k^-, with
// e_k^pm = (1, lambda_k^pm).  Real-distinct modes only.
inline std::pair<double, double> eigen_coords(double u, double v, const ModeEigen& m) {
  if (m.complex_pair || m.defective)
    throw std::invalid_argument("eigen_coords: mode has no real eigenbasis");
  const double den = m.lam_p - m.lam_m;
  return {(v - m.lam_m * u) / den, (m.lam_p * u - v) / den};
}

// P extracts, for k <= N, the e_k^+ component; Q = I - P.
inline StateE project_P(const StateE& U, const WaveSpec& spec) {
  static thread_local std::map<std::pair<double, int>, EigenData> cache;
  const auto key = std::make_pair(spec.epsilon, spec.M);
  auto it = cache.find(key);
  if (it == cache.end()) it = cache.emplace(key, eigen_data(spec)).first;
  const EigenData& eig = it->second;

  StateE out(spec.M);
  for (int k = 1; k <= spec.N; ++k) {
    const auto [xi_p, xi_m] = eigen_coords(U.u[k - 1], U.v[k - 1], eig.mode(k));
    (void)xi_m;
    out.u[k - 1] = xi_p;
    out.v[k - 1] = xi_p * eig.mode(k).lam_p;
  }
  return out;
}

inline StateE project_Q(const StateE& U, const WaveSpec& spec) { return U - project_P(U, spec); }

// P-coordinates (the e_k^+ coefficients, k <= N) of a state.
inline Eigen::VectorXd p_coords(const StateE& U, const WaveSpec& spec) {
  const EigenData eig = eigen_data(spec);
  Eigen::VectorXd xi(spec.N);
  for (int k = 1; k <= spec.N; ++k)
    xi[k - 1] = eigen_coords(U.u[k - 1], U.v[k - 1], eig.mode(k)).first;
  return xi;
}

// State in E1 with the given e_k^+ coefficients.
inline StateE embed_P(const Eigen::VectorXd& xi, const WaveSpec& spec) {
  if (xi.size() != spec.N) throw std::invalid_argument("embed_P: xi must have N entries");
  const EigenData eig = eigen_data(spec);
  StateE out(spec.M);
  for (int k = 1; k <= spec.N; ++k) {
    out.u[k - 1] = xi[k - 1];
    out.v[k - 1] = xi[k - 1] * eig.mode(k).lam_p;
  }
  return out;
}

namespace detail {

// Apply the analytic function g (given by its values on the spectrum) to the
// 2x2 block of mode m: g(B) = p I + q B with p, q from Lagrange interpolation
// on the eigenvalues; defective case uses g and g'.
struct ModeFunction {
  double p = 0.0, q = 0.0;

  static ModeFunction from_values(const ModeEigen& m, std::complex<double> g_p,
                                  std::complex<double> g_m, std::complex<double> g_prime) {
    ModeFunction out;
    if (m.defective) {
      out.q = g_prime.real();
      out.p = g_p.real() - m.lam_p * out.q;
    } else if (m.complex_pair) {
      const std::complex<double> lam(m.lam_p, m.imag);
      const std::complex<double> qz = (g_p - g_m) / (lam - std::conj(lam));
      out.q = qz.real();
      out.p = (g_p - qz * lam).real();
    } else {
      out.q = ((g_p - g_m) / (m.lam_p - m.lam_m)).real();
      out.p = (g_p - out.q * m.lam_p).real();
    }
    return out;
  }

  void apply(double k, double e2, double& u, double& v) const {
    // B = [[0,1],[-k^2/e2,-1/e2]]
    const double bu = v;
    const double bv = -(k * k) * u / e2 - v / e2;
    const double nu = p * u + q * bu;
    const double nv = p * v + q * bv;
    u = nu;
    v = nv;
  }
};

inline std::complex<double> cexp_checked(std::complex<double> x, const char* where) {
  if (x.real() > 709.0)
    throw std::runtime_error(std::string(where) + ": exponent overflow (" +
                             std::to_string(x.real()) + ")");
  return std::exp(x);
}

}  // namespace detail

// Exact per-mode semigroup e^{At} scaled by e^{z_exponent}.  z_exponent is a
// precomputed scalar Int z dr (0 for the deterministic semigroup).
inline StateE semigroup_apply(const StateE& U, double t, const WaveSpec& spec,
                              double z_exponent = 0.0) {
  if (!U.finite()) throw std::invalid_argument("semigroup_apply: non-finite input state");
  const EigenData eig = eigen_data(spec);
  const double e2 = spec.epsilon * spec.epsilon;
  StateE out = U;
  for (int k = 1; k <= spec.M; ++k) {
    const ModeEigen& m = eig.mode(k);
    const int i = k - 1;
    if (!m.complex_pair && !m.defective) {
      // scalar flow in eigen-coordinates; a vanishing coefficient is skipped
      // so pure-P states admit arbitrarily negative t
      auto [xi_p, xi_m] = eigen_coords(U.u[i], U.v[i], m);
      double a_p = 0.0, a_m = 0.0;
      if (xi_p != 0.0) {
        const double ex = m.lam_p * t + z_exponent;
        if (ex > 709.0) throw std::runtime_error("semigroup_apply: overflow on mode " + std::to_string(k));
        a_p = xi_p * std::exp(ex);
      }
      if (xi_m != 0.0) {
        const double ex = m.lam_m * t + z_exponent;
        if (ex > 709.0) throw std::runtime_error("semigroup_apply: overflow on mode " + std::to_string(k));
        a_m = xi_m * std::exp(ex);
      }
      out.u[i] = a_p + a_m;
      out.v[i] = a_p * m.lam_p + a_m * m.lam_m;
    } else if (m.complex_pair) {
      const std::complex<double> lam(m.lam_p, m.imag);
      const auto g_p = detail::cexp_checked(lam * t + z_exponent, "semigroup_apply");
      const auto g_m = std::conj(g_p);
      const auto mf = detail::ModeFunction::from_values(m, g_p, g_m, {});
      mf.apply(k, e2, out.u[i], out.v[i]);
    } else {
      // Jordan block: e^{Bt} = e^{lam t}(I + t(B - lam I))
      const double ex = m.lam_p * t + z_exponent;
      if (ex > 709.0) throw std::runtime_error("semigroup_apply: overflow on mode " + std::to_string(k));
      const double g = std::exp(ex);
      const auto mf = detail::ModeFunction::from_values(m, g, g, g * t);
      mf.apply(k, e2, out.u[i], out.v[i]);
    }
  }
  if (!out.finite()) throw std::runtime_error("semigroup_apply: non-finite result");
  return out;
}

namespace detail {

// Shared sine synthesis table for a (M, G) pair: synth(j, k) = sin(k x_j),
// x_j = j pi / G, j = 1..G-1.
struct SineTable {
  Eigen::MatrixXd synth;  // (G-1) x M

  SineTable(int M, int G) : synth(G - 1, M) {
    for (int j = 1; j < G; ++j)
      for (int k = 1; k <= M; ++k) synth(j - 1, k - 1) = std::sin(k * j * kPi / G);
  }
};

inline std::shared_ptr<const SineTable> sine_table(int M, int G) {
  static std::mutex mu;
  static std::map<std::pair<int, int>, std::shared_ptr<const SineTable>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto& entry = cache[{M, G}];
  if (!entry) entry = std::make_shared<const SineTable>(M, G);
  return entry;
}

}  // namespace detail

// Sine coefficients of f(u) by collocation: synthesize u on the G-point grid,
// apply f pointwise, analyze back with trapezoid quadrature (endpoints vanish).
inline Eigen::VectorXd collocation_f(const Eigen::VectorXd& u_modes, const Nonlinearity& f,
                                     int G) {
  const int M = static_cast<int>(u_modes.size());
  const auto table = detail::sine_table(M, G);
  Eigen::VectorXd point_values = table->synth * u_modes;
  for (int j = 0; j < point_values.size(); ++j) {
    const double w = f(point_values[j]);
    if (!std::isfinite(w))
      throw std::runtime_error("collocation_f: non-finite value at grid point x_" +
                               std::to_string(j + 1) + " = " + std::to_string((j + 1) * kPi / G));
    point_values[j] = w;
  }
  return (2.0 / G) * (table->synth.transpose() * point_values);
}

// Sine coefficients of f(u + w) - f(u), the increment computed pointwise by
// the cancellation-free Nonlinearity::diff.
inline Eigen::VectorXd collocation_f_diff(const Eigen::VectorXd& u_modes,
                                          const Eigen::VectorXd& w_modes, const Nonlinearity& f,
                                          int G) {
  const int M = static_cast<int>(u_modes.size());
  const auto table = detail::sine_table(M, G);
  const Eigen::VectorXd u_pts = table->synth * u_modes;
  Eigen::VectorXd w_pts = table->synth * w_modes;
  for (int j = 0; j < w_pts.size(); ++j) {
    const double d = f.diff(u_pts[j], w_pts[j]);
    if (!std::isfinite(d))
      throw std::runtime_error("collocation_f_diff: non-finite value at grid point x_" +
                               std::to_string(j + 1));
    w_pts[j] = d;
  }
  return (2.0 / G) * (table->synth.transpose() * w_pts);
}

// F(omega, U) = (delta phi z, eps^{-2} f(u)).
inline StateE apply_F(const StateE& U, double z_value, const WaveSpec& spec) {
  if (!U.finite()) throw std::invalid_argument("apply_F: non-finite input state");
  StateE out(spec.M);
  out.u = (spec.delta * z_value) * spec.phi_modes;
  if (spec.f.kind != NonlinearityKind::zero)
    out.v = collocation_f(U.u, spec.f, spec.G) / (spec.epsilon * spec.epsilon);
  return out;
}

enum class Subspace { E1, Em1, E22, E2 };

namespace detail {

// Operator norm of a 2x2 matrix T in the metric G (SPD): largest singular
// value of L^T T L^{-T} with G = L L^T.
inline double metric_op_norm(const Eigen::Matrix2d& T, const Eigen::Matrix2d& G) {
  const Eigen::LLT<Eigen::Matrix2d> llt(G);
  const Eigen::Matrix2d L = llt.matrixL();
  const Eigen::Matrix2d S = L.transpose() * T * L.transpose().inverse();
  return S.jacobiSvd().singularValues()(0);
}

inline Eigen::Matrix2d mode_exp(const EigenData& eig, int k, double t, double e2) {
  const ModeEigen& m = eig.mode(k);
  detail::ModeFunction mf;
  if (m.defective) {
    const double g = std::exp(m.lam_p * t);
    mf = detail::ModeFunction::from_values(m, g, g, g * t);
  } else if (m.complex_pair) {
    const std::complex<double> lam(m.lam_p, m.imag);
    const auto g_p = std::exp(lam * t);
    mf = detail::ModeFunction::from_values(m, g_p, std::conj(g_p), {});
  } else {
    mf = detail::ModeFunction::from_values(m, std::exp(m.lam_p * t), std::exp(m.lam_m * t), {});
  }
  Eigen::Matrix2d B;
  B << 0.0, 1.0, -static_cast<double>(k) * k / e2, -1.0 / e2;
  return mf.p * Eigen::Matrix2d::Identity() + mf.q * B;
}

}  // namespace detail

// Exact operator norm of e^{At} restricted to a spectral subspace, in the
// E-metric.  E1/Em1 restrictions are scalar on an orthogonal eigenbasis; E22
// needs the per-mode 2x2 metric norm.
inline double subspace_op_norm(const WaveSpec& spec, Subspace which, double t) {
  const EigenData eig = eigen_data(spec);
  const double e2 = spec.epsilon * spec.epsilon;
  double best = 0.0;
  switch (which) {
    case Subspace::E1:
      for (int k = 1; k <= spec.N; ++k) best = std::max(best, std::exp(eig.mode(k).lam_p * t));
      return best;
    case Subspace::Em1:
      for (int k = 1; k <= spec.N; ++k) best = std::max(best, std::exp(eig.mode(k).lam_m * t));
      return best;
    case Subspace::E22:
      for (int k = spec.N + 1; k <= spec.M; ++k)
        best = std::max(best, detail::metric_op_norm(detail::mode_exp(eig, k, t, e2),
                                                     detail::metric_matrix(spec, k)));
      return best;
    case Subspace::E2:
      return std::max(subspace_op_norm(spec, Subspace::Em1, t),
                      subspace_op_norm(spec, Subspace::E22, t));
  }
  return best;
}

}  // namespace waveim
