// Spectral machinery tests: eigenvalues, new inner product, projections,
// exact semigroup, collocation nonlinearity.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <waveim/spectral.hpp>

#include <random>

using namespace waveim;

namespace {

StateE random_state(int M, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> gauss(0.0, scale);
  StateE s(M);
  for (int i = 0; i < M; ++i) {
    s.u[i] = gauss(rng);
    s.v[i] = gauss(rng);
  }
  return s;
}

StateE eigvec_state(const WaveSpec& spec, int k, bool plus) {
  const EigenData eig = eigen_data(spec);
  StateE s(spec.M);
  s.u[k - 1] = 1.0;
  s.v[k - 1] = plus ? eig.mode(k).lam_p : eig.mode(k).lam_m;
  return s;
}

}  // namespace

TEST_CASE("eigenvalues: closed form, limit, complex case") {
  auto spec = make_spec(0.1, 8, 1, Nonlinearity::zero());
  auto eig = eigen_data(spec);
  CHECK(eig.mode(1).lam_p == doctest::Approx(-1.01020514433644).epsilon(1e-10));
  CHECK(eig.mode(1).lam_m == doctest::Approx(-98.98979485566356).epsilon(1e-10));

  // lambda_3^+ -> -9 monotonically as eps -> 0
  double prev = 0.0;
  bool first = true;
  for (double eps : {1e-1, 1e-2, 1e-3, 1e-4}) {
    auto s = make_spec(eps, 8, 1, Nonlinearity::zero());
    const double l3 = eigen_data(s).mode(3).lam_p;
    if (!first) CHECK(l3 > prev);  // decreasing eps moves lambda_3^+ up toward -9
    prev = l3;
    first = false;
  }
  CHECK(prev == doctest::Approx(-9.0).epsilon(1e-6));

  // eps = 0.1, k = 6: 4 eps^2 k^2 = 1.44 > 1, real part exactly -1/(2 eps^2)
  CHECK(eig.mode(6).complex_pair);
  CHECK(eig.mode(6).lam_p == doctest::Approx(-50.0).epsilon(1e-14));
}

TEST_CASE("vieta identities for all modes") {
  for (double eps : {0.1, 0.01}) {
    auto spec = make_spec(eps, 32, 2, Nonlinearity::zero());
    auto eig = eigen_data(spec);
    const double e2 = eps * eps;
    for (int k = 1; k <= spec.M; ++k) {
      const auto& m = eig.mode(k);
      std::complex<double> lp(m.lam_p, m.imag), lm(m.lam_m, -m.imag);
      CHECK(std::abs((lp + lm) - std::complex<double>(-1.0 / e2)) <= 1e-12 / e2);
      CHECK(std::abs((lp * lm) - std::complex<double>(k * k / e2)) <= 1e-12 * k * k / e2);
    }
  }
}

TEST_CASE("inner product: eigenvector orthogonality and norm identities") {
  auto spec = make_spec(0.01, 16, 4, Nonlinearity::zero());
  for (int k = 1; k <= spec.N; ++k) {
    const auto ep = eigvec_state(spec, k, true);
    const auto em = eigvec_state(spec, k, false);
    const double ip = inner_product_E(ep, em, spec);
    CHECK(std::abs(ip) <= 1e-10 * norm_E(ep, spec) * norm_E(em, spec));
  }

  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    auto U = random_state(spec.M, rng);
    // ||(0, v)||_E = eps ||v||_{L2}
    StateE vonly(spec.M);
    vonly.v = U.v;
    CHECK(norm_E(vonly, spec) ==
          doctest::Approx(spec.epsilon * l2_norm(U.v)).epsilon(1e-12));
    // ||U||_E >= sqrt(1/(4 eps^2) - (N+1)^2) ||u||
    const double lb = std::sqrt(1.0 / (4.0 * spec.epsilon * spec.epsilon) -
                                (spec.N + 1.0) * (spec.N + 1.0));
    CHECK(norm_E(U, spec) >= lb * l2_norm(U.u) * (1.0 - 1e-12));
  }
}

TEST_CASE("inner product is mode-diagonal") {
  auto spec = make_spec(0.01, 8, 2, Nonlinearity::zero());
  std::mt19937_64 rng(2);
  auto U = random_state(spec.M, rng);
  auto V = random_state(spec.M, rng);
  // supports {1,2,3} and {4..8} are disjoint
  for (int i = 3; i < 8; ++i) { U.u[i] = U.v[i] = 0.0; }
  for (int i = 0; i < 3; ++i) { V.u[i] = V.v[i] = 0.0; }
  CHECK(inner_product_E(U, V, spec) == 0.0);
}

TEST_CASE("spec hypothesis 1/(2 eps) > N+1 is enforced") {
  CHECK_THROWS_AS(make_spec(0.1, 16, 5, Nonlinearity::zero()), std::invalid_argument);
  CHECK_NOTHROW(make_spec(0.1, 16, 3, Nonlinearity::zero()));
}

TEST_CASE("projections: complementarity, ranges, E-orthogonality") {
  auto spec = make_spec(0.01, 16, 4, Nonlinearity::zero());
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto U = random_state(spec.M, rng);
    const auto P = project_P(U, spec);
    const auto Q = project_Q(U, spec);
    for (int i = 0; i < spec.M; ++i) {
      CHECK(P.u[i] + Q.u[i] == doctest::Approx(U.u[i]).epsilon(1e-12));
      CHECK(P.v[i] + Q.v[i] == doctest::Approx(U.v[i]).epsilon(1e-12));
    }
    const auto PP = project_P(P, spec);
    for (int i = 0; i < spec.M; ++i) CHECK(PP.u[i] == doctest::Approx(P.u[i]).epsilon(1e-10));

    const auto V = random_state(spec.M, rng);
    const double ip = inner_product_E(P, project_Q(V, spec), spec);
    CHECK(std::abs(ip) <= 1e-10 * norm_E(U, spec) * norm_E(V, spec));
  }

  // P annihilates e_k^- (k <= N) and every mode above N
  for (int k = 1; k <= spec.N; ++k) {
    const auto P = project_P(eigvec_state(spec, k, false), spec);
    CHECK(norm_E(P, spec) <= 1e-10);
  }
  const auto Phigh = project_P(eigvec_state(spec, spec.N + 2, true), spec);
  CHECK(norm_E(Phigh, spec) == 0.0);

  // cross-check the eigen-coordinate formula by solving the 2x2 system
  const EigenData eig = eigen_data(spec);
  std::mt19937_64 rng2(4);
  const auto U = random_state(spec.M, rng2);
  for (int k = 1; k <= spec.N; ++k) {
    Eigen::Matrix2d V2;
    V2 << 1.0, 1.0, eig.mode(k).lam_p, eig.mode(k).lam_m;
    const Eigen::Vector2d xi = V2.colPivHouseholderQr().solve(
        Eigen::Vector2d(U.u[k - 1], U.v[k - 1]));
    const auto P = project_P(U, spec);
    CHECK(P.u[k - 1] == doctest::Approx(xi[0]).epsilon(1e-9));
  }
}

TEST_CASE("semigroup: identity at t=0, dichotomy norms, semigroup property") {
  auto spec = make_spec(0.01, 16, 4, Nonlinearity::zero());
  std::mt19937_64 rng(5);
  const auto U = random_state(spec.M, rng);

  const auto id = semigroup_apply(U, 0.0, spec, 0.0);
  for (int i = 0; i < spec.M; ++i) {
    // v passes through eigen-coordinates with |lambda| ~ 1/eps^2, so a few
    // ulps of that scale survive the round trip
    CHECK(id.u[i] == doctest::Approx(U.u[i]).epsilon(1e-11));
    CHECK(id.v[i] == doctest::Approx(U.v[i]).epsilon(1e-11));
  }

  const EigenData eig = eigen_data(spec);
  // ||e^{A2 t}|| = e^{lambda_{N+1}^+ t}, t >= 0: exact norm and a sampled
  // maximization over random E2 states
  {
    const double t = 0.1;
    const double expect = std::exp(eig.mode(spec.N + 1).lam_p * t);
    CHECK(subspace_op_norm(spec, Subspace::E2, t) == doctest::Approx(expect).epsilon(1e-6));
    double best = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
      const auto Q = project_Q(random_state(spec.M, rng), spec);
      const double nq = norm_E(Q, spec);
      if (nq < 1e-12) continue;
      best = std::max(best, norm_E(semigroup_apply(Q, t, spec, 0.0), spec) / nq);
    }
    CHECK(best <= expect * (1.0 + 1e-9));
    // the e_{N+1}^+ direction attains the norm up to the 2x2 metric tilt
    const auto attain = eigvec_state(spec, spec.N + 1, true);
    CHECK(norm_E(semigroup_apply(attain, t, spec, 0.0), spec) / norm_E(attain, spec) >=
          0.9 * expect);
  }
  // ||e^{A1 t}|| = e^{lambda_N^+ t}, t <= 0
  {
    const double t = -0.1;
    const double expect = std::exp(eig.mode(spec.N).lam_p * t);
    CHECK(subspace_op_norm(spec, Subspace::E1, t) == doctest::Approx(expect).epsilon(1e-6));
    const auto e_top = eigvec_state(spec, spec.N, true);
    CHECK(norm_E(semigroup_apply(e_top, t, spec, 0.0), spec) / norm_E(e_top, spec) ==
          doctest::Approx(expect).epsilon(1e-9));
  }
  // ||e^{A_{-1} t}|| = e^{lambda_N^- t}, t >= 0 (tiny t to stay above underflow)
  {
    const double t = 1e-4;
    const double expect = std::exp(eig.mode(spec.N).lam_m * t);
    CHECK(subspace_op_norm(spec, Subspace::Em1, t) == doctest::Approx(expect).epsilon(1e-6));
  }

  // semigroup property with z-exponents adding
  const auto one = semigroup_apply(semigroup_apply(U, 0.02, spec, 0.3), 0.03, spec, 0.1);
  const auto two = semigroup_apply(U, 0.05, spec, 0.4);
  for (int i = 0; i < spec.M; ++i) {
    CHECK(one.u[i] == doctest::Approx(two.u[i]).epsilon(1e-10));
    CHECK(one.v[i] == doctest::Approx(two.v[i]).epsilon(1e-10));
  }

  // dichotomy certificate with K = 1 at sampled times
  for (double t : {0.01, 0.1, 1.0}) {
    CHECK(subspace_op_norm(spec, Subspace::E2, t) <=
          std::exp(eig.mode(spec.N + 1).lam_p * t) * (1.0 + 1e-9));
    CHECK(subspace_op_norm(spec, Subspace::E1, -t) <=
          std::exp(eig.mode(spec.N).lam_p * -t) * (1.0 + 1e-9));
  }
}

TEST_CASE("semigroup handles complex and defective modes") {
  // eps = 0.1: modes k >= 6 are complex pairs
  auto spec = make_spec(0.1, 8, 1, Nonlinearity::zero());
  std::mt19937_64 rng(6);
  const auto U = random_state(spec.M, rng);
  const auto one = semigroup_apply(semigroup_apply(U, 0.01, spec, 0.0), 0.02, spec, 0.0);
  const auto two = semigroup_apply(U, 0.03, spec, 0.0);
  for (int i = 0; i < spec.M; ++i) CHECK(one.v[i] == doctest::Approx(two.v[i]).epsilon(1e-9));

  // eps = 1/(2k) puts mode k exactly on the Jordan case
  auto specd = make_spec(0.125, 8, 1, Nonlinearity::zero());
  CHECK(eigen_data(specd).mode(4).defective);
  const auto Ud = random_state(specd.M, rng);
  const auto a = semigroup_apply(semigroup_apply(Ud, 0.05, specd, 0.0), 0.05, specd, 0.0);
  const auto b = semigroup_apply(Ud, 0.1, specd, 0.0);
  for (int i = 0; i < specd.M; ++i) CHECK(a.v[i] == doctest::Approx(b.v[i]).epsilon(1e-9));
}

TEST_CASE("apply_F: linear part, modal identity for affine f, Lipschitz bound") {
  // f == 0, z = 1 -> (delta phi, 0)
  {
    auto spec = make_spec(0.01, 8, 2, Nonlinearity::zero(), 0.5);
    StateE U(spec.M);
    const auto F = apply_F(U, 1.0, spec);
    CHECK(F.u[0] == doctest::Approx(0.5).epsilon(1e-14));
    for (int i = 1; i < spec.M; ++i) CHECK(F.u[i] == 0.0);
    CHECK(F.v.norm() == 0.0);
  }

  // affine f: collocation path equals the modal path
  {
    auto spec = make_spec(0.01, 32, 2, Nonlinearity::affine(0.7));
    std::mt19937_64 rng(7);
    std::normal_distribution<double> gauss;
    StateE U(spec.M);
    for (int i = 0; i < spec.M; ++i) U.u[i] = gauss(rng);
    const auto F = apply_F(U, 0.0, spec);
    const Eigen::VectorXd expect = (0.7 / (spec.epsilon * spec.epsilon)) * U.u;
    for (int i = 0; i < spec.M; ++i)
      CHECK(F.v[i] == doctest::Approx(expect[i]).epsilon(1e-8));
  }

  // Lipschitz certificate ||F(U1)-F(U2)||_E <= 3 lip_f ||U1-U2||_E for small eps
  {
    auto spec = make_spec(0.01, 16, 4, Nonlinearity::sine(1.0));
    CHECK(spec.epsilon <= epsilon_lip(spec.N));
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 100; ++trial) {
      std::normal_distribution<double> gauss;
      StateE U1(spec.M), U2(spec.M);
      for (int i = 0; i < spec.M; ++i) {
        U1.u[i] = gauss(rng); U1.v[i] = gauss(rng);
        U2.u[i] = gauss(rng); U2.v[i] = gauss(rng);
      }
      const auto F1 = apply_F(U1, 0.3, spec);
      const auto F2 = apply_F(U2, 0.3, spec);
      CHECK(norm_E(F1 - F2, spec) <=
            3.0 * spec.lip_f * norm_E(U1 - U2, spec) * (1.0 + 1e-9));
    }
  }

  // non-finite collocation values name the offending grid point
  {
    auto spec = make_spec(0.01, 8, 2,
                          Nonlinearity::custom([](double u) { return 1.0 / (u - u); }, 1.0));
    StateE U(spec.M);
    U.u[0] = 1.0;
    CHECK_THROWS_WITH_AS(static_cast<void>(apply_F(U, 0.0, spec)),
                         doctest::Contains("grid point"), std::runtime_error);
  }
}

TEST_CASE("semigroup rejects non-finite input") {
  auto spec = make_spec(0.01, 4, 1, Nonlinearity::zero());
  StateE U(spec.M);
  U.u[0] = std::nan("");
  CHECK_THROWS_AS(static_cast<void>(semigroup_apply(U, 0.1, spec, 0.0)), std::invalid_argument);
}
