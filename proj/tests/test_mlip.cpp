#include <cmath>
#include <random>

#include "doctest.h"
#include "latmix/mlip.hpp"

using namespace latmix;

namespace {

StencilView random_stencil(const BasisSpec& spec, std::mt19937_64& rng,
                           double amp) {
  auto offs = lattice_offsets_within(LatticeSpec::triangular(), spec.R_cut);
  StencilView sv;
  sv.rho = offs;
  sv.du.resize(offs.size());
  std::uniform_real_distribution<double> dist(-amp, amp);
  for (auto& v : sv.du) v = Vec{dist(rng), dist(rng)};
  return sv;
}

Coefficients random_coeffs(const BasisSpec& spec, std::mt19937_64& rng) {
  Coefficients c;
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  c.c.resize(spec.count());
  for (auto& v : c.c) v = dist(rng);
  return c;
}

}  // namespace

TEST_CASE("radial basis: cutoff, double root, recurrence oracle") {
  BasisSpec spec;
  std::vector<double> P, dP;

  radial_basis(spec, spec.R_cut + 0.1, P, &dP);
  for (double v : P) CHECK(v == 0.0);
  radial_basis(spec, spec.R_cut, P, &dP);
  for (double v : P) CHECK(v == 0.0);

  // double root at the cutoff: value O(eps^2), slope O(eps)
  const double eps = 1e-6;
  radial_basis(spec, spec.R_cut - eps, P, &dP);
  for (double v : P) CHECK(std::abs(v) < 4.1 * eps * eps);
  for (double v : dP) CHECK(std::abs(v) < 4.1 * eps);

  // Chebyshev oracle: closed forms T0..T4 at ten radii.
  auto T_oracle = [](int k, double x) {
    switch (k) {
      case 0: return 1.0;
      case 1: return x;
      case 2: return 2 * x * x - 1;
      case 3: return 4 * x * x * x - 3 * x;
      default: return 8 * x * x * x * x - 8 * x * x + 1;
    }
  };
  for (int i = 0; i < 10; ++i) {
    double r = 0.8 + 0.17 * i;
    radial_basis(spec, r, P);
    double x = 2.0 * (r - spec.r_in) / (spec.R_cut - spec.r_in) - 1.0;
    double env = (spec.R_cut - r) * (spec.R_cut - r);
    for (int k = 0; k <= 4; ++k)
      CHECK(P[k] == doctest::Approx(T_oracle(k, x) * env).epsilon(1e-14));
  }

  CHECK_THROWS_AS(radial_basis(spec, 0.0, P), std::invalid_argument);
}

TEST_CASE("descriptors: empty stencil, invariances, channel path") {
  BasisSpec spec;
  StencilView empty;
  std::vector<double> B;
  descriptors(spec, empty, B);
  CHECK(static_cast<int>(B.size()) == spec.count());
  for (double v : B) CHECK(v == 0.0);

  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 25; ++rep) {
    auto sv = random_stencil(spec, rng, 0.1);
    std::vector<double> B0, Bref;
    descriptors(spec, sv, B0);
    descriptors_ref(spec, sv, Bref);
    double scale = 1e-30;
    for (double v : B0) scale = std::max(scale, std::abs(v));
    // channel-sum path against the double-loop definition
    for (std::size_t f = 0; f < B0.size(); ++f)
      CHECK(std::abs(B0[f] - Bref[f]) < 1e-12 * scale);

    // rotation invariance
    std::uniform_real_distribution<double> dist(-3.0, 3.0);
    const double th = dist(rng);
    const double c = std::cos(th), s = std::sin(th);
    StencilView rot = sv;
    for (int k = 0; k < sv.size(); ++k) {
      Vec x = sv.rho[k] + sv.du[k];
      rot.du[k] = Vec{c * x[0] - s * x[1], s * x[0] + c * x[1]} - rot.rho[k];
    }
    std::vector<double> Br;
    descriptors(spec, rot, Br);
    for (std::size_t f = 0; f < B0.size(); ++f)
      CHECK(std::abs(B0[f] - Br[f]) < 1e-12 * std::max(1.0, scale));

    // reflection invariance
    StencilView refl = sv;
    for (int k = 0; k < sv.size(); ++k) {
      Vec x = sv.rho[k] + sv.du[k];
      refl.du[k] = Vec{x[0], -x[1]} - refl.rho[k];
    }
    std::vector<double> Bf;
    descriptors(spec, refl, Bf);
    for (std::size_t f = 0; f < B0.size(); ++f)
      CHECK(std::abs(B0[f] - Bf[f]) < 1e-12 * std::max(1.0, scale));

    // permutation invariance is bitwise
    StencilView perm;
    std::vector<int> idx(sv.size());
    for (int k = 0; k < sv.size(); ++k) idx[k] = k;
    std::shuffle(idx.begin(), idx.end(), rng);
    for (int k : idx) {
      perm.rho.push_back(sv.rho[k]);
      perm.du.push_back(sv.du[k]);
    }
    std::vector<double> Bp;
    descriptors(spec, perm, Bp);
    for (std::size_t f = 0; f < B0.size(); ++f) CHECK(B0[f] == Bp[f]);
  }

  // coincident atoms
  StencilView bad;
  bad.rho = {Vec{1.0, 0.0}};
  bad.du = {Vec{-1.0 + 1e-12, 0.0}};
  CHECK_THROWS_AS(descriptors(spec, bad, B), std::runtime_error);
}

TEST_CASE("site energy: linearity and one-hot consistency") {
  BasisSpec spec;
  std::mt19937_64 rng(9);
  auto sv = random_stencil(spec, rng, 0.08);

  Coefficients zero;
  zero.c.assign(spec.count(), 0.0);
  CHECK(MlipPotential(spec, zero).site_energy(sv) == 0.0);

  std::vector<double> B;
  descriptors(spec, sv, B);
  for (int f : {0, 3, spec.count() - 1}) {
    Coefficients onehot = zero;
    onehot.c[f] = 1.0;
    CHECK(MlipPotential(spec, onehot).site_energy(sv) == B[f]);
  }

  auto c1 = random_coeffs(spec, rng), c2 = random_coeffs(spec, rng);
  const double al = 0.7, be = -1.3;
  Coefficients mix;
  mix.c.resize(spec.count());
  for (int f = 0; f < spec.count(); ++f)
    mix.c[f] = al * c1.c[f] + be * c2.c[f];
  double e1 = MlipPotential(spec, c1).site_energy(sv);
  double e2 = MlipPotential(spec, c2).site_energy(sv);
  double em = MlipPotential(spec, mix).site_energy(sv);
  CHECK(em == doctest::Approx(al * e1 + be * e2).epsilon(1e-12));

  Coefficients wrong;
  wrong.c.assign(spec.count() + 1, 0.0);
  CHECK_THROWS_AS(MlipPotential(spec, wrong), std::invalid_argument);
}

TEST_CASE("analytic descriptor jacobian vs finite differences") {
  BasisSpec spec;
  std::mt19937_64 rng(7);
  auto sv = random_stencil(spec, rng, 0.06);
  std::vector<double> B;
  std::vector<std::vector<Vec>> J;
  descriptor_jacobian(spec, sv, B, J);

  const double h = 1e-6;
  std::uniform_int_distribution<int> pickf(0, spec.count() - 1);
  for (int rep = 0; rep < 40; ++rep) {
    int f = pickf(rng);
    int k = std::uniform_int_distribution<int>(0, sv.size() - 1)(rng);
    int j = std::uniform_int_distribution<int>(0, 1)(rng);
    StencilView p = sv, m = sv;
    p.du[k][j] += h;
    m.du[k][j] -= h;
    std::vector<double> Bp, Bm;
    descriptors(spec, p, Bp);
    descriptors(spec, m, Bm);
    double fd = (Bp[f] - Bm[f]) / (2 * h);
    CHECK(J[f][k][j] == doctest::Approx(fd).epsilon(1e-6).scale(1.0));
  }
}

TEST_CASE("mlip forces: zero coefficients, FD consistency") {
  BasisSpec spec;
  std::mt19937_64 rng(21);
  auto cfg = build_lattice(LatticeSpec::triangular(), 4.0);
  auto nt = NeighborTable::build(cfg, spec.R_cut + 1e-9);

  Coefficients zero;
  zero.c.assign(spec.count(), 0.0);
  MlipPotential mz(spec, zero);
  DisplacementField u(cfg);
  std::uniform_real_distribution<double> dist(-0.03, 0.03);
  for (auto& x : u.u) x = Vec{dist(rng), dist(rng)};
  std::vector<Vec> F;
  forces(mz, cfg, nt, nullptr, u, F);
  for (const auto& f : F) CHECK(norm(f) == 0.0);

  auto c = random_coeffs(spec, rng);
  for (auto& v : c.c) v *= 0.05;
  MlipPotential m(spec, c);
  forces(m, cfg, nt, nullptr, u, F);
  double fscale = 1e-30;
  for (const auto& f : F) fscale = std::max(fscale, norm(f));
  const double h = 1e-5;
  double max_rel = 0.0;
  for (int s = 0; s < cfg.size(); s += 5)
    for (int j = 0; j < 2; ++j) {
      auto up = u, um = u;
      up.u[s][j] += h;
      um.u[s][j] -= h;
      double fd = -(energy_difference(m, cfg, nt, nullptr, up) -
                    energy_difference(m, cfg, nt, nullptr, um)) /
                  (2 * h);
      max_rel = std::max(max_rel, std::abs(fd - F[s][j]) / fscale);
    }
  CHECK(max_rel < 1e-8);
}

TEST_CASE("smooth cutoff: neighbor crossing R_cut") {
  BasisSpec spec;
  std::mt19937_64 rng(33);
  auto sv = random_stencil(spec, rng, 0.02);
  // add a probe neighbor just inside / outside the cutoff
  auto with_probe = [&](double r) {
    StencilView s = sv;
    s.rho.push_back(Vec{2.0, 0.0});
    s.du.push_back(Vec{r - 2.0, 0.0});
    return s;
  };
  auto c = random_coeffs(spec, rng);
  MlipPotential m(spec, c);
  double ein = m.site_energy(with_probe(spec.R_cut - 1e-6));
  double eout = m.site_energy(with_probe(spec.R_cut + 1e-6));
  CHECK(std::abs(ein - eout) < 1e-8);

  // The (R_cut - r)^2 envelope gives an O(eps^2) energy jump and O(eps^2)
  // force jumps on every atom except the crossing probe itself, whose own
  // gradient component is O(eps) (the envelope derivative has a single
  // root at the cutoff).
  std::vector<Vec> gin, gout;
  auto si = with_probe(spec.R_cut - 1e-6);
  auto so = with_probe(spec.R_cut + 1e-6);
  m.site_gradient(si, gin);
  m.site_gradient(so, gout);
  const std::size_t probe = gin.size() - 1;
  for (std::size_t k = 0; k + 1 < gin.size(); ++k)
    CHECK(norm(gin[k] - gout[k]) < 1e-8);
  CHECK(norm(gin[probe] - gout[probe]) < 1e-3);
}

TEST_CASE("per-basis homogeneous force functional") {
  BasisSpec spec;
  LatticeSpec lat = LatticeSpec::triangular();
  MlipHomogeneous mh(lat, spec, 6.5);

  // Zero displacements: per-basis forces vanish by point symmetry.
  std::vector<Vec> w(mh.patch().size(), Vec{});
  Eigen::MatrixXd F0 = mh.force_at_origin(w);
  CHECK(F0.cwiseAbs().maxCoeff() < 1e-12);

  // Weighted per-basis forces equal the force of the assembled potential.
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> dist(-0.04, 0.04);
  for (auto& x : w) x = Vec{dist(rng), dist(rng)};
  Eigen::MatrixXd FB = mh.force_at_origin(w);

  auto c = random_coeffs(spec, rng);
  MlipPotential m(spec, c);
  HomogeneousModel hom(lat, m, 6.5);
  Vec f = hom.force_at_origin(w);
  Eigen::VectorXd cv =
      Eigen::Map<Eigen::VectorXd>(c.c.data(), c.c.size());
  Eigen::VectorXd fc = FB.transpose() * cv;
  CHECK(fc(0) == doctest::Approx(f[0]).epsilon(1e-10).scale(1.0));
  CHECK(fc(1) == doctest::Approx(f[1]).epsilon(1e-10).scale(1.0));

  // Per-basis Cauchy-Born density matches the assembled potential's.
  Mat F;
  F(0, 0) = 1.013;
  F(0, 1) = -0.004;
  F(1, 1) = 0.991;
  Eigen::VectorXd wb = mh.cb_density(F);
  double wtot = cauchy_born_density(hom, F);
  CHECK(wb.dot(cv) == doctest::Approx(wtot).epsilon(1e-11).scale(1.0));
}
