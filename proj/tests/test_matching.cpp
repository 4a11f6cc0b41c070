#include <cmath>
#include <random>

#include "doctest.h"
#include "latmix/matching.hpp"

using namespace latmix;

namespace {

EAMPotential default_eam() { return EAMPotential(EAMParams{}); }

Coefficients random_coeffs(const BasisSpec& spec, std::mt19937_64& rng,
                           double amp) {
  Coefficients c;
  std::uniform_real_distribution<double> dist(-amp, amp);
  c.c.resize(spec.count());
  for (auto& v : c.c) v = dist(rng);
  return c;
}

// Composite potential V_ref + alpha * V_pert for the homogeneity check.
class ShiftedPotential : public SitePotential {
 public:
  ShiftedPotential(const SitePotential& base, const SitePotential& pert,
                   double alpha)
      : base_(&base), pert_(&pert), alpha_(alpha) {}
  std::string name() const override { return "shifted"; }
  double cutoff() const override {
    return std::max(base_->cutoff(), pert_->cutoff());
  }
  double site_energy(const StencilView& s) const override {
    return base_->site_energy(s) + alpha_ * pert_->site_energy(s);
  }
  void site_gradient(const StencilView& s,
                     std::vector<Vec>& grad) const override {
    base_->site_gradient(s, grad);
    std::vector<Vec> g2;
    pert_->site_gradient(s, g2);
    for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += alpha_ * g2[k];
  }

 private:
  const SitePotential* base_;
  const SitePotential* pert_;
  double alpha_;
};

}  // namespace

TEST_CASE("energy observations: analytic targets, weights, counts") {
  auto eam = default_eam();
  HomogeneousModel hom(LatticeSpec::triangular(), eam, 8.0);
  auto w = LossWeights::energy_defaults(2, false);
  auto set = gen_energy_obs(hom, 2, 2.5, std::log(2.0), w.W_E);

  const int n = static_cast<int>(set.support_E.size());
  CHECK(n == 18);
  // combinatorial count: 1 + n d + n(n+1)/2 d^2
  CHECK(set.count() == 1 + n * 2 + n * (n + 1) / 2 * 4);

  // j = 1 targets: analytic stencil gradient, FD cross-check
  std::vector<Vec> g0(hom.stencil().size(), Vec{}), grad;
  hom.gradient(g0, grad);
  int checked = 0;
  for (const auto& o : set.obs) {
    if (o.kind != ObsKind::EnergyDeriv || o.order != 1) continue;
    CHECK(o.target == grad[o.tuple[0]][o.comp[0]]);
    // centered-difference oracle
    auto gp = g0, gm = g0;
    gp[o.tuple[0]][o.comp[0]] += 1e-6;
    gm[o.tuple[0]][o.comp[0]] -= 1e-6;
    double fd = (hom.energy(gp) - hom.energy(gm)) / 2e-6;
    CHECK(o.target == doctest::Approx(fd).epsilon(1e-6).scale(1.0));
    // w1 = e^{-2 gamma} = 1/4 at gamma = ln 2 and |rho| = 1
    if (std::abs(norm(set.support_E[o.tuple[0]]) - 1.0) < 1e-12) {
      CHECK(o.w_inv == doctest::Approx(4.0).epsilon(1e-12));
      ++checked;
    }
    CHECK(o.W == 10.0);
  }
  CHECK(checked == 12);  // 6 unit-shell offsets x 2 components
}

TEST_CASE("force observations: two-path check, zeros kept, counts") {
  auto eam = default_eam();
  HomogeneousModel hom(LatticeSpec::triangular(), eam, 9.0);
  auto w = LossWeights::force_defaults(1, false);
  auto set = gen_force_obs(hom, 1, 6.0, 0.5, w.W_F);

  const int n = static_cast<int>(set.support_F.size());
  CHECK(set.count() == n * 4);
  CHECK(norm(set.support_F[0]) == 0.0);

  // two-path: FD of the analytic force
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> pick(0, set.count() - 1);
  const double h = 1e-6;
  for (int rep = 0; rep < 25; ++rep) {
    const auto& o = set.obs[pick(rng)];
    int site = hom.patch().find_site(set.support_F[o.tuple[0]]);
    REQUIRE(site >= 0);
    std::vector<Vec> wp(hom.patch().size(), Vec{});
    wp[site][o.comp[1]] = h;
    Vec fp = hom.force_at_origin(wp);
    wp[site][o.comp[1]] = -h;
    Vec fm = hom.force_at_origin(wp);
    double fd = (fp[o.comp[0]] - fm[o.comp[0]]) / (2 * h);
    CHECK(o.target == doctest::Approx(fd).epsilon(1e-5).scale(1.0));
  }

  // force constants vanish beyond 2 R_cut but the observations are kept
  int zeros = 0;
  for (const auto& o : set.obs)
    if (norm(set.support_F[o.tuple[0]]) > 2.0 * eam.cutoff() && o.target == 0.0)
      ++zeros;
  CHECK(zeros > 0);

  CHECK(LossWeights::force_defaults(1, false).W_F ==
        std::vector<double>{1, 100});
}

TEST_CASE("virial observations: dedup count, relaxed stress, scaling") {
  auto eam = default_eam();
  HomogeneousModel hom(LatticeSpec::triangular(), eam, 8.0);

  auto v1 = gen_virial_obs(hom, 1, 100.0);  // order-2 tensor, dd = 4
  CHECK(v1.count() == 10);  // multisets of size 2 from 4 slots
  auto v2 = gen_virial_obs(hom, 2, 100.0);
  CHECK(v2.count() == 20);  // multisets of size 3 from 4 slots
  double mult_sum = 0.0;
  for (const auto& o : v1.obs) mult_sum += o.mult;
  CHECK(mult_sum == doctest::Approx(16.0));  // all 4^2 ordered tuples

  // doubling the model energy doubles every target
  EAMParams p2;
  p2.A_p *= 2.0;
  p2.C_e *= 2.0;
  EAMPotential eam2(p2);
  HomogeneousModel hom2(LatticeSpec::triangular(), eam2, 8.0);
  auto v1b = gen_virial_obs(hom2, 1, 100.0);
  for (int i = 0; i < v1.count(); ++i)
    CHECK(v1b.obs[i].target ==
          doctest::Approx(2.0 * v1.obs[i].target).epsilon(1e-8).scale(1e-10));
}

TEST_CASE("match_errors: identical models, exact Taylor baseline") {
  auto eam = default_eam();
  HomogeneousModel hom(LatticeSpec::triangular(), eam, 8.0);

  MatchSpec ms;
  ms.K_E = 2;
  auto self = match_errors(hom, hom, ms);
  CHECK(self.get(ObsKind::EnergyDeriv, 1).eps == 0.0);
  CHECK(self.get(ObsKind::EnergyDeriv, 2).eps == 0.0);

  // exact-matching baseline: MM = T_K V^h
  auto T2 = taylor_coefficients(hom, 2, 2.5);
  HomogeneousModel homT(LatticeSpec::triangular(), T2, 8.0);
  auto errs = match_errors(hom, homT, ms);
  CHECK(errs.get(ObsKind::EnergyDeriv, 1).eps < 1e-6);
  CHECK(errs.get(ObsKind::EnergyDeriv, 2).eps < 1e-6);

  // absolute homogeneity of the metrics
  std::mt19937_64 rng(11);
  BasisSpec bs;
  bs.k_max_pair = 4;
  bs.k_max_trip = 2;
  bs.l_max = 2;
  auto cp = random_coeffs(bs, rng, 0.01);
  MlipPotential pert(bs, cp);
  ShiftedPotential mm1(eam, pert, 1.0), mm3(eam, pert, -3.0);
  HomogeneousModel h1(LatticeSpec::triangular(), mm1, 8.0);
  HomogeneousModel h3(LatticeSpec::triangular(), mm3, 8.0);
  auto e1 = match_errors(hom, h1, ms);
  auto e3 = match_errors(hom, h3, ms);
  for (int j = 1; j <= 2; ++j)
    CHECK(e3.get(ObsKind::EnergyDeriv, j).eps ==
          doctest::Approx(3.0 * e1.get(ObsKind::EnergyDeriv, j).eps)
              .epsilon(1e-6));

  ObservationSet empty;
  CHECK_THROWS_AS(match_errors_sets(empty, empty), std::invalid_argument);
}

TEST_CASE("observation rows: consistency with assembled potentials") {
  LatticeSpec lat = LatticeSpec::triangular();
  BasisSpec bs;
  bs.k_max_pair = 5;
  bs.k_max_trip = 2;
  bs.l_max = 2;
  MlipHomogeneous mh(lat, bs, 8.0);
  auto eam = default_eam();
  HomogeneousModel hom(lat, eam, 8.0);

  std::vector<double> ones(4, 1.0);
  auto setE = gen_energy_obs(hom, 2, 2.5, 0.5, ones);
  auto setF = gen_force_obs(hom, 1, 5.0, 0.5, ones);
  auto setV = gen_virial_obs(hom, 2, 1.0);
  ObservationSet all;
  all.append(setE);
  all.append(setF);
  all.append(setV);

  Eigen::MatrixXd R = observation_rows(mh, all);

  // one-hot delta^0 row reproduces the homogeneous site energy
  std::mt19937_64 rng(17);
  for (int rep = 0; rep < 3; ++rep) {
    auto c = random_coeffs(bs, rng, 0.3);
    MlipPotential m(bs, c);
    HomogeneousModel hm(lat, m, 8.0);
    Eigen::VectorXd cv = Eigen::Map<Eigen::VectorXd>(c.c.data(), c.c.size());

    // rows applied to c equal the extracted derivatives of V^ACE(.; c)
    auto mE = gen_energy_obs(hm, 2, 2.5, 0.5, ones);
    auto mF = gen_force_obs(hm, 1, 5.0, 0.5, ones);
    auto mV = gen_virial_obs(hm, 2, 1.0);
    ObservationSet mall;
    mall.append(mE);
    mall.append(mF);
    mall.append(mV);
    Eigen::VectorXd pred = R * cv;
    double scale = 0.0;
    for (int i = 0; i < mall.count(); ++i)
      scale = std::max(scale, std::abs(mall.obs[i].target));
    // both sides are linear in c, so they agree up to the FD roundoff
    // floor (the order-3 stencil divides rounding noise by (2h)^3)
    for (int i = 0; i < mall.count(); ++i)
      CHECK(std::abs(pred(i) - mall.obs[i].target) < 1e-6 * scale);
  }

  // rows vanish for tuples beyond the basis cutoff
  auto wide = gen_energy_obs(hom, 2, 4.0, 0.5, ones);
  Eigen::MatrixXd Rw = observation_rows(mh, wide);
  int outside = 0;
  for (int i = 0; i < wide.count(); ++i) {
    bool far = false;
    for (int t : wide.obs[i].tuple)
      if (norm(wide.support_E[t]) > bs.R_cut) far = true;
    if (far) {
      CHECK(Rw.row(i).norm() == 0.0);
      ++outside;
    }
  }
  CHECK(outside > 0);

  // observation_row agrees with the batch builder
  Eigen::VectorXd r0 = observation_row(mh, all, 0);
  CHECK((r0 - R.row(0).transpose()).norm() == 0.0);
}

TEST_CASE("assemble_and_fit: self-consistency, truncation, quadratic loss") {
  LatticeSpec lat = LatticeSpec::triangular();
  BasisSpec bs;
  bs.k_max_pair = 5;
  bs.k_max_trip = 2;
  bs.l_max = 2;
  MlipHomogeneous mh(lat, bs, 8.0);

  std::mt19937_64 rng(23);
  auto cstar = random_coeffs(bs, rng, 0.2);
  MlipPotential target(bs, cstar);
  HomogeneousModel homT(lat, target, 8.0);

  auto w = LossWeights::energy_defaults(2, false);
  auto set = gen_energy_obs(homT, 2, bs.R_cut, 0.5, w.W_E);
  auto fit = assemble_and_fit(set, mh, 1e-10);
  CHECK(fit.loss < 1e-10);
  CHECK(fit.loss <= fit.loss_at_zero);
  CHECK(fit.n_basis == bs.count());
  CHECK(fit.n_obs == set.count());

  // full truncation: zero coefficients, loss = weighted target norm
  auto fit0 = assemble_and_fit(set, mh, 1.0);
  double cn = 0.0;
  for (double v : fit0.coeffs.c) cn += std::abs(v);
  CHECK(fit0.loss == doctest::Approx(fit0.loss_at_zero));
  CHECK(cn == 0.0);

  // loss is exactly quadratic along random coefficient lines
  auto eam = default_eam();
  HomogeneousModel hom(lat, eam, 8.0);
  auto eset = gen_energy_obs(hom, 2, bs.R_cut, 0.5, w.W_E);
  Eigen::MatrixXd R = observation_rows(mh, eset);
  Eigen::VectorXd y(eset.count()), s(eset.count());
  for (int i = 0; i < eset.count(); ++i) {
    y(i) = eset.obs[i].target;
    s(i) = std::sqrt(eset.obs[i].W * eset.obs[i].w_inv * eset.obs[i].mult);
  }
  auto loss_of = [&](const Eigen::VectorXd& c) {
    return (s.asDiagonal() * (R * c - y)).squaredNorm();
  };
  for (int rep = 0; rep < 5; ++rep) {
    auto dc = random_coeffs(bs, rng, 1.0);
    Eigen::VectorXd dir =
        Eigen::Map<Eigen::VectorXd>(dc.c.data(), dc.c.size());
    double L0 = loss_of(0.0 * dir), L1 = loss_of(dir), L2 = loss_of(2.0 * dir);
    double L3 = loss_of(3.0 * dir);
    CHECK(L3 == doctest::Approx(3 * L2 - 3 * L1 + L0)
                    .epsilon(1e-9)
                    .scale(std::abs(L3) + 1.0));
  }

  // monotone improvement under basis enlargement
  auto fitA = assemble_and_fit(eset, mh, 1e-12);
  BasisSpec big = bs;
  big.k_max_trip = 3;
  big.l_max = 3;
  MlipHomogeneous mhb(lat, big, 8.0);
  auto fitB = assemble_and_fit(eset, mhb, 1e-12);
  CHECK(fitB.loss <= fitA.loss * (1.0 + 1e-10) + 1e-12);
}
