#include <cmath>
#include <random>

#include "doctest.h"
#include "latmix/coupling.hpp"
#include "latmix/matching.hpp"

using namespace latmix;

namespace {

EAMPotential default_eam() { return EAMPotential(EAMParams{}); }

DisplacementField random_free_field(const ReferenceConfig& cfg,
                                    std::mt19937_64& rng, double amp,
                                    double R_free) {
  DisplacementField u(cfg);
  std::uniform_real_distribution<double> dist(-amp, amp);
  for (int s = 0; s < cfg.size(); ++s) {
    if (norm(cfg.sites[s]) > R_free) {
      u.frozen[s] = 1;
      continue;
    }
    u.u[s] = Vec{dist(rng), dist(rng)};
  }
  return u;
}

}  // namespace

TEST_CASE("decompose: counts, buffer subset, ordering errors") {
  auto cfg = build_lattice(LatticeSpec::triangular(), 16.0);
  auto vac = apply_vacancy(cfg, Vec{0.0, 0.0});
  auto dec = decompose(vac, Vec{0.0, 0.0}, 4.0, 2.0, 12.0);

  int qm = 0, mm = 0, ff = 0, buf = 0;
  for (int s = 0; s < vac.size(); ++s) {
    double r = norm(vac.sites[s]);
    if (r <= 4.0 + 1e-9)
      ++qm;
    else if (r <= 12.0 + 1e-9) {
      ++mm;
      if (r <= 6.0 + 1e-9) ++buf;
    } else
      ++ff;
  }
  CHECK(dec.n_qm == qm);
  CHECK(dec.n_mm == mm);
  CHECK(dec.n_ff == ff);
  CHECK(dec.n_buf == buf);
  for (int s = 0; s < vac.size(); ++s)
    if (dec.buffer[s]) CHECK(dec.region[s] == Region::MM);

  CHECK_THROWS_AS(decompose(vac, Vec{0.0, 0.0}, 17.0, 2.0, 19.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(decompose(vac, Vec{0.0, 0.0}, 8.0, 2.0, 9.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(decompose(vac, Vec{0.0, 0.0}, 0.5, 2.0, 12.0),
                  std::invalid_argument);
}

TEST_CASE("interpolation onto the homogeneous lattice") {
  auto hom = build_lattice(LatticeSpec::triangular(), 8.0);
  Interpolant ident(hom, hom);
  std::mt19937_64 rng(3);
  auto u = random_free_field(hom, rng, 0.3, 9.0);
  auto v = ident.apply(u);
  for (int s = 0; s < hom.size(); ++s) CHECK(norm(v.u[s] - u.u[s]) == 0.0);

  auto vac = apply_vacancy(hom, Vec{0.0, 0.0});
  Interpolant ih(vac, hom);
  DisplacementField c(vac);
  for (auto& x : c.u) x = Vec{0.4, -1.1};
  auto vc = ih.apply(c);
  for (int s = 0; s < hom.size(); ++s)
    CHECK(norm(vc.u[s] - Vec{0.4, -1.1}) < 1e-15);

  // empirical stability constant over random fields
  double cstar = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    auto ur = random_free_field(vac, rng, 0.5, 9.0);
    auto uh = ih.apply(ur);
    double a = stencil_norm_nn_global(uh);
    double b = stencil_norm_nn_global(ur);
    if (b > 0) cstar = std::max(cstar, a / b);
  }
  CHECK(cstar < 2.0);
  CHECK(cstar >= 1.0 - 1e-12);
}

TEST_CASE("hybrid energy: zero field, degenerate decomposition, FD gradient") {
  auto eam = default_eam();
  HomogeneousModel hom(LatticeSpec::triangular(), eam, 8.0);
  auto T2 = taylor_coefficients(hom, 2, 2.5);

  auto cfg0 = build_lattice(LatticeSpec::triangular(), 14.0);
  auto vac = apply_vacancy(cfg0, Vec{0.0, 0.0});

  HybridBuild hb;
  hb.config = &vac;
  hb.Vref = &eam;
  hb.Vmm = &T2;
  hb.R_QM = 4.0;
  hb.buf_width = 3.0;
  hb.R_MM = 11.0;
  HybridModel model(hb);

  DisplacementField zero(vac);
  CHECK(model.hybrid_energy(zero) == doctest::Approx(0.0).scale(1.0));

  // degenerate decomposition: QM u BUF covers the whole domain and the MM
  // region only sees frozen displacements
  HybridBuild hb2 = hb;
  hb2.R_QM = 13.2;
  hb2.buf_width = 0.8;
  hb2.R_MM = 14.0;
  HybridModel degen(hb2);
  std::mt19937_64 rng(7);
  auto u = random_free_field(vac, rng, 0.03, 10.0);
  // same slack capture as the hybrid: pairs may deform into range
  auto nt = NeighborTable::build(vac, eam.cutoff() + 0.6);
  CHECK(degen.hybrid_energy(u) ==
        doctest::Approx(energy_difference(eam, vac, nt, nullptr, u))
            .epsilon(1e-10));

  // analytic gradient vs centered differences
  std::vector<Vec> g;
  model.hybrid_energy_gradient(u, g);
  const double h = 1e-6;
  double gscale = 0.0;
  for (const auto& v : g) gscale = std::max(gscale, norm(v));
  for (int s = 0; s < vac.size(); s += 23)
    for (int j = 0; j < 2; ++j) {
      auto up = u, um = u;
      up.u[s][j] += h;
      um.u[s][j] -= h;
      double fd =
          (model.hybrid_energy(up) - model.hybrid_energy(um)) / (2 * h);
      CHECK(std::abs(fd - g[s][j]) < 1e-6 * std::max(gscale, 1e-3));
    }
}

TEST_CASE("ghost forces: exact Taylor baseline and GFC dead load") {
  auto eam = default_eam();
  HomogeneousModel hom(LatticeSpec::triangular(), eam, 8.0);
  auto T2 = taylor_coefficients(hom, 2, 2.5);

  auto cfg = build_lattice(LatticeSpec::triangular(), 14.0);

  HybridBuild hb;
  hb.config = &cfg;
  hb.Vref = &eam;
  hb.Vmm = &T2;
  hb.R_QM = 4.0;
  hb.buf_width = 4.0;
  hb.R_MM = 11.0;
  HybridModel model(hb);

  // exact-matching MM: ghost forces vanish on the free region (the frozen
  // rim beyond R_MM trivially miscancels and is excluded)
  auto gf = model.ghost_force_field();
  double gmax = 0.0;
  for (int s = 0; s < cfg.size(); ++s)
    if (norm(cfg.sites[s]) <= hb.R_MM) gmax = std::max(gmax, norm(gf[s]));
  CHECK(gmax < 1e-4);
  CHECK(gmax < 1e-10);  // analytic first-order tables: exact cancellation

  DisplacementField zero(cfg);
  CHECK(model.hybrid_energy_gfc(zero) == doctest::Approx(0.0).scale(1.0));

  // dead load cancels exactly where beta = 1
  std::vector<Vec> gg;
  model.hybrid_energy_gfc_gradient(zero, gg);
  for (int s = 0; s < cfg.size(); ++s)
    if (model.beta()[s] == 1.0) CHECK(norm(gg[s]) == 0.0);

  // imperfectly matched MM (perturbed MLIP coefficients): interface-local
  // ghost forces
  BasisSpec bs;
  MlipHomogeneous mh(LatticeSpec::triangular(), bs, 8.0);
  auto w = LossWeights::energy_defaults(2, false);
  auto set = gen_energy_obs(hom, 2, bs.R_cut, 0.5, w.W_E);
  auto fit = assemble_and_fit(set, mh, 1e-5);
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Coefficients pert = fit.coeffs;
  for (auto& v : pert.c) v += 0.02 * dist(rng) * std::abs(v);
  MlipPotential mlip(bs, pert);
  HybridBuild hbm = hb;
  hbm.Vmm = &mlip;
  HybridModel mm(hbm);
  auto gfm = mm.ghost_force_field();
  double inner = 0.0, interface = 0.0, outer = 0.0;
  for (int s = 0; s < cfg.size(); ++s) {
    double r = norm(cfg.sites[s]);
    double f = norm(gfm[s]);
    if (std::abs(r - hb.R_QM) <= bs.R_cut)
      interface = std::max(interface, f);
    else if (r > hb.R_QM + 3.0 * bs.R_cut && r < hb.R_MM - 2.0 * bs.R_cut)
      outer = std::max(outer, f);
    else if (r < hb.R_QM - bs.R_cut)
      inner = std::max(inner, f);
  }
  CHECK(interface > 1e-6);
  CHECK(outer < 1e-8);
  CHECK(inner < 1e-8);
}

TEST_CASE("hybrid forces: interface consistency and non-conservativity") {
  auto eam = default_eam();
  HomogeneousModel hom(LatticeSpec::triangular(), eam, 12.0);
  auto TF1 = taylor_force_coefficients(hom, 1, 5.2);
  TaylorForceLaw law(TF1);

  auto cfg = build_lattice(LatticeSpec::triangular(), 14.0);
  HybridBuild hb;
  hb.config = &cfg;
  hb.Vref = &eam;
  hb.Fmm = &law;
  hb.R_QM = 4.0;
  hb.buf_width = 6.0;  // >= 2 R_cut kills the subsystem free-surface tail
  hb.R_MM = 12.0;
  HybridModel model(hb);

  DisplacementField zero(cfg);
  std::vector<Vec> F;
  model.hybrid_forces(zero, F);
  double fmax = 0.0;
  for (const auto& v : F) fmax = std::max(fmax, norm(v));
  CHECK(fmax < 1e-10);

  // a narrow buffer leaves a genuine restricted-subsystem force tail
  HybridBuild hbn = hb;
  hbn.buf_width = 3.0;
  HybridModel narrow(hbn);
  narrow.hybrid_forces(zero, F);
  double tail = 0.0;
  for (const auto& v : F) tail = std::max(tail, norm(v));
  CHECK(tail > 1e-6);
  CHECK(tail < 2e-2);

  // deep-MM forces do not depend on the decomposition radii
  std::mt19937_64 rng(11);
  auto u = random_free_field(cfg, rng, 0.02, 11.0);
  std::vector<Vec> F1;
  model.hybrid_forces(u, F1);
  HybridBuild hb2 = hb;
  hb2.R_QM = 5.0;
  HybridModel model2(hb2);
  std::vector<Vec> F2;
  model2.hybrid_forces(u, F2);
  int deep = 0;
  for (int s = 0; s < cfg.size(); ++s) {
    double r = norm(cfg.sites[s]);
    if (r > 5.0 + 5.2 && r <= hb.R_MM) {
      CHECK(norm(F1[s] - F2[s]) < 1e-12);
      ++deep;
    }
  }
  CHECK(deep > 0);

  // curl test: <dF v, w> != <dF w, v> for the mixed field
  auto vdir = random_free_field(cfg, rng, 1.0, 11.0);
  auto wdir = random_free_field(cfg, rng, 1.0, 11.0);
  const double h = 1e-6;
  auto dirderiv = [&](const DisplacementField& base,
                      const DisplacementField& dir) {
    auto up = base, um = base;
    for (int s = 0; s < cfg.size(); ++s) {
      up.u[s] += h * dir.u[s];
      um.u[s] -= h * dir.u[s];
    }
    std::vector<Vec> fp, fm2;
    model.hybrid_forces(up, fp);
    model.hybrid_forces(um, fm2);
    std::vector<Vec> out(cfg.size());
    for (int s = 0; s < cfg.size(); ++s)
      out[s] = (1.0 / (2 * h)) * (fp[s] - fm2[s]);
    return out;
  };
  auto dFv = dirderiv(u, vdir);
  auto dFw = dirderiv(u, wdir);
  double a = 0.0, b = 0.0;
  for (int s = 0; s < cfg.size(); ++s) {
    a += dot(dFv[s], wdir.u[s]);
    b += dot(dFw[s], vdir.u[s]);
  }
  CHECK(std::abs(a - b) > 1e-8);  // non-conservative by construction
}

TEST_CASE("gfc gradient: translation of free sites leaves interior alone") {
  auto eam = default_eam();
  HomogeneousModel hom(LatticeSpec::triangular(), eam, 8.0);
  auto T2 = taylor_coefficients(hom, 2, 2.5);
  auto cfg = build_lattice(LatticeSpec::triangular(), 14.0);
  auto vac = apply_vacancy(cfg, Vec{0.0, 0.0});

  HybridBuild hb;
  hb.config = &vac;
  hb.Vref = &eam;
  hb.Vmm = &T2;
  hb.R_QM = 4.0;
  hb.buf_width = 3.0;
  hb.R_MM = 11.0;
  HybridModel model(hb);

  std::mt19937_64 rng(5);
  auto u = random_free_field(vac, rng, 0.02, 11.0);
  auto u2 = u;
  for (int s = 0; s < vac.size(); ++s)
    if (!u.frozen[s]) u2.u[s] += Vec{0.015, -0.007};

  std::vector<Vec> g1, g2;
  model.hybrid_energy_gfc_gradient(u, g1);
  model.hybrid_energy_gfc_gradient(u2, g2);
  for (int s = 0; s < vac.size(); ++s)
    if (norm(vac.sites[s]) < 11.0 - 2.0 * eam.cutoff() - 5.2)
      CHECK(norm(g1[s] - g2[s]) < 1e-11);
}

TEST_CASE("bulk mlip force assembly matches the per-site force law") {
  auto eam = default_eam();
  HomogeneousModel hom(LatticeSpec::triangular(), eam, 12.0);
  LatticeSpec lat = LatticeSpec::triangular();
  BasisSpec bs;
  bs.k_max_pair = 4;
  bs.k_max_trip = 2;
  bs.l_max = 2;
  MlipHomogeneous mh(lat, bs, 8.0);
  std::vector<double> W = {1, 100};
  auto set = gen_force_obs(hom, 1, 5.0, 0.5, W);
  auto fit = assemble_and_fit(set, mh, 1e-5);
  MlipPotential mlip(bs, fit.coeffs);
  PotentialForceLaw law(lat, mlip);

  auto cfg = build_lattice(lat, 16.0);
  auto vac = apply_vacancy(cfg, Vec{0.0, 0.0});
  HybridBuild hb;
  hb.config = &vac;
  hb.Vref = &eam;
  hb.Fmm = &law;
  hb.R_QM = 4.0;
  hb.buf_width = 6.0;
  hb.R_MM = 13.0;
  HybridModel model(hb);

  std::mt19937_64 rng(31);
  auto u = random_free_field(vac, rng, 0.02, 13.0);
  std::vector<Vec> F;
  model.hybrid_forces(u, F);

  // independent per-site evaluation through the force-law interface
  Interpolant ih(vac, model.homogeneous());
  auto uh = ih.apply(u);
  const auto& sup = law.support();
  int checked = 0;
  for (int s = 0; s < vac.size(); ++s) {
    if (model.decomposition().region[s] != Region::MM) continue;
    if (++checked % 17 != 0) continue;
    std::vector<Vec> w(sup.size(), Vec{});
    for (std::size_t k = 0; k < sup.size(); ++k) {
      int id = model.homogeneous().find_site(vac.sites[s] + sup[k]);
      w[k] = id >= 0 ? uh.u[id] : Vec{};
    }
    const Vec wc = w[0];
    for (auto& v : w) v -= wc;
    Vec f = law.force(w);
    CHECK(norm(f - F[s]) < 1e-12);
  }
  CHECK(checked > 100);
}
