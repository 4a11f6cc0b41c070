#include "latmix/matching.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace latmix {

namespace {

double tuple_w_inv(double gamma, const std::vector<Vec>& support,
                   const std::vector<int>& tuple) {
  double s = 0.0;
  for (int t : tuple) s += norm(support[t]);
  return std::exp(2.0 * gamma * s);
}

double perm_count(const std::vector<int>& tuple) {
  // j! / prod(count_i!)
  double fact = 1.0;
  for (std::size_t i = 2; i <= tuple.size(); ++i) fact *= double(i);
  std::map<int, int> counts;
  for (int t : tuple) counts[t]++;
  for (auto& [k, c] : counts) {
    double f = 1.0;
    for (int i = 2; i <= c; ++i) f *= double(i);
    fact /= f;
  }
  return fact;
}

int tidx(int a, int b, int c) { return (a * 3 + b) * 3 + c; }

}  // namespace

void ObservationSet::append(const ObservationSet& other) {
  if (support_E.empty()) support_E = other.support_E;
  if (support_F.empty()) support_F = other.support_F;
  obs.insert(obs.end(), other.obs.begin(), other.obs.end());
}

LossWeights LossWeights::energy_defaults(int K_E, bool with_virial) {
  LossWeights w;
  if (K_E == 2 && !with_virial)
    w.W_E = {1, 10, 500};
  else if (K_E == 3)
    w.W_E = {1, 10, 1000, 100};
  else if (K_E == 2 && with_virial) {
    w.W_E = {1, 10, 1000};
    w.W_V = 100;
  } else if (K_E == 1)
    w.W_E = {1, 10};
  else
    throw std::invalid_argument("no default weights for this K_E");
  return w;
}

LossWeights LossWeights::force_defaults(int K_F, bool with_virial) {
  LossWeights w;
  if (K_F == 1 && !with_virial)
    w.W_F = {1, 100};
  else if (K_F == 2 && !with_virial)
    w.W_F = {1, 1000, 100};
  else if (K_F == 1 && with_virial) {
    w.W_F = {1, 1000};
    w.W_V = 100;
  } else if (K_F == 2 && with_virial) {
    w.W_F = {1, 1000, 200};
    w.W_V = 500;
  } else
    throw std::invalid_argument("no default weights for this K_F");
  return w;
}

const MatchErrors::Entry& MatchErrors::get(ObsKind k, int j) const {
  auto it = by_order.find({static_cast<int>(k), j});
  if (it == by_order.end())
    throw std::out_of_range("match error entry not present");
  return it->second;
}

ObservationSet gen_energy_obs(const HomogeneousModel& hom, int K_E,
                              double R_cut, double gamma,
                              const std::vector<double>& W_by_order,
                              const FDSteps& steps) {
  if (K_E < 1 || K_E > 3)
    throw std::invalid_argument("gen_energy_obs: K_E must be in 1..3");
  auto Wof = [&](int j) {
    return j < static_cast<int>(W_by_order.size()) ? W_by_order[j] : 1.0;
  };
  auto T = taylor_coefficients(hom, K_E, R_cut, steps, /*prune=*/0.0);
  const int d = hom.spec().d;

  ObservationSet set;
  set.lat = hom.spec();
  set.gamma = gamma;
  set.support_E = T.support();

  Observation o0;
  o0.kind = ObsKind::EnergyDeriv;
  o0.order = 0;
  o0.target = T.base_value();
  o0.W = Wof(0);
  set.obs.push_back(o0);

  const int ns = static_cast<int>(set.support_E.size());
  for (int i = 0; i < ns; ++i)
    for (int a = 0; a < d; ++a) {
      Observation o;
      o.kind = ObsKind::EnergyDeriv;
      o.order = 1;
      o.tuple = {i};
      o.comp = {a};
      o.target = T.grad_table()[i][a];
      o.w_inv = tuple_w_inv(gamma, set.support_E, o.tuple);
      o.W = Wof(1);
      set.obs.push_back(o);
    }
  if (K_E >= 2)
    for (const auto& p : T.quad_table())
      for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b) {
          Observation o;
          o.kind = ObsKind::EnergyDeriv;
          o.order = 2;
          o.tuple = {p.i, p.j};
          o.comp = {a, b};
          o.target = p.M(a, b);
          o.w_inv = tuple_w_inv(gamma, set.support_E, o.tuple);
          o.W = Wof(2);
          o.mult = p.mult;
          set.obs.push_back(o);
        }
  if (K_E >= 3)
    for (const auto& t : T.cubic_table())
      for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b)
          for (int c = 0; c < d; ++c) {
            Observation o;
            o.kind = ObsKind::EnergyDeriv;
            o.order = 3;
            o.tuple = {t.i, t.j, t.k};
            o.comp = {a, b, c};
            o.target = t.T[tidx(a, b, c)];
            o.w_inv = tuple_w_inv(gamma, set.support_E, o.tuple);
            o.W = Wof(3);
            o.mult = t.mult;
            set.obs.push_back(o);
          }
  return set;
}

ObservationSet gen_force_obs(const HomogeneousModel& hom, int K_F,
                             double R_cut, double gamma,
                             const std::vector<double>& W_by_order,
                             const FDSteps& steps) {
  if (K_F < 1 || K_F > 2)
    throw std::invalid_argument("gen_force_obs: K_F must be 1 or 2");
  auto Wof = [&](int j) {
    return j < static_cast<int>(W_by_order.size()) ? W_by_order[j] : 1.0;
  };
  auto T = taylor_force_coefficients(hom, K_F, R_cut, steps, /*prune=*/0.0);
  const int d = hom.spec().d;

  ObservationSet set;
  set.lat = hom.spec();
  set.gamma = gamma;
  set.support_F = T.support();

  const int ns = static_cast<int>(set.support_F.size());
  for (int l = 0; l < ns; ++l)
    for (int i = 0; i < d; ++i)
      for (int m = 0; m < d; ++m) {
        Observation o;
        o.kind = ObsKind::ForceDeriv;
        o.order = 1;
        o.tuple = {l};
        o.comp = {i, m};
        o.target = T.jacobian_table()[l](i, m);
        o.w_inv = tuple_w_inv(gamma, set.support_F, o.tuple);
        o.W = Wof(1);
        set.obs.push_back(o);
      }
  if (K_F >= 2)
    for (const auto& q : T.quad_table())
      for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b)
          for (int c = 0; c < d; ++c) {
            Observation o;
            o.kind = ObsKind::ForceDeriv;
            o.order = 2;
            o.tuple = {q.i, q.j};
            o.comp = {a, b, c};
            o.target = q.T[tidx(a, b, c)];
            o.w_inv = tuple_w_inv(gamma, set.support_F, o.tuple);
            o.W = Wof(2);
            o.mult = q.mult;
            set.obs.push_back(o);
          }
  return set;
}

ObservationSet gen_virial_obs(const HomogeneousModel& hom, int K, double W_V,
                              const FDSteps& steps) {
  if (K + 1 > 4)
    throw std::invalid_argument("gen_virial_obs: K + 1 must be <= 4");
  const int d = hom.spec().d;
  const int dd = d * d;
  auto cb = virial_derivatives(hom, K + 1, steps);
  const auto& T = cb.tensors[K];  // order K + 1

  ObservationSet set;
  set.lat = hom.spec();

  // ordered slot representatives s_1 <= ... <= s_{K+1}
  const int j = K + 1;
  std::vector<int> slots(j, 0);
  while (true) {
    std::size_t idx = 0;
    for (int s : slots) idx = idx * dd + s;
    Observation o;
    o.kind = ObsKind::VirialDeriv;
    o.order = j;
    o.comp = slots;
    o.target = T[idx];
    o.W = W_V;
    o.mult = perm_count(slots);
    set.obs.push_back(o);

    int k = j - 1;
    while (k >= 0 && slots[k] == dd - 1) --k;
    if (k < 0) break;
    ++slots[k];
    for (int t = k + 1; t < j; ++t) slots[t] = slots[k];
  }
  return set;
}

MatchErrors match_errors_sets(const ObservationSet& ref,
                              const ObservationSet& mm) {
  if (ref.count() != mm.count())
    throw std::invalid_argument("match_errors: observation sets differ");
  if (ref.count() == 0)
    throw std::invalid_argument("match_errors: empty observation set");
  MatchErrors out;
  for (int i = 0; i < ref.count(); ++i) {
    const Observation& a = ref.obs[i];
    const Observation& b = mm.obs[i];
    if (a.kind != b.kind || a.order != b.order || a.tuple != b.tuple ||
        a.comp != b.comp)
      throw std::invalid_argument("match_errors: enumeration mismatch");
    auto& e = out.by_order[{static_cast<int>(a.kind), a.order}];
    const double w = a.mult * a.w_inv;
    e.eps += w * (a.target - b.target) * (a.target - b.target);
    e.ref_norm += w * a.target * a.target;
    e.count += 1;
  }
  for (auto& [key, e] : out.by_order) {
    e.eps = std::sqrt(e.eps);
    e.ref_norm = std::sqrt(e.ref_norm);
    e.rrmse = e.ref_norm > 0.0 ? e.eps / e.ref_norm : e.eps;
  }
  return out;
}

MatchErrors match_errors(const HomogeneousModel& model_ref,
                         const HomogeneousModel& model_mm,
                         const MatchSpec& spec) {
  ObservationSet ref, mm;
  std::vector<double> ones(4, 1.0);
  if (spec.K_E > 0) {
    ref.append(gen_energy_obs(model_ref, spec.K_E, spec.R_E, spec.gamma, ones));
    mm.append(gen_energy_obs(model_mm, spec.K_E, spec.R_E, spec.gamma, ones));
  }
  if (spec.K_F > 0) {
    ref.append(gen_force_obs(model_ref, spec.K_F, spec.R_F, spec.gamma, ones));
    mm.append(gen_force_obs(model_mm, spec.K_F, spec.R_F, spec.gamma, ones));
  }
  if (spec.K_V > 0) {
    ref.append(gen_virial_obs(model_ref, spec.K_V, 1.0));
    mm.append(gen_virial_obs(model_mm, spec.K_V, 1.0));
  }
  return match_errors_sets(ref, mm);
}

namespace {

// Cached per-basis derivative tables on a fixed enumeration.
struct RowTables {
  int d = 2, nB = 0;
  // energy
  std::vector<int> e_slot;  // obs support slot -> mh stencil slot (-1 outside)
  Eigen::VectorXd B0;
  Eigen::MatrixXd J0;                 // nB x (ns*d)
  std::vector<Eigen::MatrixXd> D2;    // per axis2: nB x (ns*d)
  std::vector<Eigen::MatrixXd> D3;    // per packed (ax2<=ax3): nB x (ns*d)
  int e_axes = 0;
  // force
  std::vector<int> f_site;            // support_F slot -> patch site
  std::vector<Eigen::MatrixXd> F1;    // per axis: nB x d
  std::vector<Eigen::MatrixXd> F2;    // per packed (ax1<=ax2): nB x d
  int f_axes = 0;
  // virial: per order, flat slot-major tensor of length (dd)^j * nB
  std::map<int, std::vector<double>> V;

  int pack(int a, int b, int n) const {  // a <= b
    return a * n - a * (a - 1) / 2 + (b - a);
  }
};

RowTables build_tables(const MlipHomogeneous& mh, const ObservationSet& set,
                       const FDSteps& steps) {
  RowTables t;
  t.d = mh.lattice().d;
  t.nB = mh.basis().count();

  bool needE[4] = {false, false, false, false};
  bool needF[3] = {false, false, false};
  std::vector<int> virial_orders;
  for (const auto& o : set.obs) {
    if (o.kind == ObsKind::EnergyDeriv) needE[o.order] = true;
    if (o.kind == ObsKind::ForceDeriv) needF[o.order] = true;
    if (o.kind == ObsKind::VirialDeriv)
      if (std::find(virial_orders.begin(), virial_orders.end(), o.order) ==
          virial_orders.end())
        virial_orders.push_back(o.order);
  }

  const auto& st = mh.stencil();
  const int ns = static_cast<int>(st.size());
  t.e_axes = ns * t.d;
  t.e_slot.assign(set.support_E.size(), -1);
  for (std::size_t i = 0; i < set.support_E.size(); ++i)
    for (int m = 0; m < ns; ++m)
      if (norm(set.support_E[i] - st[m]) < 1e-9) t.e_slot[i] = m;

  std::vector<Vec> zero(ns, Vec{});
  if (needE[0]) t.B0 = mh.energy(zero);
  if (needE[1] || needE[2] || needE[3]) t.J0 = mh.jacobian(zero);
  if (needE[2]) {
    const double h = steps.order(2);
    t.D2.resize(t.e_axes);
    for (int ax = 0; ax < t.e_axes; ++ax) {
      std::vector<Vec> g(ns, Vec{});
      g[ax / t.d][ax % t.d] = h;
      Eigen::MatrixXd Jp = mh.jacobian(g);
      g[ax / t.d][ax % t.d] = -h;
      Eigen::MatrixXd Jm = mh.jacobian(g);
      t.D2[ax] = (Jp - Jm) / (2.0 * h);
    }
  }
  if (needE[3]) {
    const double h = steps.order(3);
    t.D3.resize(t.pack(t.e_axes - 1, t.e_axes - 1, t.e_axes) + 1);
    for (int a2 = 0; a2 < t.e_axes; ++a2)
      for (int a3 = a2; a3 < t.e_axes; ++a3) {
        auto jac_at = [&](double h2, double h3) {
          std::vector<Vec> g(ns, Vec{});
          g[a2 / t.d][a2 % t.d] += h2;
          g[a3 / t.d][a3 % t.d] += h3;
          return mh.jacobian(g);
        };
        Eigen::MatrixXd v = (jac_at(h, h) - jac_at(h, -h) - jac_at(-h, h) +
                             jac_at(-h, -h)) /
                            (4.0 * h * h);
        t.D3[t.pack(a2, a3, t.e_axes)] = std::move(v);
      }
  }

  if (needF[1] || needF[2]) {
    t.f_site.assign(set.support_F.size(), -1);
    for (std::size_t i = 0; i < set.support_F.size(); ++i)
      t.f_site[i] = mh.patch().find_site(set.support_F[i]);
    t.f_axes = static_cast<int>(set.support_F.size()) * t.d;
    const int n = mh.patch().size();
    const double h1 = steps.order(1);
    std::vector<Vec> w(n, Vec{});
    auto force_at = [&](int ax1, double s1, int ax2, double s2) {
      w.assign(n, Vec{});
      if (ax1 >= 0 && t.f_site[ax1 / t.d] >= 0)
        w[t.f_site[ax1 / t.d]][ax1 % t.d] += s1;
      if (ax2 >= 0 && t.f_site[ax2 / t.d] >= 0)
        w[t.f_site[ax2 / t.d]][ax2 % t.d] += s2;
      return mh.force_at_origin(w);
    };
    if (needF[1]) {
      t.F1.resize(t.f_axes);
      for (int ax = 0; ax < t.f_axes; ++ax)
        t.F1[ax] =
            (force_at(ax, h1, -1, 0) - force_at(ax, -h1, -1, 0)) / (2.0 * h1);
    }
    if (needF[2]) {
      const double h = steps.order(2);
      t.F2.resize(t.pack(t.f_axes - 1, t.f_axes - 1, t.f_axes) + 1);
      for (int a1 = 0; a1 < t.f_axes; ++a1)
        for (int a2 = a1; a2 < t.f_axes; ++a2)
          t.F2[t.pack(a1, a2, t.f_axes)] =
              (force_at(a1, h, a2, h) - force_at(a1, h, a2, -h) -
               force_at(a1, -h, a2, h) + force_at(a1, -h, a2, -h)) /
              (4.0 * h * h);
    }
  }

  for (int j : virial_orders) {
    auto W = [&](const Mat& F) { return mh.cb_density(F); };
    auto flat = fd_deriv_wrt_F(W, t.d, j, steps.order(j), t.nB);
    t.V[j] = std::move(flat);
  }
  return t;
}

}  // namespace

Eigen::MatrixXd observation_rows(const MlipHomogeneous& mh,
                                 const ObservationSet& set,
                                 const FDSteps& steps) {
  RowTables t = build_tables(mh, set, steps);
  const int d = t.d;
  const int dd = d * d;
  Eigen::MatrixXd R = Eigen::MatrixXd::Zero(set.count(), t.nB);

  auto e_axis = [&](int slot, int comp) -> int {
    int m = t.e_slot[slot];
    return m < 0 ? -1 : m * d + comp;
  };

  for (int i = 0; i < set.count(); ++i) {
    const Observation& o = set.obs[i];
    switch (o.kind) {
      case ObsKind::EnergyDeriv: {
        if (o.order == 0) {
          R.row(i) = t.B0.transpose();
        } else if (o.order == 1) {
          int ax = e_axis(o.tuple[0], o.comp[0]);
          if (ax >= 0) R.row(i) = t.J0.col(ax).transpose();
        } else if (o.order == 2) {
          int a1 = e_axis(o.tuple[0], o.comp[0]);
          int a2 = e_axis(o.tuple[1], o.comp[1]);
          if (a1 >= 0 && a2 >= 0)
            R.row(i) = 0.5 * (t.D2[a2].col(a1) + t.D2[a1].col(a2)).transpose();
        } else {
          int a1 = e_axis(o.tuple[0], o.comp[0]);
          int a2 = e_axis(o.tuple[1], o.comp[1]);
          int a3 = e_axis(o.tuple[2], o.comp[2]);
          if (a1 >= 0 && a2 >= 0 && a3 >= 0) {
            auto raw = [&](int g, int p, int q) -> Eigen::VectorXd {
              if (p > q) std::swap(p, q);
              return t.D3[t.pack(p, q, t.e_axes)].col(g);
            };
            R.row(i) = ((raw(a1, a2, a3) + raw(a2, a1, a3) + raw(a3, a1, a2)) /
                        3.0)
                           .transpose();
          }
        }
        break;
      }
      case ObsKind::ForceDeriv: {
        if (o.order == 1) {
          int ax = o.tuple[0] * d + o.comp[1];
          R.row(i) = t.F1[ax].col(o.comp[0]).transpose();
        } else {
          int a1 = o.tuple[0] * d + o.comp[1];
          int a2 = o.tuple[1] * d + o.comp[2];
          if (a1 > a2) std::swap(a1, a2);
          R.row(i) = t.F2[t.pack(a1, a2, t.f_axes)].col(o.comp[0]).transpose();
        }
        break;
      }
      case ObsKind::VirialDeriv: {
        const auto& flat = t.V.at(o.order);
        // symmetrized over slot permutations of the representative
        std::vector<int> slots = o.comp;
        std::sort(slots.begin(), slots.end());
        Eigen::VectorXd acc = Eigen::VectorXd::Zero(t.nB);
        int cnt = 0;
        do {
          std::size_t idx = 0;
          for (int s : slots) idx = idx * dd + s;
          for (int f = 0; f < t.nB; ++f) acc(f) += flat[idx * t.nB + f];
          ++cnt;
        } while (std::next_permutation(slots.begin(), slots.end()));
        R.row(i) = (acc / cnt).transpose();
        break;
      }
    }
  }
  return R;
}

Eigen::VectorXd observation_row(const MlipHomogeneous& mh,
                                const ObservationSet& set, int index,
                                const FDSteps& steps) {
  ObservationSet one;
  one.lat = set.lat;
  one.gamma = set.gamma;
  one.support_E = set.support_E;
  one.support_F = set.support_F;
  one.obs.push_back(set.obs.at(index));
  return observation_rows(mh, one, steps).row(0).transpose();
}

FitResult assemble_and_fit(const ObservationSet& set,
                           const MlipHomogeneous& mh, double tol,
                           const FDSteps& steps) {
  const auto t0 = std::chrono::steady_clock::now();
  FitResult out;
  out.n_obs = set.count();
  out.n_basis = mh.basis().count();

  Eigen::MatrixXd R = observation_rows(mh, set, steps);
  Eigen::VectorXd y(set.count()), s(set.count());
  for (int i = 0; i < set.count(); ++i) {
    const auto& o = set.obs[i];
    y(i) = o.target;
    s(i) = std::sqrt(o.W * o.w_inv * o.mult);
  }
  Eigen::MatrixXd A = s.asDiagonal() * R;
  Eigen::VectorXd b = s.asDiagonal() * y;

  for (int c = 0; c < A.cols(); ++c)
    if (A.col(c).norm() == 0.0) ++out.zero_columns;

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  qr.setThreshold(tol);
  out.rank = static_cast<int>(qr.rank());
  Eigen::VectorXd c;
  if (out.rank == 0) {
    c = Eigen::VectorXd::Zero(A.cols());
  } else {
    c = qr.solve(b);
  }
  out.coeffs.c.assign(c.data(), c.data() + c.size());
  out.loss = (A * c - b).squaredNorm();
  out.loss_at_zero = b.squaredNorm();

  // Residual-based matching errors per (kind, order).
  Eigen::VectorXd pred = R * c;
  for (int i = 0; i < set.count(); ++i) {
    const auto& o = set.obs[i];
    auto& e = out.achieved.by_order[{static_cast<int>(o.kind), o.order}];
    const double w = o.mult * o.w_inv;
    e.eps += w * (o.target - pred(i)) * (o.target - pred(i));
    e.ref_norm += w * o.target * o.target;
    e.count += 1;
  }
  for (auto& [key, e] : out.achieved.by_order) {
    e.eps = std::sqrt(e.eps);
    e.ref_norm = std::sqrt(e.ref_norm);
    e.rrmse = e.ref_norm > 0.0 ? e.eps / e.ref_norm : e.eps;
  }

  out.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return out;
}

}  // namespace latmix
