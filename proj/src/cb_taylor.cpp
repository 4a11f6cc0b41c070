#include "latmix/cb_taylor.hpp"

#include <algorithm>
#include <cmath>

namespace latmix {

namespace {

ZVec lattice_key(const Mat& Ainv, const Vec& rho, int d) {
  Vec z = matvec(Ainv, rho);
  ZVec k;
  for (int i = 0; i < d; ++i) k.z[i] = std::llround(z[i]);
  return k;
}

int tidx(int a, int b, int c) { return (a * 3 + b) * 3 + c; }

Mat invert_spec(const LatticeSpec& spec) {
  Mat inv;
  if (spec.d == 2) {
    const Mat& A = spec.A;
    double dt = A(0, 0) * A(1, 1) - A(0, 1) * A(1, 0);
    inv(0, 0) = A(1, 1) / dt;
    inv(0, 1) = -A(0, 1) / dt;
    inv(1, 0) = -A(1, 0) / dt;
    inv(1, 1) = A(0, 0) / dt;
    return inv;
  }
  Eigen::Matrix3d A;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) A(i, j) = spec.A(i, j);
  Eigen::Matrix3d Ai = A.inverse();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) inv(i, j) = Ai(i, j);
  return inv;
}

}  // namespace

TaylorPotential::TaylorPotential(const LatticeSpec& spec, int K, double R_cut)
    : spec_(spec), Ainv_(invert_spec(spec)), K_(K), R_cut_(R_cut) {
  if (K < 1 || K > 3)
    throw std::invalid_argument("taylor order must be in 1..3");
  support_ = lattice_offsets_within(spec, R_cut);
  for (int i = 0; i < static_cast<int>(support_.size()); ++i)
    slot_.emplace(lattice_key(Ainv_, support_[i], spec.d), i);
  grad1_.assign(support_.size(), Vec{});
}

int TaylorPotential::support_slot(const Vec& rho) const {
  ZVec k = lattice_key(Ainv_, rho, spec_.d);
  // verify the key round-trips (guards non-lattice offsets)
  Vec back{};
  for (int i = 0; i < spec_.d; ++i)
    for (int j = 0; j < spec_.d; ++j)
      back[i] += spec_.A(i, j) * static_cast<double>(k.z[j]);
  if (norm(back - rho) > 1e-6) return -1;
  auto it = slot_.find(k);
  return it == slot_.end() ? -1 : it->second;
}

double TaylorPotential::eval(const std::vector<Vec>& g) const {
  double e = V0_;
  const int n = static_cast<int>(support_.size());
  for (int i = 0; i < n; ++i) e += dot(grad1_[i], g[i]);
  for (const auto& p : quad_) {
    const Vec& gi = g[p.i];
    const Vec& gj = g[p.j];
    double q = 0.0;
    for (int a = 0; a < spec_.d; ++a)
      for (int b = 0; b < spec_.d; ++b) q += gi[a] * p.M(a, b) * gj[b];
    e += 0.5 * p.mult * q;
  }
  for (const auto& t : cubic_) {
    double q = 0.0;
    for (int a = 0; a < spec_.d; ++a)
      for (int b = 0; b < spec_.d; ++b)
        for (int c = 0; c < spec_.d; ++c)
          q += t.T[tidx(a, b, c)] * g[t.i][a] * g[t.j][b] * g[t.k][c];
    e += t.mult / 6.0 * q;
  }
  return e;
}

void TaylorPotential::eval_gradient(const std::vector<Vec>& g,
                                    std::vector<Vec>& grad) const {
  const int n = static_cast<int>(support_.size());
  grad.assign(n, Vec{});
  for (int i = 0; i < n; ++i) grad[i] = grad1_[i];
  for (const auto& p : quad_) {
    if (p.i == p.j) {
      // symmetric diagonal block
      for (int a = 0; a < spec_.d; ++a)
        for (int b = 0; b < spec_.d; ++b)
          grad[p.i][a] += p.M(a, b) * g[p.i][b];
    } else {
      for (int a = 0; a < spec_.d; ++a)
        for (int b = 0; b < spec_.d; ++b) {
          grad[p.i][a] += p.M(a, b) * g[p.j][b];
          grad[p.j][b] += p.M(a, b) * g[p.i][a];
        }
    }
  }
  for (const auto& t : cubic_) {
    // enumerate the distinct slot permutations of (i, j, k)
    int perm[6][3] = {{t.i, t.j, t.k}, {t.i, t.k, t.j}, {t.j, t.i, t.k},
                      {t.j, t.k, t.i}, {t.k, t.i, t.j}, {t.k, t.j, t.i}};
    int cperm[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2},
                       {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
    bool seen[6] = {false, false, false, false, false, false};
    for (int p = 0; p < 6; ++p) {
      bool dup = false;
      for (int q = 0; q < p; ++q)
        if (!dup && seen[q] && perm[q][0] == perm[p][0] &&
            perm[q][1] == perm[p][1] && perm[q][2] == perm[p][2])
          dup = true;
      seen[p] = true;
      if (dup) continue;
      // gradient w.r.t. the first slot of this permutation
      const int s0 = perm[p][0], s1 = perm[p][1], s2 = perm[p][2];
      int abc[3];
      for (int a = 0; a < spec_.d; ++a) {
        double acc = 0.0;
        for (int b = 0; b < spec_.d; ++b)
          for (int c = 0; c < spec_.d; ++c) {
            abc[cperm[p][0]] = a;
            abc[cperm[p][1]] = b;
            abc[cperm[p][2]] = c;
            acc += t.T[tidx(abc[0], abc[1], abc[2])] * g[s1][b] * g[s2][c];
          }
        grad[s0][a] += 0.5 * acc;
      }
    }
  }
}

double TaylorPotential::site_energy(const StencilView& s) const {
  std::vector<Vec> g(support_.size(), Vec{});
  for (int k = 0; k < s.size(); ++k) {
    int slot = support_slot(s.rho[k]);
    if (slot >= 0) g[slot] = s.du[k];
  }
  return eval(g);
}

void TaylorPotential::site_gradient(const StencilView& s,
                                    std::vector<Vec>& grad) const {
  std::vector<Vec> g(support_.size(), Vec{});
  std::vector<int> slot_of(s.size(), -1);
  for (int k = 0; k < s.size(); ++k) {
    int slot = support_slot(s.rho[k]);
    slot_of[k] = slot;
    if (slot >= 0) g[slot] = s.du[k];
  }
  std::vector<Vec> gs;
  eval_gradient(g, gs);
  grad.assign(s.size(), Vec{});
  for (int k = 0; k < s.size(); ++k)
    if (slot_of[k] >= 0) grad[k] = gs[slot_of[k]];
}

TaylorPotential taylor_coefficients(const HomogeneousModel& hom, int K,
                                    double R_cut, const FDSteps& steps,
                                    double prune) {
  TaylorPotential T(hom.spec(), K, R_cut);
  T.V0_ = hom.V0();
  const int d = hom.spec().d;
  const int ns = static_cast<int>(T.support_.size());

  // Map table slots onto the model stencil.
  const auto& ms = hom.stencil();
  const int nm = static_cast<int>(ms.size());
  std::vector<int> to_model(ns, -1);
  for (int i = 0; i < ns; ++i)
    for (int m = 0; m < nm; ++m)
      if (norm(T.support_[i] - ms[m]) < 1e-9) to_model[i] = m;

  // First order: analytic stencil gradient at the homogeneous state.
  std::vector<Vec> g0(nm, Vec{}), grad;
  hom.gradient(g0, grad);
  for (int i = 0; i < ns; ++i)
    if (to_model[i] >= 0) T.grad1_[i] = grad[to_model[i]];

  if (K >= 2) {
    // Full Hessian table by centered differences of the analytic gradient.
    const double h = steps.order(2);
    std::vector<std::vector<Vec>> col(static_cast<std::size_t>(ns) * d);
    std::vector<Vec> gp, gm;
    for (int j = 0; j < ns; ++j)
      for (int b = 0; b < d; ++b) {
        std::vector<Vec> g(nm, Vec{});
        if (to_model[j] < 0) {
          col[j * d + b].assign(ns, Vec{});
          continue;
        }
        g[to_model[j]][b] = h;
        hom.gradient(g, gp);
        g[to_model[j]][b] = -h;
        hom.gradient(g, gm);
        std::vector<Vec> column(ns, Vec{});
        for (int i = 0; i < ns; ++i)
          if (to_model[i] >= 0)
            column[i] =
                (1.0 / (2.0 * h)) * (gp[to_model[i]] - gm[to_model[i]]);
        col[j * d + b] = std::move(column);
      }
    for (int i = 0; i < ns; ++i)
      for (int j = i; j < ns; ++j) {
        Mat M;
        double mx = 0.0;
        for (int a = 0; a < 3; ++a) M(a, a) = 0.0;
        for (int a = 0; a < d; ++a)
          for (int b = 0; b < d; ++b) {
            // symmetrize the two finite-difference routes
            double v1 = col[j * d + b][i][a];
            double v2 = col[i * d + a][j][b];
            M(a, b) = 0.5 * (v1 + v2);
            mx = std::max(mx, std::abs(M(a, b)));
          }
        if (mx >= prune)
          T.quad_.push_back({i, j, i == j ? 1.0 : 2.0, M});
      }
  }

  if (K >= 3) {
    const double h = steps.order(3);
    // Raw third derivatives R[i,a][(j,b) <= (k,c)] from second differences
    // of the analytic gradient.
    auto grad_at = [&](int j, int b, double hb, int k, int c, double hc) {
      std::vector<Vec> g(nm, Vec{});
      g[to_model[j]][b] += hb;
      g[to_model[k]][c] += hc;
      std::vector<Vec> out;
      hom.gradient(g, out);
      return out;
    };
    const int axes = ns * d;
    std::vector<std::vector<Vec>> raw(
        static_cast<std::size_t>(axes) * axes);
    for (int aj = 0; aj < axes; ++aj) {
      int j = aj / d, b = aj % d;
      if (to_model[j] < 0) continue;
      for (int ak = aj; ak < axes; ++ak) {
        int k = ak / d, c = ak % d;
        if (to_model[k] < 0) continue;
        auto gpp = grad_at(j, b, h, k, c, h);
        auto gpm = grad_at(j, b, h, k, c, -h);
        auto gmp = grad_at(j, b, -h, k, c, h);
        auto gmm = grad_at(j, b, -h, k, c, -h);
        std::vector<Vec> t(ns, Vec{});
        for (int i = 0; i < ns; ++i)
          if (to_model[i] >= 0)
            t[i] = (1.0 / (4.0 * h * h)) *
                   ((gpp[to_model[i]] - gpm[to_model[i]]) -
                    (gmp[to_model[i]] - gmm[to_model[i]]));
        raw[static_cast<std::size_t>(aj) * axes + ak] = std::move(t);
      }
    }
    auto raw_val = [&](int i, int a, int j, int b, int k, int c) -> double {
      int aj = j * d + b, ak = k * d + c;
      if (aj > ak) std::swap(aj, ak);
      const auto& t = raw[static_cast<std::size_t>(aj) * axes + ak];
      if (t.empty()) return 0.0;
      return t[i][a];
    };
    for (int i = 0; i < ns; ++i)
      for (int j = i; j < ns; ++j)
        for (int k = j; k < ns; ++k) {
          TaylorPotential::Trip3 t{};
          t.i = i;
          t.j = j;
          t.k = k;
          // distinct permutations count
          double mult = 6.0;
          if (i == j && j == k)
            mult = 1.0;
          else if (i == j || j == k || i == k)
            mult = 3.0;
          t.mult = mult;
          double mx = 0.0;
          for (int a = 0; a < d; ++a)
            for (int b = 0; b < d; ++b)
              for (int c = 0; c < d; ++c) {
                // average the three gradient-slot placements
                double v = (raw_val(i, a, j, b, k, c) +
                            raw_val(j, b, i, a, k, c) +
                            raw_val(k, c, i, a, j, b)) /
                           3.0;
                t.T[tidx(a, b, c)] = v;
                mx = std::max(mx, std::abs(v));
              }
          if (mx >= prune) T.cubic_.push_back(t);
        }
  }
  return T;
}

TaylorForce::TaylorForce(const LatticeSpec& spec, int K, double R_cut)
    : spec_(spec), Ainv_(invert_spec(spec)), K_(K), R_cut_(R_cut) {
  if (K < 1 || K > 2)
    throw std::invalid_argument("taylor force order must be 1 or 2");
  support_.push_back(Vec{});
  for (const Vec& r : lattice_offsets_within(spec, R_cut))
    support_.push_back(r);
  for (int i = 0; i < static_cast<int>(support_.size()); ++i)
    slot_.emplace(lattice_key(Ainv_, support_[i], spec.d), i);
  J1_.assign(support_.size(), Mat{});
  for (auto& M : J1_)
    for (int i = 0; i < 3; ++i) M(i, i) = 0.0;
}

int TaylorForce::support_slot(const Vec& rho) const {
  ZVec k = lattice_key(Ainv_, rho, spec_.d);
  Vec back{};
  for (int i = 0; i < spec_.d; ++i)
    for (int j = 0; j < spec_.d; ++j)
      back[i] += spec_.A(i, j) * static_cast<double>(k.z[j]);
  if (norm(back - rho) > 1e-6) return -1;
  auto it = slot_.find(k);
  return it == slot_.end() ? -1 : it->second;
}

Vec TaylorForce::eval(const std::vector<Vec>& w) const {
  Vec f{};
  const int n = static_cast<int>(support_.size());
  for (int l = 1; l < n; ++l)  // slot 0 (the center) has w = 0
    for (int i = 0; i < spec_.d; ++i)
      for (int j = 0; j < spec_.d; ++j) f[i] += J1_[l](i, j) * w[l][j];
  for (const auto& q : quad_) {
    const double scale = q.i == q.j ? 0.5 : 1.0;  // mult folded in
    for (int a = 0; a < spec_.d; ++a) {
      double acc = 0.0;
      for (int b = 0; b < spec_.d; ++b)
        for (int c = 0; c < spec_.d; ++c)
          acc += q.T[tidx(a, b, c)] * w[q.i][b] * w[q.j][c];
      f[a] += scale * acc;
    }
  }
  return f;
}

TaylorForce taylor_force_coefficients(const HomogeneousModel& hom, int K,
                                      double R_cut, const FDSteps& steps,
                                      double prune) {
  TaylorForce T(hom.spec(), K, R_cut);
  const int d = hom.spec().d;
  const int ns = static_cast<int>(T.support_.size());

  auto J = hom.force_jacobian_at_origin();
  std::vector<int> to_patch(ns, -1);
  for (int i = 0; i < ns; ++i)
    to_patch[i] = hom.patch().find_site(T.support_[i]);
  for (int i = 0; i < ns; ++i)
    if (to_patch[i] >= 0) T.J1_[i] = J[to_patch[i]];

  if (K >= 2) {
    const double h = steps.order(2);
    const int n = hom.patch().size();
    std::vector<Vec> w(n, Vec{});
    auto force_at = [&](int j, int b, double hb, int k, int c, double hc) {
      w.assign(n, Vec{});
      w[to_patch[j]][b] += hb;
      w[to_patch[k]][c] += hc;
      return hom.force_at_origin(w);
    };
    for (int j = 0; j < ns; ++j) {
      if (to_patch[j] < 0) continue;
      for (int k = j; k < ns; ++k) {
        if (to_patch[k] < 0) continue;
        TaylorForce::Quad q{};
        q.i = j;
        q.j = k;
        q.mult = j == k ? 1.0 : 2.0;
        double mx = 0.0;
        for (int b = 0; b < d; ++b)
          for (int c = 0; c < d; ++c) {
            Vec fpp = force_at(j, b, h, k, c, h);
            Vec fpm = force_at(j, b, h, k, c, -h);
            Vec fmp = force_at(j, b, -h, k, c, h);
            Vec fmm = force_at(j, b, -h, k, c, -h);
            for (int a = 0; a < d; ++a) {
              double v =
                  ((fpp[a] - fpm[a]) - (fmp[a] - fmm[a])) / (4.0 * h * h);
              q.T[tidx(a, b, c)] = v;
              mx = std::max(mx, std::abs(v));
            }
          }
        if (mx >= prune) T.quad_.push_back(q);
      }
    }
  }
  return T;
}

double& CauchyBornTensor::at(int j, const std::vector<int>& slots) {
  std::size_t idx = 0;
  for (int s : slots) idx = idx * (d * d) + s;
  return tensors[j - 1][idx];
}

double CauchyBornTensor::at(int j, const std::vector<int>& slots) const {
  std::size_t idx = 0;
  for (int s : slots) idx = idx * (d * d) + s;
  return tensors[j - 1][idx];
}

double cauchy_born_density(const HomogeneousModel& hom, const Mat& F) {
  const int d = hom.spec().d;
  Eigen::MatrixXd Fd(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) Fd(i, j) = F(i, j);
  const double det = Fd.determinant();
  if (det <= 0.0) throw std::invalid_argument("cauchy_born: det F <= 0");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Fd);
  const double smin = svd.singularValues().minCoeff();
  const double R = hom.potential().cutoff() / std::max(smin, 1e-6);

  auto offsets = lattice_offsets_within(hom.spec(), R + 1e-9);
  StencilView sv;
  sv.rho = offsets;
  sv.du.resize(offsets.size());
  for (std::size_t k = 0; k < offsets.size(); ++k) {
    Vec fr{};
    for (int i = 0; i < d; ++i) {
      fr[i] = 0.0;
      for (int j = 0; j < d; ++j) fr[i] += F(i, j) * offsets[k][j];
    }
    sv.du[k] = fr - offsets[k];
  }
  return hom.potential().site_energy(sv);
}

std::vector<double> fd_deriv_wrt_F(
    const std::function<Eigen::VectorXd(const Mat&)>& W, int d, int order,
    double step, int m) {
  const int dd = d * d;
  if (order == 0) {
    Mat I;
    Eigen::VectorXd v = W(I);
    return std::vector<double>(v.data(), v.data() + m);
  }
  std::function<std::vector<double>(const Mat&, int)> rec =
      [&](const Mat& F, int ord) -> std::vector<double> {
    if (ord == 0) {
      Eigen::VectorXd v = W(F);
      return std::vector<double>(v.data(), v.data() + m);
    }
    std::size_t sub = m;
    for (int t = 1; t < ord; ++t) sub *= dd;
    std::vector<double> out(static_cast<std::size_t>(dd) * sub);
    for (int s = 0; s < dd; ++s) {
      Mat Fp = F, Fm = F;
      Fp(s / d, s % d) += step;
      Fm(s / d, s % d) -= step;
      auto vp = rec(Fp, ord - 1);
      auto vm = rec(Fm, ord - 1);
      for (std::size_t t = 0; t < sub; ++t)
        out[s * sub + t] = (vp[t] - vm[t]) / (2.0 * step);
    }
    return out;
  };
  Mat I;
  return rec(I, order);
}

namespace {

// Average a flat (d^2)^j tensor over all slot permutations.
std::vector<double> symmetrize_slots(const std::vector<double>& T, int d,
                                     int j) {
  const int dd = d * d;
  std::vector<int> perm(j);
  for (int i = 0; i < j; ++i) perm[i] = i;
  std::vector<double> out(T.size(), 0.0);
  int count = 0;
  std::vector<int> slots(j);
  do {
    ++count;
    for (std::size_t idx = 0; idx < T.size(); ++idx) {
      std::size_t rest = idx;
      for (int p = j - 1; p >= 0; --p) {
        slots[p] = static_cast<int>(rest % dd);
        rest /= dd;
      }
      std::size_t pidx = 0;
      for (int p = 0; p < j; ++p) pidx = pidx * dd + slots[perm[p]];
      out[idx] += T[pidx];
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  for (auto& v : out) v /= count;
  return out;
}

}  // namespace

CauchyBornTensor virial_derivatives(const HomogeneousModel& hom, int j_max,
                                    const FDSteps& steps) {
  if (j_max < 1 || j_max > 4)
    throw std::invalid_argument("virial order must be in 1..4");
  CauchyBornTensor out;
  out.d = hom.spec().d;
  out.j_max = j_max;
  auto W = [&](const Mat& F) {
    Eigen::VectorXd v(1);
    v(0) = cauchy_born_density(hom, F);
    return v;
  };
  for (int j = 1; j <= j_max; ++j) {
    auto T = fd_deriv_wrt_F(W, out.d, j, steps.order(j), 1);
    out.tensors.push_back(symmetrize_slots(T, out.d, j));
  }
  return out;
}

CauchyBornTensor virial_lattice_sum(const HomogeneousModel& hom, int j_max,
                                    const FDSteps& steps) {
  if (j_max < 1 || j_max > 2)
    throw std::invalid_argument("lattice-sum route implemented for j <= 2");
  const int d = hom.spec().d;
  const int dd = d * d;
  CauchyBornTensor out;
  out.d = d;
  out.j_max = j_max;

  const auto& st = hom.stencil();
  const int nm = static_cast<int>(st.size());
  std::vector<Vec> g0(nm, Vec{}), grad;
  hom.gradient(g0, grad);

  std::vector<double> T1(dd, 0.0);
  for (int k = 0; k < nm; ++k)
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) T1[i * d + j] += grad[k][i] * st[k][j];
  out.tensors.push_back(T1);

  if (j_max >= 2) {
    // Full Hessian table via FD of the analytic gradient.
    const double h = steps.order(2);
    std::vector<double> T2(static_cast<std::size_t>(dd) * dd, 0.0);
    std::vector<Vec> gp, gm;
    for (int l = 0; l < nm; ++l)
      for (int b = 0; b < d; ++b) {
        std::vector<Vec> g(nm, Vec{});
        g[l][b] = h;
        hom.gradient(g, gp);
        g[l][b] = -h;
        hom.gradient(g, gm);
        for (int k = 0; k < nm; ++k)
          for (int a = 0; a < d; ++a) {
            double hess = (gp[k][a] - gm[k][a]) / (2.0 * h);
            for (int i = 0; i < d; ++i)
              for (int j = 0; j < d; ++j)
                T2[static_cast<std::size_t>(a * d + i) * dd + (b * d + j)] +=
                    hess * st[k][i] * st[l][j];
          }
      }
    out.tensors.push_back(T2);
  }
  return out;
}

}  // namespace latmix
