#include "latmix/mlip.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>

namespace latmix {

namespace {

void chebyshev(int kmax, double x, std::vector<double>& T,
               std::vector<double>* dT) {
  T.assign(kmax + 1, 0.0);
  if (dT) dT->assign(kmax + 1, 0.0);
  T[0] = 1.0;
  if (kmax >= 1) {
    T[1] = x;
    if (dT) (*dT)[1] = 1.0;
  }
  for (int k = 2; k <= kmax; ++k) {
    T[k] = 2.0 * x * T[k - 1] - T[k - 2];
    if (dT)
      (*dT)[k] = 2.0 * T[k - 1] + 2.0 * x * (*dT)[k - 1] - (*dT)[k - 2];
  }
}

void legendre(int lmax, double t, std::vector<double>& L,
              std::vector<double>* dL) {
  L.assign(lmax + 1, 0.0);
  if (dL) dL->assign(lmax + 1, 0.0);
  L[0] = 1.0;
  if (lmax >= 1) {
    L[1] = t;
    if (dL) (*dL)[1] = 1.0;
  }
  for (int k = 1; k < lmax; ++k) {
    L[k + 1] = ((2 * k + 1) * t * L[k] - k * L[k - 1]) / (k + 1);
    if (dL)
      (*dL)[k + 1] =
          ((2 * k + 1) * (L[k] + t * (*dL)[k]) - k * (*dL)[k - 1]) / (k + 1);
  }
}

// Finite Fourier expansion L_l(cos D) = sum_m a[l][m] cos(m D).
std::vector<std::vector<double>> legendre_cos_coeffs_build(int lmax) {
  // monomial coefficients of the Legendre polynomials
  std::vector<std::vector<double>> mono(lmax + 1);
  mono[0] = {1.0};
  if (lmax >= 1) mono[1] = {0.0, 1.0};
  for (int k = 1; k < lmax; ++k) {
    std::vector<double> next(k + 2, 0.0);
    for (std::size_t p = 0; p < mono[k].size(); ++p)
      next[p + 1] += (2 * k + 1) * mono[k][p] / (k + 1);
    for (std::size_t p = 0; p < mono[k - 1].size(); ++p)
      next[p] -= double(k) * mono[k - 1][p] / (k + 1);
    mono[k + 1] = next;
  }
  // cos^p D = sum_m w[p][m] cos(m D)
  auto binom = [](int n, int k) {
    double b = 1.0;
    for (int i = 0; i < k; ++i) b = b * (n - i) / (i + 1);
    return b;
  };
  std::vector<std::vector<double>> a(lmax + 1);
  for (int l = 0; l <= lmax; ++l) {
    a[l].assign(lmax + 1, 0.0);
    for (int p = 0; p < static_cast<int>(mono[l].size()); ++p) {
      const double cp = mono[l][p];
      if (cp == 0.0) continue;
      const double scale = std::ldexp(1.0, -p);  // 2^{-p}
      for (int m = p % 2; m <= p; m += 2) {
        double w = scale * binom(p, (p - m) / 2);
        if (m > 0) w *= 2.0;
        a[l][m] += cp * w;
      }
    }
  }
  return a;
}

const std::vector<std::vector<double>>& legendre_cos_coeffs(int lmax) {
  static std::mutex mtx;
  static std::map<int, std::vector<std::vector<double>>> cache;
  std::lock_guard<std::mutex> lock(mtx);
  auto it = cache.find(lmax);
  if (it == cache.end())
    it = cache.emplace(lmax, legendre_cos_coeffs_build(lmax)).first;
  return it->second;
}

struct SortedStencil {
  std::vector<int> order;       // sorted slot -> input slot
  std::vector<Vec> x;           // positions rho + du, sorted, r < R_cut only
  std::vector<double> r;
  std::vector<int> src;         // kept entry -> input slot
};

SortedStencil sort_stencil(const BasisSpec& spec, const StencilView& s) {
  SortedStencil out;
  std::vector<int> idx(s.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    const Vec& ra = s.rho[a];
    const Vec& rb = s.rho[b];
    if (ra[0] != rb[0]) return ra[0] < rb[0];
    if (ra[1] != rb[1]) return ra[1] < rb[1];
    return ra[2] < rb[2];
  });
  out.order = idx;
  for (int k : idx) {
    Vec x = s.rho[k] + s.du[k];
    double r = norm(x);
    if (r < 1e-8) throw std::runtime_error("mlip: coincident atoms");
    if (r >= spec.R_cut) continue;
    out.x.push_back(x);
    out.r.push_back(r);
    out.src.push_back(k);
  }
  return out;
}

}  // namespace

std::vector<BasisSpec::Feature> BasisSpec::features() const {
  std::vector<Feature> out;
  for (int k = 0; k <= k_max_pair; ++k) out.push_back({0, k, 0, 0});
  for (int k1 = 0; k1 <= k_max_trip; ++k1)
    for (int k2 = k1; k2 <= k_max_trip; ++k2)
      for (int l = 0; l <= l_max; ++l) out.push_back({1, k1, k2, l});
  return out;
}

int BasisSpec::count() const {
  return (k_max_pair + 1) +
         (k_max_trip + 1) * (k_max_trip + 2) / 2 * (l_max + 1);
}

void radial_basis(const BasisSpec& spec, double r, std::vector<double>& P,
                  std::vector<double>* dP) {
  const int kmax = std::max(spec.k_max_pair, spec.k_max_trip);
  if (r <= 0.0) throw std::invalid_argument("radial_basis: r must be > 0");
  if (r >= spec.R_cut) {
    P.assign(kmax + 1, 0.0);
    if (dP) dP->assign(kmax + 1, 0.0);
    return;
  }
  const double span = spec.R_cut - spec.r_in;
  const double x = 2.0 * (r - spec.r_in) / span - 1.0;
  std::vector<double> T, dT;
  chebyshev(kmax, x, T, dP ? &dT : nullptr);
  const double env = (spec.R_cut - r) * (spec.R_cut - r);
  const double denv = -2.0 * (spec.R_cut - r);
  P.assign(kmax + 1, 0.0);
  if (dP) dP->assign(kmax + 1, 0.0);
  for (int k = 0; k <= kmax; ++k) {
    P[k] = T[k] * env;
    if (dP) (*dP)[k] = dT[k] * (2.0 / span) * env + T[k] * denv;
  }
}

void descriptors_ref(const BasisSpec& spec, const StencilView& s,
                     std::vector<double>& B) {
  auto feats = spec.features();
  B.assign(feats.size(), 0.0);
  SortedStencil ss = sort_stencil(spec, s);
  const int n = static_cast<int>(ss.x.size());

  std::vector<std::vector<double>> P(n);
  for (int i = 0; i < n; ++i) radial_basis(spec, ss.r[i], P[i]);

  for (std::size_t f = 0; f < feats.size(); ++f) {
    const auto& ft = feats[f];
    if (ft.kind == 0) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += P[i][ft.k1];
      B[f] = acc;
    }
  }
  std::vector<double> L;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double t = dot(ss.x[i], ss.x[j]) / (ss.r[i] * ss.r[j]);
      legendre(spec.l_max, std::clamp(t, -1.0, 1.0), L, nullptr);
      for (std::size_t f = 0; f < feats.size(); ++f) {
        const auto& ft = feats[f];
        if (ft.kind != 1) continue;
        double q = P[i][ft.k1] * P[j][ft.k2];
        if (ft.k1 != ft.k2) q += P[i][ft.k2] * P[j][ft.k1];
        B[f] += q * L[ft.l];
      }
    }
}

namespace {

// Channel sums for the d = 2 linear-cost path.
struct Channels {
  int kmax, lmax;
  std::vector<std::vector<double>> P, dP;   // per kept entry
  std::vector<std::vector<double>> cosm, sinm;
  std::vector<double> C, S;                 // [a * (lmax+1) + m]
  std::vector<double> D;                    // [a <= b packed]
  int dpack(int a, int b) const {  // a <= b
    return a * (kmax + 1) - a * (a - 1) / 2 + (b - a);
  }
};

Channels build_channels(const BasisSpec& spec, const SortedStencil& ss,
                        bool grads) {
  Channels ch;
  ch.kmax = spec.k_max_trip;
  ch.lmax = spec.l_max;
  const int n = static_cast<int>(ss.x.size());
  const int kn = std::max(spec.k_max_pair, spec.k_max_trip) + 1;
  ch.P.resize(n);
  if (grads) ch.dP.resize(n);
  ch.cosm.resize(n);
  ch.sinm.resize(n);
  ch.C.assign((ch.kmax + 1) * (ch.lmax + 1), 0.0);
  ch.S.assign((ch.kmax + 1) * (ch.lmax + 1), 0.0);
  ch.D.assign((ch.kmax + 1) * (ch.kmax + 2) / 2, 0.0);
  for (int i = 0; i < n; ++i) {
    radial_basis(spec, ss.r[i], ch.P[i], grads ? &ch.dP[i] : nullptr);
    ch.P[i].resize(kn, 0.0);
    const double phi = std::atan2(ss.x[i][1], ss.x[i][0]);
    ch.cosm[i].resize(ch.lmax + 1);
    ch.sinm[i].resize(ch.lmax + 1);
    for (int m = 0; m <= ch.lmax; ++m) {
      ch.cosm[i][m] = std::cos(m * phi);
      ch.sinm[i][m] = std::sin(m * phi);
    }
    for (int a = 0; a <= ch.kmax; ++a) {
      for (int m = 0; m <= ch.lmax; ++m) {
        ch.C[a * (ch.lmax + 1) + m] += ch.P[i][a] * ch.cosm[i][m];
        ch.S[a * (ch.lmax + 1) + m] += ch.P[i][a] * ch.sinm[i][m];
      }
      for (int b = a; b <= ch.kmax; ++b)
        ch.D[ch.dpack(a, b)] += ch.P[i][a] * ch.P[i][b];
    }
  }
  return ch;
}

}  // namespace

void descriptors(const BasisSpec& spec, const StencilView& s,
                 std::vector<double>& B) {
  // The channel path needs planar angles; d = 3 stencils fall back to the
  // double loop.
  bool planar = true;
  for (int k = 0; k < s.size(); ++k)
    if (s.rho[k][2] != 0.0 || s.du[k][2] != 0.0) planar = false;
  if (!planar) {
    descriptors_ref(spec, s, B);
    return;
  }

  auto feats = spec.features();
  B.assign(feats.size(), 0.0);
  SortedStencil ss = sort_stencil(spec, s);
  Channels ch = build_channels(spec, ss, false);
  const auto acoef = legendre_cos_coeffs(spec.l_max);
  const int n = static_cast<int>(ss.x.size());
  const int lm = spec.l_max + 1;

  for (std::size_t f = 0; f < feats.size(); ++f) {
    const auto& ft = feats[f];
    if (ft.kind == 0) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += ch.P[i][ft.k1];
      B[f] = acc;
    } else {
      double full = 0.0;
      for (int m = 0; m <= ft.l; ++m) {
        const double w = acoef[ft.l][m];
        if (w == 0.0) continue;
        full += w * (ch.C[ft.k1 * lm + m] * ch.C[ft.k2 * lm + m] +
                     ch.S[ft.k1 * lm + m] * ch.S[ft.k2 * lm + m]);
      }
      const double diag = ch.D[ch.dpack(ft.k1, ft.k2)];
      B[f] = ft.k1 == ft.k2 ? 0.5 * (full - diag) : (full - diag);
    }
  }
}

void descriptor_jacobian(const BasisSpec& spec, const StencilView& s,
                         std::vector<double>& B,
                         std::vector<std::vector<Vec>>& J) {
  auto feats = spec.features();
  SortedStencil ss = sort_stencil(spec, s);
  const int n = static_cast<int>(ss.x.size());
  B.assign(feats.size(), 0.0);
  J.assign(feats.size(), std::vector<Vec>(s.size(), Vec{}));

  bool planar = true;
  for (int k = 0; k < s.size(); ++k)
    if (s.rho[k][2] != 0.0 || s.du[k][2] != 0.0) planar = false;

  if (planar) {
    Channels ch = build_channels(spec, ss, true);
    const auto a = legendre_cos_coeffs(spec.l_max);
    const int lm = spec.l_max + 1;
    for (std::size_t f = 0; f < feats.size(); ++f) {
      const auto& ft = feats[f];
      if (ft.kind == 0) {
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
          acc += ch.P[i][ft.k1];
          Vec rhat = (1.0 / ss.r[i]) * ss.x[i];
          J[f][ss.src[i]] = ch.dP[i][ft.k1] * rhat;
        }
        B[f] = acc;
        continue;
      }
      double full = 0.0;
      for (int m = 0; m <= ft.l; ++m) {
        const double w = a[ft.l][m];
        if (w == 0.0) continue;
        full += w * (ch.C[ft.k1 * lm + m] * ch.C[ft.k2 * lm + m] +
                     ch.S[ft.k1 * lm + m] * ch.S[ft.k2 * lm + m]);
      }
      const double diag = ch.D[ch.dpack(ft.k1, ft.k2)];
      const double scale = ft.k1 == ft.k2 ? 0.5 : 1.0;
      B[f] = scale * (full - diag);
      for (int i = 0; i < n; ++i) {
        const Vec rhat = (1.0 / ss.r[i]) * ss.x[i];
        const Vec phat{-rhat[1], rhat[0]};
        Vec g{};
        for (int m = 0; m <= ft.l; ++m) {
          const double w = a[ft.l][m];
          if (w == 0.0) continue;
          // d/dx_i of C_a^m and S_a^m
          for (int swap = 0; swap < 2; ++swap) {
            const int ka = swap == 0 ? ft.k1 : ft.k2;
            const int kb = swap == 0 ? ft.k2 : ft.k1;
            const double Cb = ch.C[kb * lm + m], Sb = ch.S[kb * lm + m];
            Vec dC = ch.dP[i][ka] * ch.cosm[i][m] * rhat +
                     ch.P[i][ka] * (-m * ch.sinm[i][m] / ss.r[i]) * phat;
            Vec dS = ch.dP[i][ka] * ch.sinm[i][m] * rhat +
                     ch.P[i][ka] * (m * ch.cosm[i][m] / ss.r[i]) * phat;
            g += w * (Cb * dC + Sb * dS);
          }
        }
        // diagonal correction
        const double dD =
            ch.dP[i][ft.k1] * ch.P[i][ft.k2] + ch.P[i][ft.k1] * ch.dP[i][ft.k2];
        g -= dD * rhat;
        J[f][ss.src[i]] = scale * g;
      }
    }
    return;
  }

  // General-dimension double loop with analytic pair-angle derivatives.
  std::vector<std::vector<double>> P(n), dP(n);
  for (int i = 0; i < n; ++i) radial_basis(spec, ss.r[i], P[i], &dP[i]);
  for (std::size_t f = 0; f < feats.size(); ++f) {
    const auto& ft = feats[f];
    if (ft.kind != 0) continue;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      acc += P[i][ft.k1];
      J[f][ss.src[i]] = dP[i][ft.k1] * ((1.0 / ss.r[i]) * ss.x[i]);
    }
    B[f] = acc;
  }
  std::vector<double> L, dL;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const Vec xi = ss.x[i], xj = ss.x[j];
      const double ri = ss.r[i], rj = ss.r[j];
      const double t = std::clamp(dot(xi, xj) / (ri * rj), -1.0, 1.0);
      legendre(spec.l_max, t, L, &dL);
      const Vec dti = (1.0 / ri) * ((1.0 / rj) * xj - (t / ri) * xi);
      const Vec dtj = (1.0 / rj) * ((1.0 / ri) * xi - (t / rj) * xj);
      for (std::size_t f = 0; f < feats.size(); ++f) {
        const auto& ft = feats[f];
        if (ft.kind != 1) continue;
        double q = P[i][ft.k1] * P[j][ft.k2];
        double dqi = dP[i][ft.k1] * P[j][ft.k2];
        double dqj = P[i][ft.k1] * dP[j][ft.k2];
        if (ft.k1 != ft.k2) {
          q += P[i][ft.k2] * P[j][ft.k1];
          dqi += dP[i][ft.k2] * P[j][ft.k1];
          dqj += P[i][ft.k2] * dP[j][ft.k1];
        }
        B[f] += q * L[ft.l];
        J[f][ss.src[i]] +=
            dqi * L[ft.l] * ((1.0 / ri) * xi) + q * dL[ft.l] * dti;
        J[f][ss.src[j]] +=
            dqj * L[ft.l] * ((1.0 / rj) * xj) + q * dL[ft.l] * dtj;
      }
    }
}

MlipPotential::MlipPotential(const BasisSpec& spec, Coefficients c)
    : spec_(spec), coeffs_(std::move(c)) {
  if (static_cast<int>(coeffs_.c.size()) != spec_.count())
    throw std::invalid_argument("mlip: coefficient/basis size mismatch");
  for (double v : coeffs_.c)
    if (!std::isfinite(v))
      throw std::invalid_argument("mlip: non-finite coefficient");

  // Fold the coefficients into per-channel tables: evaluation then runs
  // over radial/angular channel sums instead of individual features.
  acoef_ = legendre_cos_coeffs(spec_.l_max);
  const int lm = spec_.l_max + 1;
  const int npair = (spec_.k_max_trip + 1) * (spec_.k_max_trip + 2) / 2;
  cpair_.assign(spec_.k_max_pair + 1, 0.0);
  Q_.assign(npair * lm, 0.0);
  Wdiag_.assign(npair, 0.0);
  auto feats = spec_.features();
  for (std::size_t f = 0; f < feats.size(); ++f) {
    const auto& ft = feats[f];
    const double c = coeffs_.c[f];
    if (ft.kind == 0) {
      cpair_[ft.k1] += c;
      continue;
    }
    const double s = ft.k1 == ft.k2 ? 0.5 : 1.0;
    const int pk = dpack(ft.k1, ft.k2);
    for (int m = 0; m <= ft.l; ++m) Q_[pk * lm + m] += c * s * acoef_[ft.l][m];
    Wdiag_[pk] += c * s;
  }
}

double MlipPotential::fast_energy(const StencilView& s) const {
  SortedStencil ss = sort_stencil(spec_, s);
  Channels ch = build_channels(spec_, ss, false);
  const int lm = spec_.l_max + 1;
  const int kt = spec_.k_max_trip;
  double e = 0.0;
  for (int i = 0; i < static_cast<int>(ss.x.size()); ++i)
    for (int k = 0; k <= spec_.k_max_pair; ++k) e += cpair_[k] * ch.P[i][k];
  for (int a = 0; a <= kt; ++a)
    for (int b = a; b <= kt; ++b) {
      const int pk = dpack(a, b);
      double full = 0.0;
      for (int m = 0; m < lm; ++m)
        full += Q_[pk * lm + m] * (ch.C[a * lm + m] * ch.C[b * lm + m] +
                                   ch.S[a * lm + m] * ch.S[b * lm + m]);
      e += full - Wdiag_[pk] * ch.D[ch.dpack(a, b)];
    }
  return e;
}

void MlipPotential::fast_gradient(const StencilView& s,
                                  std::vector<Vec>& grad) const {
  SortedStencil ss = sort_stencil(spec_, s);
  Channels ch = build_channels(spec_, ss, true);
  const int lm = spec_.l_max + 1;
  const int kt = spec_.k_max_trip;
  const int n = static_cast<int>(ss.x.size());
  grad.assign(s.size(), Vec{});

  // per-(a, m) accumulators GC, GS from both pair placements
  std::vector<double> GC((kt + 1) * lm, 0.0), GS((kt + 1) * lm, 0.0);
  for (int a = 0; a <= kt; ++a)
    for (int b = a; b <= kt; ++b) {
      const int pk = dpack(a, b);
      for (int m = 0; m < lm; ++m) {
        const double q = Q_[pk * lm + m];
        if (q == 0.0) continue;
        // product rule places a term on both slots; the diagonal pair
        // accumulates twice on the same slot
        GC[a * lm + m] += q * ch.C[b * lm + m];
        GS[a * lm + m] += q * ch.S[b * lm + m];
        GC[b * lm + m] += q * ch.C[a * lm + m];
        GS[b * lm + m] += q * ch.S[a * lm + m];
      }
    }

  for (int i = 0; i < n; ++i) {
    const Vec rhat = (1.0 / ss.r[i]) * ss.x[i];
    const Vec phat{-rhat[1], rhat[0]};
    double cr = 0.0, cp = 0.0;
    for (int k = 0; k <= spec_.k_max_pair; ++k) cr += cpair_[k] * ch.dP[i][k];
    for (int a = 0; a <= kt; ++a)
      for (int m = 0; m < lm; ++m) {
        const double gc = GC[a * lm + m], gs = GS[a * lm + m];
        if (gc == 0.0 && gs == 0.0) continue;
        const double trigc = ch.cosm[i][m], trigs = ch.sinm[i][m];
        cr += (gc * trigc + gs * trigs) * ch.dP[i][a];
        cp += m * (-gc * trigs + gs * trigc) * ch.P[i][a] / ss.r[i];
      }
    for (int a = 0; a <= kt; ++a)
      for (int b = a; b <= kt; ++b)
        cr -= Wdiag_[dpack(a, b)] *
              (ch.dP[i][a] * ch.P[i][b] + ch.P[i][a] * ch.dP[i][b]);
    grad[ss.src[i]] = cr * rhat + cp * phat;
  }
}

double MlipPotential::site_energy(const StencilView& s) const {
  bool planar = true;
  for (int k = 0; k < s.size(); ++k)
    if (s.rho[k][2] != 0.0 || s.du[k][2] != 0.0) planar = false;
  if (planar) return fast_energy(s);
  std::vector<double> B;
  descriptors(spec_, s, B);
  double e = 0.0;
  for (std::size_t f = 0; f < B.size(); ++f) e += coeffs_.c[f] * B[f];
  return e;
}

void MlipPotential::site_gradient(const StencilView& s,
                                  std::vector<Vec>& grad) const {
  bool planar = true;
  for (int k = 0; k < s.size(); ++k)
    if (s.rho[k][2] != 0.0 || s.du[k][2] != 0.0) planar = false;
  if (planar) {
    fast_gradient(s, grad);
    return;
  }
  std::vector<double> B;
  std::vector<std::vector<Vec>> J;
  descriptor_jacobian(spec_, s, B, J);
  grad.assign(s.size(), Vec{});
  for (std::size_t f = 0; f < B.size(); ++f) {
    const double c = coeffs_.c[f];
    if (c == 0.0) continue;
    for (int k = 0; k < s.size(); ++k) grad[k] += c * J[f][k];
  }
}

MlipHomogeneous::MlipHomogeneous(const LatticeSpec& lat, const BasisSpec& spec,
                                 double patch_radius)
    : lat_(lat), spec_(spec) {
  patch_ = build_lattice(lat, patch_radius);
  nt_ = NeighborTable::build(patch_, spec.R_cut + 1e-9);
  origin_ = patch_.find_site(Vec{0.0, 0.0, 0.0});
  stencil_ = lattice_offsets_within(lat, spec.R_cut + 1e-9);
  // drop offsets at exactly the cutoff (zero radial weight)
  std::vector<Vec> kept;
  for (const Vec& r : stencil_)
    if (norm(r) < spec.R_cut - 1e-12) kept.push_back(r);
  stencil_ = kept;
}

Eigen::VectorXd MlipHomogeneous::energy(const std::vector<Vec>& g) const {
  StencilView sv;
  sv.rho = stencil_;
  sv.du = g;
  std::vector<double> B;
  descriptors(spec_, sv, B);
  return Eigen::Map<Eigen::VectorXd>(B.data(), B.size());
}

Eigen::MatrixXd MlipHomogeneous::jacobian(const std::vector<Vec>& g) const {
  StencilView sv;
  sv.rho = stencil_;
  sv.du = g;
  std::vector<double> B;
  std::vector<std::vector<Vec>> J;
  descriptor_jacobian(spec_, sv, B, J);
  const int nB = static_cast<int>(B.size());
  const int ns = static_cast<int>(stencil_.size());
  Eigen::MatrixXd M(nB, ns * lat_.d);
  for (int f = 0; f < nB; ++f)
    for (int k = 0; k < ns; ++k)
      for (int j = 0; j < lat_.d; ++j) M(f, k * lat_.d + j) = J[f][k][j];
  return M;
}

Eigen::MatrixXd MlipHomogeneous::force_at_origin(
    const std::vector<Vec>& w) const {
  const int nB = spec_.count();
  Eigen::MatrixXd F = Eigen::MatrixXd::Zero(nB, lat_.d);
  DisplacementField wf(patch_);
  wf.u = w;
  std::vector<double> B;
  std::vector<std::vector<Vec>> J;

  StencilView sv0 = make_stencil2(patch_, nt_, nullptr, wf, origin_, nullptr);
  descriptor_jacobian(spec_, sv0, B, J);
  for (int f = 0; f < nB; ++f)
    for (int k = 0; k < sv0.size(); ++k)
      for (int j = 0; j < lat_.d; ++j) F(f, j) += J[f][k][j];

  for (const auto& e : nt_.nbrs[origin_]) {
    StencilView sv = make_stencil2(patch_, nt_, nullptr, wf, e.index, nullptr);
    int target = -1;
    for (int k = 0; k < sv.size(); ++k)
      if (norm(sv.rho[k] + e.rho) < 1e-9) target = k;
    if (target < 0) continue;
    descriptor_jacobian(spec_, sv, B, J);
    for (int f = 0; f < nB; ++f)
      for (int j = 0; j < lat_.d; ++j) F(f, j) -= J[f][target][j];
  }
  return F;
}

Eigen::VectorXd MlipHomogeneous::cb_density(const Mat& F) const {
  const int d = lat_.d;
  Eigen::MatrixXd Fd(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) Fd(i, j) = F(i, j);
  if (Fd.determinant() <= 0.0)
    throw std::invalid_argument("cb_density: det F <= 0");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Fd);
  const double smin = std::max(svd.singularValues().minCoeff(), 1e-6);
  auto offsets = lattice_offsets_within(lat_, spec_.R_cut / smin + 1e-9);
  StencilView sv;
  sv.rho = offsets;
  sv.du.resize(offsets.size());
  for (std::size_t k = 0; k < offsets.size(); ++k) {
    Vec fr{};
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) fr[i] += F(i, j) * offsets[k][j];
    sv.du[k] = fr - offsets[k];
  }
  std::vector<double> B;
  descriptors(spec_, sv, B);
  return Eigen::Map<Eigen::VectorXd>(B.data(), B.size());
}

}  // namespace latmix
