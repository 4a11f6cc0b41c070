#include "latmix/refmodel.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

namespace latmix {

void EAMParams::validate() const {
  if (A_p <= 0 || p <= 0 || q <= 0 || C_e <= 0 || cutoff_width <= 0)
    throw std::invalid_argument("EAM parameters must be positive");
  if (R_cut < 2.0) throw std::invalid_argument("EAM R_cut must be >= 2");
}

EAMPotential::EAMPotential(const EAMParams& params) : params_(params) {
  params_.validate();
}

// Quintic smoothstep complement: 1 on [0, Rc-w], 0 at Rc, C^2 throughout.
double EAMPotential::envelope(double r, double* ds, double* dds) const {
  const double w = params_.cutoff_width;
  const double r0 = params_.R_cut - w;
  if (r <= r0) {
    if (ds) *ds = 0.0;
    if (dds) *dds = 0.0;
    return 1.0;
  }
  if (r >= params_.R_cut) {
    if (ds) *ds = 0.0;
    if (dds) *dds = 0.0;
    return 0.0;
  }
  const double t = (r - r0) / w;
  const double s = 1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t);
  if (ds) *ds = -30.0 * t * t * (1.0 - t) * (1.0 - t) / w;
  if (dds) *dds = -60.0 * t * (1.0 - t) * (1.0 - 2.0 * t) / (w * w);
  return s;
}

double EAMPotential::phi(double r, double* d1, double* d2) const {
  double ds = 0, dds = 0;
  const double s = envelope(r, d1 ? &ds : nullptr, d2 ? &dds : nullptr);
  const double e = params_.A_p * std::exp(-params_.p * (r - 1.0));
  const double ep = -params_.p * e;
  if (d1) *d1 = ep * s + e * ds;
  if (d2) *d2 = params_.p * params_.p * e * s + 2.0 * ep * ds + e * dds;
  return e * s;
}

double EAMPotential::psi(double r, double* d1, double* d2) const {
  double ds = 0, dds = 0;
  const double s = envelope(r, d1 ? &ds : nullptr, d2 ? &dds : nullptr);
  const double e = std::exp(-params_.q * (r - 1.0));
  const double ep = -params_.q * e;
  if (d1) *d1 = ep * s + e * ds;
  if (d2) *d2 = params_.q * params_.q * e * s + 2.0 * ep * ds + e * dds;
  return e * s;
}

double EAMPotential::site_energy(const StencilView& s) const {
  double pair = 0.0, rho = 0.0;
  for (int k = 0; k < s.size(); ++k) {
    const Vec x = s.rho[k] + s.du[k];
    const double r = norm(x);
    if (r < 1e-8) throw std::runtime_error("eam: atom collision");
    if (r >= params_.R_cut) continue;
    pair += phi(r);
    rho += psi(r);
  }
  return 0.5 * pair - params_.C_e * std::sqrt(std::max(rho, 0.0));
}

void EAMPotential::site_gradient(const StencilView& s,
                                 std::vector<Vec>& grad) const {
  const int n = s.size();
  grad.assign(n, Vec{});
  double rho = 0.0;
  std::vector<double> r(n), dphi(n), dpsi(n);
  std::vector<Vec> xhat(n);
  for (int k = 0; k < n; ++k) {
    const Vec x = s.rho[k] + s.du[k];
    r[k] = norm(x);
    if (r[k] < 1e-8) throw std::runtime_error("eam: atom collision");
    if (r[k] >= params_.R_cut) {
      dphi[k] = dpsi[k] = 0.0;
      continue;
    }
    xhat[k] = (1.0 / r[k]) * x;
    phi(r[k], &dphi[k]);
    double dp;
    rho += psi(r[k], &dp);
    dpsi[k] = dp;
  }
  const double Fp =
      rho > 0.0 ? -params_.C_e / (2.0 * std::sqrt(rho)) : 0.0;
  for (int k = 0; k < n; ++k) {
    if (r[k] >= params_.R_cut) continue;
    grad[k] = (0.5 * dphi[k] + Fp * dpsi[k]) * xhat[k];
  }
}

void EAMPotential::site_hessian(const StencilView& s,
                                std::vector<Mat>& hess) const {
  const int n = s.size();
  hess.assign(static_cast<std::size_t>(n) * n, Mat{});
  for (auto& H : hess)
    for (int i = 0; i < 3; ++i) H(i, i) = 0.0;

  double rho = 0.0;
  std::vector<double> r(n), dphi(n), ddphi(n), dpsi(n), ddpsi(n);
  std::vector<Vec> xhat(n);
  for (int k = 0; k < n; ++k) {
    const Vec x = s.rho[k] + s.du[k];
    r[k] = norm(x);
    if (r[k] < 1e-8) throw std::runtime_error("eam: atom collision");
    if (r[k] >= params_.R_cut) {
      dphi[k] = ddphi[k] = dpsi[k] = ddpsi[k] = 0.0;
      continue;
    }
    xhat[k] = (1.0 / r[k]) * x;
    phi(r[k], &dphi[k], &ddphi[k]);
    double dp, ddp;
    rho += psi(r[k], &dp, &ddp);
    dpsi[k] = dp;
    ddpsi[k] = ddp;
  }
  const double Fp = rho > 0.0 ? -params_.C_e / (2.0 * std::sqrt(rho)) : 0.0;
  const double Fpp =
      rho > 0.0 ? params_.C_e / (4.0 * rho * std::sqrt(rho)) : 0.0;

  for (int k = 0; k < n; ++k) {
    if (r[k] >= params_.R_cut) continue;
    for (int l = 0; l < n; ++l) {
      if (r[l] >= params_.R_cut) continue;
      Mat& H = hess[static_cast<std::size_t>(k) * n + l];
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
          double v = Fpp * dpsi[k] * dpsi[l] * xhat[k][i] * xhat[l][j];
          if (k == l) {
            const double radial = 0.5 * ddphi[k] + Fp * ddpsi[k];
            const double tang = (0.5 * dphi[k] + Fp * dpsi[k]) / r[k];
            const double P = xhat[k][i] * xhat[k][j];
            v += radial * P + tang * ((i == j ? 1.0 : 0.0) - P);
          }
          H(i, j) = v;
        }
    }
  }
}

StencilView make_stencil2(const ReferenceConfig& cfg, const NeighborTable& nt,
                          const DisplacementField* u0,
                          const DisplacementField& u, int site,
                          const std::vector<std::uint8_t>* stencil_mask) {
  StencilView sv;
  sv.center = site;
  const auto& lst = nt.nbrs[site];
  sv.rho.reserve(lst.size());
  sv.du.reserve(lst.size());
  for (const auto& e : lst) {
    if (stencil_mask && !(*stencil_mask)[e.index]) continue;
    Vec d = u.u[e.index] - u.u[site];
    if (u0) d += u0->u[e.index] - u0->u[site];
    sv.rho.push_back(e.rho);
    sv.du.push_back(d);
  }
  (void)cfg;
  return sv;
}

double energy_difference(const SitePotential& V, const ReferenceConfig& cfg,
                         const NeighborTable& nt, const DisplacementField* u0,
                         const DisplacementField& u,
                         const std::vector<std::uint8_t>* stencil_mask,
                         const std::vector<std::uint8_t>* site_mask) {
  double total = 0.0;
  StencilView base;
  for (int s = 0; s < cfg.size(); ++s) {
    if (site_mask && !(*site_mask)[s]) continue;
    StencilView sv = make_stencil2(cfg, nt, u0, u, s, stencil_mask);
    // Base stencil: displacements from u0 alone.
    base.center = s;
    base.rho = sv.rho;
    base.du.assign(sv.rho.size(), Vec{});
    if (u0) {
      int k = 0;
      const auto& lst = nt.nbrs[s];
      for (const auto& e : lst) {
        if (stencil_mask && !(*stencil_mask)[e.index]) continue;
        base.du[k++] = u0->u[e.index] - u0->u[s];
      }
    }
    total += V.site_energy(sv) - V.site_energy(base);
  }
  return total;
}

void forces(const SitePotential& V, const ReferenceConfig& cfg,
            const NeighborTable& nt, const DisplacementField* u0,
            const DisplacementField& u, std::vector<Vec>& F,
            const std::vector<std::uint8_t>* stencil_mask,
            const std::vector<std::uint8_t>* site_mask) {
  F.assign(cfg.sites.size(), Vec{});
  std::vector<Vec> grad;
  for (int s = 0; s < cfg.size(); ++s) {
    if (site_mask && !(*site_mask)[s]) continue;
    StencilView sv = make_stencil2(cfg, nt, u0, u, s, stencil_mask);
    V.site_gradient(sv, grad);
    int k = 0;
    for (const auto& e : nt.nbrs[s]) {
      if (stencil_mask && !(*stencil_mask)[e.index]) continue;
      F[e.index] -= grad[k];
      F[s] += grad[k];
      ++k;
    }
  }
}

std::vector<Vec> lattice_offsets_within(const LatticeSpec& spec, double R) {
  ReferenceConfig ball = build_lattice(spec, R);
  std::vector<Vec> out;
  out.reserve(ball.sites.size());
  for (const Vec& x : ball.sites)
    if (norm(x) > 1e-12) out.push_back(x);
  std::sort(out.begin(), out.end(), [](const Vec& a, const Vec& b) {
    double ra = norm(a), rb = norm(b);
    if (std::abs(ra - rb) > 1e-12) return ra < rb;
    if (std::abs(a[0] - b[0]) > 1e-12) return a[0] < b[0];
    if (std::abs(a[1] - b[1]) > 1e-12) return a[1] < b[1];
    return a[2] < b[2];
  });
  return out;
}

HomogeneousModel::HomogeneousModel(const LatticeSpec& spec,
                                   const SitePotential& V, double patch_radius)
    : spec_(spec), V_(&V) {
  patch_ = build_lattice(spec, patch_radius);
  nt_ = NeighborTable::build(patch_, V.cutoff() + 1e-9);
  origin_ = patch_.find_site(Vec{0.0, 0.0, 0.0});
  if (origin_ < 0) throw std::logic_error("homogeneous patch has no origin");
  stencil_ = lattice_offsets_within(spec, V.cutoff() + 1e-9);
  StencilView sv;
  sv.center = origin_;
  sv.rho = stencil_;
  sv.du.assign(stencil_.size(), Vec{});
  V0_ = V.site_energy(sv);
}

double HomogeneousModel::energy(const std::vector<Vec>& g) const {
  StencilView sv;
  sv.center = origin_;
  sv.rho = stencil_;
  sv.du = g;
  return V_->site_energy(sv);
}

void HomogeneousModel::gradient(const std::vector<Vec>& g,
                                std::vector<Vec>& grad) const {
  StencilView sv;
  sv.center = origin_;
  sv.rho = stencil_;
  sv.du = g;
  V_->site_gradient(sv, grad);
}

Vec HomogeneousModel::force_at_origin(const std::vector<Vec>& w) const {
  // grad_0 E = sum over neighbor stencils hitting the origin minus the
  // origin's own stencil sum.
  Vec g{};
  std::vector<Vec> grad;
  DisplacementField wf(patch_);
  wf.u = w;
  // Origin's own stencil.
  StencilView sv0 = make_stencil2(patch_, nt_, nullptr, wf, origin_, nullptr);
  V_->site_gradient(sv0, grad);
  for (const Vec& gk : grad) g -= gk;
  // Neighbor stencils.
  for (const auto& e : nt_.nbrs[origin_]) {
    StencilView sv = make_stencil2(patch_, nt_, nullptr, wf, e.index, nullptr);
    V_->site_gradient(sv, grad);
    for (int k = 0; k < sv.size(); ++k) {
      int target = -1;
      // identify the stencil slot pointing back at the origin
      if (norm(sv.rho[k] + e.rho) < 1e-9) target = k;
      if (target >= 0) g += grad[target];
    }
  }
  return -g;
}

std::vector<Mat> HomogeneousModel::force_jacobian_at_origin(
    double fd_step) const {
  const int n = patch_.size();
  std::vector<Mat> J(n);
  for (auto& M : J)
    for (int i = 0; i < 3; ++i) M(i, i) = 0.0;

  if (V_->has_hessian()) {
    // Assemble d grad_0 E / d w(l) from site Hessians at the homogeneous
    // state; translation invariance makes all site Hessians equal.
    StencilView sv;
    sv.rho = stencil_;
    sv.du.assign(stencil_.size(), Vec{});
    std::vector<Mat> H;
    V_->site_hessian(sv, H);
    const int ns = static_cast<int>(stencil_.size());
    // For site m, stencil slot k refers to w(m + rho_k).  grad_0 E picks
    // slot a with m + rho_a = 0 (or the full negative sum when m = 0).
    // d/د w(l) picks slot b with m + rho_b = l (or center terms).
    auto add = [&](int l, const Mat& M, double sgn) {
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) J[l](i, j) += sgn * M(i, j);
    };
    // m = 0 contribution: grad_0 term is -sum_k dV/dg_k.
    for (int k = 0; k < ns; ++k) {
      for (int b = 0; b < ns; ++b) {
        int lb = patch_.find_site(stencil_[b]);
        if (lb < 0) continue;
        // d(dV/dg_k)/d w(lb) = H[k][b]; center dependence handled below.
        add(lb, H[k * ns + b], -1.0);
      }
      // dependence on w(0): dg_b/dw(0) = -1 for every b.
      for (int b = 0; b < ns; ++b) add(origin_, H[k * ns + b], +1.0);
    }
    // m != 0 contributions: site m stencil has slot a with rho_a = -m.
    for (int a = 0; a < ns; ++a) {
      Vec m = -stencil_[a];
      int lm = patch_.find_site(m);
      if (lm < 0) continue;
      for (int b = 0; b < ns; ++b) {
        Vec dep = m + stencil_[b];  // w-site the slot b reads
        int lb = patch_.find_site(dep);
        // grad contribution +dV_m/dg_a; derivative w.r.t. w(lb) is H[a][b],
        // and w.r.t. w(m) is -sum_b H[a][b].
        if (lb >= 0) add(lb, H[a * ns + b], +1.0);
        add(lm, H[a * ns + b], -1.0);
      }
    }
    // J currently holds d grad_0 / d w; force Jacobian flips the sign.
    for (auto& M : J)
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) M(i, j) = -M(i, j);
    return J;
  }

  // Centered finite differences of the analytic force.
  std::vector<Vec> w(n, Vec{});
  for (int l = 0; l < n; ++l)
    for (int j = 0; j < spec_.d; ++j) {
      w[l][j] = fd_step;
      Vec fp = force_at_origin(w);
      w[l][j] = -fd_step;
      Vec fm = force_at_origin(w);
      w[l][j] = 0.0;
      for (int i = 0; i < 3; ++i) J[l](i, j) = (fp[i] - fm[i]) / (2 * fd_step);
    }
  return J;
}

double TightBinding::cutoff_profile(double r) const {
  if (r >= params_.R_c) return 0.0;
  return 1.0 / (1.0 + std::exp((r - params_.R_c) / params_.l_c + params_.L_c));
}

namespace {

struct TBSolution {
  Eigen::VectorXd lambda;
  Eigen::MatrixXd psi;
  std::vector<double> occ;
};

}  // namespace

// Assemble the one-orbital Hamiltonian, solve, and assign zero-temperature
// occupancies.  When the cut falls inside a degenerate multiplet the
// remaining occupancy is spread uniformly over it; this keeps the integer
// electron count and the point-group symmetry of the partition, which a
// hard cut through the multiplet would break.
static TBSolution tb_solve(const TBParams& p, const TightBinding& tb,
                           const ReferenceConfig& cfg,
                           const DisplacementField& u) {
  const int n = cfg.size();
  if (n > 2000)
    throw std::invalid_argument("tight binding limited to <= 2000 sites");
  std::vector<Vec> y(n);
  for (int s = 0; s < n; ++s) y[s] = cfg.sites[s] + u.u[s];

  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(n, n);
  NeighborTable nt = NeighborTable::build(cfg, p.R_c + 1.5);
  for (int s = 0; s < n; ++s) {
    double rho = 0.0;
    for (const auto& e : nt.nbrs[s]) {
      const double r = norm(y[e.index] - y[s]);
      if (r >= p.R_c) continue;
      rho += std::exp(-p.lambda * p.lambda * r) * tb.cutoff_profile(r);
      H(s, e.index) = (p.e_h + p.f_h * r + p.g_h * r * r) *
                      std::exp(-p.h_h * r) * tb.cutoff_profile(r);
    }
    H(s, s) = p.a + p.b * std::pow(rho, 2.0 / 3.0) +
              p.c * std::pow(rho, 4.0 / 3.0) + p.d * rho * rho;
  }
  // Hopping is a symmetric function of distance, but enforce symmetry
  // against any neighbor-list asymmetry at the cutoff.
  H = 0.5 * (H + H.transpose()).eval();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("tight binding eigensolver failed");

  TBSolution sol;
  sol.lambda = es.eigenvalues();
  sol.psi = es.eigenvectors();
  sol.occ.assign(n, 0.0);
  const int nocc = std::min<int>(
      n,
      static_cast<int>(std::llround(p.electrons_per_atom * double(n))));
  if (nocc > 0) {
    const double scale = std::max(
        1.0, std::abs(sol.lambda(n - 1)) + std::abs(sol.lambda(0)));
    const double tol = 1e-9 * scale;
    const double lam_f = sol.lambda(nocc - 1);
    int lo = nocc - 1, hi = nocc - 1;
    while (lo > 0 && std::abs(sol.lambda(lo - 1) - lam_f) < tol) --lo;
    while (hi + 1 < n && std::abs(sol.lambda(hi + 1) - lam_f) < tol) ++hi;
    for (int s = 0; s < lo; ++s) sol.occ[s] = 1.0;
    const double frac = double(nocc - lo) / double(hi - lo + 1);
    for (int s = lo; s <= hi; ++s) sol.occ[s] = frac;
  }
  return sol;
}

std::vector<double> TightBinding::site_energies(
    const ReferenceConfig& cfg, const DisplacementField& u) const {
  TBSolution sol = tb_solve(params_, *this, cfg, u);
  const int n = cfg.size();
  std::vector<double> E(n, 0.0);
  for (int s = 0; s < n; ++s) {
    if (sol.occ[s] == 0.0) continue;
    const double w = sol.occ[s] * sol.lambda(s);
    for (int l = 0; l < n; ++l) {
      const double a = sol.psi(l, s);
      E[l] += w * a * a;
    }
  }
  return E;
}

double TightBinding::band_energy(const ReferenceConfig& cfg,
                                 const DisplacementField& u) const {
  TBSolution sol = tb_solve(params_, *this, cfg, u);
  double total = 0.0;
  for (int s = 0; s < cfg.size(); ++s) total += sol.occ[s] * sol.lambda(s);
  return total;
}

double TightBinding::energy_difference(const ReferenceConfig& cfg,
                                       const DisplacementField* u0,
                                       const DisplacementField& u) const {
  DisplacementField full(cfg);
  for (int s = 0; s < cfg.size(); ++s)
    full.u[s] = u.u[s] + (u0 ? u0->u[s] : Vec{});
  DisplacementField base(cfg);
  if (u0) base.u = u0->u;
  return band_energy(cfg, full) - band_energy(cfg, base);
}

std::vector<Vec> TightBinding::forces(const ReferenceConfig& cfg,
                                      const DisplacementField& u) const {
  const double h = 1e-5;
  std::vector<Vec> F(cfg.size(), Vec{});
  DisplacementField w = u;
  for (int s = 0; s < cfg.size(); ++s)
    for (int j = 0; j < cfg.spec.d; ++j) {
      w.u[s][j] = u.u[s][j] + h;
      const double ep = band_energy(cfg, w);
      w.u[s][j] = u.u[s][j] - h;
      const double em = band_energy(cfg, w);
      w.u[s][j] = u.u[s][j];
      F[s][j] = -(ep - em) / (2.0 * h);
    }
  return F;
}

}  // namespace latmix
