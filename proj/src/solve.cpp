#include "latmix/solve.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace latmix {

namespace {

// Free-DOF packing.
struct DofMap {
  const ReferenceConfig* cfg;
  int d;
  std::vector<int> free_sites;

  explicit DofMap(const DisplacementField& u)
      : cfg(u.config), d(u.config->spec.d) {
    for (int s = 0; s < u.size(); ++s)
      if (!u.frozen[s]) free_sites.push_back(s);
  }
  int size() const { return static_cast<int>(free_sites.size()) * d; }
  void gather(const DisplacementField& u, Eigen::VectorXd& x) const {
    x.resize(size());
    int k = 0;
    for (int s : free_sites)
      for (int j = 0; j < d; ++j) x(k++) = u.u[s][j];
  }
  void scatter(const Eigen::VectorXd& x, DisplacementField& u) const {
    int k = 0;
    for (int s : free_sites)
      for (int j = 0; j < d; ++j) u.u[s][j] = x(k++);
  }
  void gather_field(const std::vector<Vec>& f, Eigen::VectorXd& x) const {
    x.resize(size());
    int k = 0;
    for (int s : free_sites)
      for (int j = 0; j < d; ++j) x(k++) = f[s][j];
  }
};

double sup_norm(const Eigen::VectorXd& v) {
  return v.size() ? v.cwiseAbs().maxCoeff() : 0.0;
}

}  // namespace

SolveResult minimize(const EnergyFn& energy, const FieldFn& gradient,
                     const DisplacementField& u0_guess,
                     const SolverConfig& cfg) {
  SolveResult res;
  res.u = u0_guess;
  res.u.enforce_frozen();
  DofMap dof(res.u);
  const int n = dof.size();

  Eigen::VectorXd x(n), g(n);
  dof.gather(res.u, x);
  std::vector<Vec> gfield;
  auto eval_grad = [&](const Eigen::VectorXd& xv, Eigen::VectorXd& gv) {
    dof.scatter(xv, res.u);
    gradient(res.u, gfield);
    dof.gather_field(gfield, gv);
  };
  auto eval_energy = [&](const Eigen::VectorXd& xv) {
    dof.scatter(xv, res.u);
    return energy(res.u);
  };

  double f = eval_energy(x);
  eval_grad(x, g);
  res.grad_norm = sup_norm(g);
  if (res.grad_norm < cfg.grad_tol) {
    res.converged = true;
    res.final_value = f;
    dof.scatter(x, res.u);
    return res;
  }

  const int m = std::max(1, cfg.history);
  std::vector<Eigen::VectorXd> S, Y;
  std::vector<double> rho;

  for (int it = 0; it < cfg.max_iter; ++it) {
    // two-loop recursion
    Eigen::VectorXd q = g;
    std::vector<double> alpha(S.size());
    for (int i = static_cast<int>(S.size()) - 1; i >= 0; --i) {
      alpha[i] = rho[i] * S[i].dot(q);
      q -= alpha[i] * Y[i];
    }
    if (!S.empty()) {
      const double gamma =
          S.back().dot(Y.back()) / Y.back().squaredNorm();
      q *= gamma;
    } else {
      q *= 1.0 / std::max(1.0, sup_norm(g));
    }
    for (std::size_t i = 0; i < S.size(); ++i) {
      double beta = rho[i] * Y[i].dot(q);
      q += (alpha[i] - beta) * S[i];
    }
    Eigen::VectorXd p = -q;
    double slope = g.dot(p);
    if (!(slope < 0.0)) {
      p = -g;
      slope = g.dot(p);
      S.clear();
      Y.clear();
      rho.clear();
    }

    // Armijo backtracking, capped so one update cannot hop basins.
    double step = 1.0;
    double fnew = 0.0;
    Eigen::VectorXd xnew;
    Eigen::VectorXd gnew(n);
    bool accepted = false;
    bool have_gnew = false;
    const double p_inf = sup_norm(p);
    const double x_inf = sup_norm(x);
    if (cfg.max_step > 0.0 && step * p_inf > cfg.max_step)
      step = cfg.max_step / p_inf;
    for (int ls = 0; ls < 40; ++ls) {
      if (step * p_inf < 1e-13 * (1.0 + x_inf)) break;  // numerically null
      xnew = x + step * p;
      fnew = eval_energy(xnew);
      if (fnew <= f + cfg.armijo_c * step * slope) {
        accepted = true;
        break;
      }
      step *= cfg.backtrack;
    }
    if (!accepted) {
      // The energy is a small difference of large site sums, so near the
      // minimum its rounding floor hides the sufficient decrease.  The
      // gradient is still evaluated directly and accurately: accept a step
      // that shrinks it (in l2, which is smoother than the sup norm) while
      // not raising the energy beyond rounding resolution.
      const double fres = 1e-11 * (std::abs(f) + 1.0);
      const double gn2 = g.norm();
      step = std::min(1.0, cfg.max_step > 0.0 && p_inf > 0.0
                               ? cfg.max_step / p_inf
                               : 1.0);
      for (int ls = 0; ls < 24; ++ls) {
        xnew = x + step * p;
        fnew = eval_energy(xnew);
        if (fnew <= f + fres) {
          eval_grad(xnew, gnew);
          if (gnew.norm() <= gn2 * (1.0 - 1e-6)) {
            accepted = true;
            have_gnew = true;
            break;
          }
        }
        step *= cfg.backtrack;
      }
    }
    if (!accepted) {
      if (!S.empty()) {
        // stale curvature: drop the memory and retry from steepest descent
        S.clear();
        Y.clear();
        rho.clear();
        continue;
      }
      res.diagnostic = "line-search failure";
      res.final_value = f;
      dof.scatter(x, res.u);
      res.iterations = it;
      return res;
    }

    if (!have_gnew) eval_grad(xnew, gnew);
    Eigen::VectorXd s = xnew - x, yv = gnew - g;
    const double sy = s.dot(yv);
    if (sy > 1e-14 * s.norm() * yv.norm()) {
      S.push_back(s);
      Y.push_back(yv);
      rho.push_back(1.0 / sy);
      if (static_cast<int>(S.size()) > m) {
        S.erase(S.begin());
        Y.erase(Y.begin());
        rho.erase(rho.begin());
      }
    }
    x = xnew;
    f = fnew;
    g = gnew;
    res.iterations = it + 1;
    res.grad_norm = sup_norm(g);
    if (cfg.keep_log)
      res.log.push_back({double(it + 1), f, res.grad_norm, step});
    if (res.grad_norm < cfg.grad_tol) {
      res.converged = true;
      break;
    }
  }
  if (!res.converged && res.diagnostic.empty())
    res.diagnostic = "max iterations exceeded";
  res.final_value = f;
  dof.scatter(x, res.u);
  res.u.enforce_frozen();
  return res;
}

namespace {

// Restarted GMRES on the finite-difference Jacobian action.
Eigen::VectorXd gmres(const std::function<Eigen::VectorXd(
                          const Eigen::VectorXd&)>& apply,
                      const Eigen::VectorXd& rhs, int m, int restarts,
                      double rel_tol, bool* stagnated) {
  const int n = static_cast<int>(rhs.size());
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  const double bnorm = rhs.norm();
  if (stagnated) *stagnated = false;
  if (bnorm == 0.0) return x;

  for (int cycle = 0; cycle < restarts; ++cycle) {
    Eigen::VectorXd r = rhs - apply(x);
    double beta = r.norm();
    if (beta / bnorm < rel_tol) return x;

    Eigen::MatrixXd V(n, m + 1), H = Eigen::MatrixXd::Zero(m + 1, m);
    Eigen::VectorXd cs(m), sn(m), gvec = Eigen::VectorXd::Zero(m + 1);
    V.col(0) = r / beta;
    gvec(0) = beta;
    int k = 0;
    for (; k < m; ++k) {
      Eigen::VectorXd w = apply(V.col(k));
      for (int i = 0; i <= k; ++i) {
        H(i, k) = w.dot(V.col(i));
        w -= H(i, k) * V.col(i);
      }
      H(k + 1, k) = w.norm();
      if (H(k + 1, k) > 1e-300) V.col(k + 1) = w / H(k + 1, k);
      // Givens rotations
      for (int i = 0; i < k; ++i) {
        double t = cs(i) * H(i, k) + sn(i) * H(i + 1, k);
        H(i + 1, k) = -sn(i) * H(i, k) + cs(i) * H(i + 1, k);
        H(i, k) = t;
      }
      double denom = std::hypot(H(k, k), H(k + 1, k));
      if (denom < 1e-300) {
        ++k;
        break;
      }
      cs(k) = H(k, k) / denom;
      sn(k) = H(k + 1, k) / denom;
      H(k, k) = denom;
      H(k + 1, k) = 0.0;
      gvec(k + 1) = -sn(k) * gvec(k);
      gvec(k) = cs(k) * gvec(k);
      if (std::abs(gvec(k + 1)) / bnorm < rel_tol) {
        ++k;
        break;
      }
      if (H(k + 1, k) > 1e-300 && false) break;  // unreachable guard
    }
    // back substitution on the k x k triangular system
    Eigen::VectorXd y = Eigen::VectorXd::Zero(k);
    for (int i = k - 1; i >= 0; --i) {
      double s = gvec(i);
      for (int j = i + 1; j < k; ++j) s -= H(i, j) * y(j);
      y(i) = s / H(i, i);
    }
    for (int i = 0; i < k; ++i) x += y(i) * V.col(i);
    if (std::abs(gvec(k)) / bnorm < rel_tol) return x;
  }
  if (stagnated) *stagnated = true;
  return x;
}

}  // namespace

SolveResult solve_force_balance(const FieldFn& force,
                                const DisplacementField& u0_guess,
                                const SolverConfig& cfg) {
  SolveResult res;
  res.u = u0_guess;
  res.u.enforce_frozen();
  DofMap dof(res.u);
  const int n = dof.size();

  std::vector<Vec> ffield;
  auto eval_force = [&](const Eigen::VectorXd& xv, Eigen::VectorXd& Fv) {
    dof.scatter(xv, res.u);
    force(res.u, ffield);
    dof.gather_field(ffield, Fv);
  };

  Eigen::VectorXd x(n), F(n);
  dof.gather(res.u, x);
  eval_force(x, F);
  double fnorm = F.norm();
  res.grad_norm = sup_norm(F);
  int grow_streak = 0;

  for (int it = 0; it < cfg.max_newton; ++it) {
    if (res.grad_norm < cfg.grad_tol) {
      res.converged = true;
      break;
    }
    const double eps = cfg.fd_step * (1.0 + x.norm());
    Eigen::VectorXd Fbase = F;
    auto apply = [&](const Eigen::VectorXd& v) {
      const double vn = v.norm();
      if (vn == 0.0) return Eigen::VectorXd(Eigen::VectorXd::Zero(n));
      Eigen::VectorXd Fp(n);
      eval_force(x + (eps / vn) * v, Fp);
      return Eigen::VectorXd((Fp - Fbase) * (vn / eps));
    };
    bool stagnated = false;
    // solve J delta = -F
    Eigen::VectorXd delta =
        gmres(apply, -F, std::min(cfg.krylov_dim, n), 4, 1e-6, &stagnated);
    if (delta.norm() == 0.0) {
      res.diagnostic = "krylov stagnation";
      break;
    }

    // residual-norm backtracking, with the same per-update cap
    double lambda = 1.0;
    if (cfg.max_step > 0.0) {
      const double dn = sup_norm(delta);
      if (dn > cfg.max_step) lambda = cfg.max_step / dn;
    }
    Eigen::VectorXd xnew, Fnew(n);
    double fnew = 0.0;
    bool accepted = false;
    for (int ls = 0; ls < 12; ++ls) {
      xnew = x + lambda * delta;
      eval_force(xnew, Fnew);
      fnew = Fnew.norm();
      if (fnew <= (1.0 - 1e-4 * lambda) * fnorm || fnew < cfg.grad_tol) {
        accepted = true;
        break;
      }
      lambda *= 0.5;
    }
    if (!accepted) {
      ++grow_streak;
      if (grow_streak >= 5) {
        res.diagnostic = "divergence: residual growth";
        break;
      }
    } else {
      grow_streak = 0;
    }
    x = xnew;
    F = Fnew;
    fnorm = fnew;
    res.grad_norm = sup_norm(F);
    res.iterations = it + 1;
    if (cfg.keep_log)
      res.log.push_back({double(it + 1), fnorm, res.grad_norm, lambda});
    if (stagnated && res.grad_norm >= cfg.grad_tol) {
      res.diagnostic = "krylov stagnation";
      break;
    }
  }
  if (!res.converged && res.diagnostic.empty())
    res.diagnostic = "max iterations exceeded";
  res.final_value = fnorm;
  dof.scatter(x, res.u);
  res.u.enforce_frozen();
  return res;
}

DecayProfile decay_profile(const DisplacementField& u, double r_min,
                           double r_max, double bin_width) {
  if (bin_width <= 0.0 || r_max <= r_min)
    throw std::invalid_argument("decay_profile: bad window");
  DecayProfile out;
  const ReferenceConfig& cfg = *u.config;
  const int nbins = static_cast<int>(std::ceil((r_max - r_min) / bin_width));
  if (nbins < 4) throw std::invalid_argument("decay_profile: too few annuli");
  std::vector<double> mx(nbins, 0.0);
  for (int s = 0; s < cfg.size(); ++s) {
    const double r = norm(cfg.sites[s]);
    if (r < r_min || r >= r_max) continue;
    const int b = static_cast<int>((r - r_min) / bin_width);
    mx[b] = std::max(mx[b], stencil_norm_nn(u, s));
  }
  std::vector<double> lx, ly;
  for (int b = 0; b < nbins; ++b) {
    const double rc = r_min + (b + 0.5) * bin_width;
    out.rows.push_back({rc, mx[b]});
    if (mx[b] > 0.0) {
      lx.push_back(std::log(rc));
      ly.push_back(std::log(mx[b]));
    }
  }
  if (lx.size() >= 4) {
    out.fit = linear_fit(lx, ly);
    out.slope_defined = true;
  }
  return out;
}

}  // namespace latmix
