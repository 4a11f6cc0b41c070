#include "latmix/predictor.hpp"

#include <cmath>

namespace latmix {

namespace {

constexpr double kTwoPi = 2.0 * M_PI;

// Angle of x measured from the +x axis in (0, 2 pi).
double branch_angle(const Vec& x) {
  double th = std::atan2(x[1], x[0]);
  if (th <= 0.0) th += kTwoPi;
  return th;
}

double eta_step(double s) {
  if (s <= 0.0) return 0.0;
  if (s >= 1.0) return 1.0;
  return 3.0 * s * s - 2.0 * s * s * s;
}

}  // namespace

void DislocationSpec::validate() const {
  if (nu <= 0.0 || nu >= 0.5)
    throw std::invalid_argument("dislocation: nu must be in (0, 0.5)");
  if (b[1] != 0.0)
    throw std::invalid_argument("dislocation: Burgers vector must be (b1, 0)");
  if (r_hat <= 0.0) throw std::invalid_argument("dislocation: r_hat <= 0");
}

Vec cle_edge_solution(const DislocationSpec& spec, const Vec& x) {
  const double X = x[0] - spec.core[0];
  const double Y = x[1] - spec.core[1];
  const double r2 = X * X + Y * Y;
  if (r2 < 1e-24)
    throw std::invalid_argument("cle_edge_solution: evaluation at the core");
  if (std::abs(Y) < 1e-14 && X >= 0.0)
    throw std::invalid_argument("cle_edge_solution: evaluation on the cut");
  const double th = branch_angle(Vec{X, Y});
  const double b1 = spec.b[0];
  const double nu = spec.nu;
  Vec u;
  u[0] = b1 / kTwoPi * (th + X * Y / (2.0 * (1.0 - nu) * r2));
  u[1] = -b1 / kTwoPi *
         ((1.0 - 2.0 * nu) / (4.0 * (1.0 - nu)) * std::log(r2) +
          (X * X - Y * Y) / (4.0 * (1.0 - nu) * r2));
  return u;
}

Vec xi_map(const DislocationSpec& spec, const Vec& x) {
  const Vec rel{x[0] - spec.core[0], x[1] - spec.core[1]};
  const double r = norm(rel);
  const double shift =
      eta_step(r / spec.r_hat) * branch_angle(rel) / kTwoPi;
  return Vec{x[0] - spec.b[0] * shift, x[1]};
}

Vec xi_inverse(const DislocationSpec& spec, const Vec& y) {
  // x = y + (x - xi(x)); damped iteration from x0 = y.
  Vec x = y;
  const double damp = 0.8;
  for (int it = 0; it < 50; ++it) {
    Vec xi = xi_map(spec, x);
    Vec next{x[0] + damp * (y[0] - xi[0]), x[1]};
    if (std::abs(next[0] - x[0]) < 1e-13) {
      x = next;
      Vec check = xi_map(spec, x);
      if (norm(check - y) < 1e-10) return x;
    }
    x = next;
  }
  Vec check = xi_map(spec, x);
  if (norm(check - y) < 1e-10) return x;
  throw std::runtime_error("xi_inverse: fixed point did not converge");
}

Vec core_regularized_u0(const DislocationSpec& spec, const Vec& x) {
  Vec z = xi_inverse(spec, x);
  // The regularized argument can land exactly on the cut only at lattice
  // positions excluded by construction (Gamma does not meet the lattice).
  return cle_edge_solution(spec, z);
}

SlipRead slip_read(const DislocationSpec& spec, const Vec& site,
                   const Vec& rho) {
  SlipRead out;
  out.pos = site + rho;
  out.u0_const = Vec{};
  if (!spec.in_omega_gamma(site)) return out;
  const bool site_above = spec.above_cut(site);
  const bool nbr_above = spec.above_cut(out.pos);
  if (site_above == nbr_above) return out;
  if (site_above) {
    out.pos -= spec.b;
    out.u0_const = -spec.b;
  } else {
    out.pos += spec.b;
    out.u0_const = spec.b;
  }
  return out;
}

std::vector<Vec> slip_strain(const DislocationSpec& spec, const Vec& site,
                             const std::vector<Vec>& offsets) {
  std::vector<Vec> e(offsets.size());
  const Vec u0c = core_regularized_u0(spec, site);
  for (std::size_t k = 0; k < offsets.size(); ++k) {
    SlipRead rd = slip_read(spec, site, offsets[k]);
    e[k] = core_regularized_u0(spec, rd.pos) + rd.u0_const - u0c;
  }
  return e;
}

double poisson_from_cb(const CauchyBornTensor& cb) {
  if (cb.j_max < 2)
    throw std::invalid_argument("poisson_from_cb: need the order-2 tensor");
  const int d = cb.d;
  const int dd = d * d;
  const auto& C = cb.tensors[1];
  auto at = [&](int i, int a, int j, int b) {
    return C[static_cast<std::size_t>(i * d + a) * dd + (j * d + b)];
  };
  double T1 = 0.0, T2 = 0.0;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      T1 += at(i, i, j, j);
      T2 += at(i, j, i, j);
    }
  const double mu = (T2 - T1 / d) / (d * d + d - 2);
  const double lambda = (T1 - 2.0 * mu * d) / (d * d);
  if (mu <= 0.0 || lambda + mu <= 0.0)
    throw std::runtime_error("poisson_from_cb: non-elliptic tensor");
  return lambda / (2.0 * (lambda + mu));
}

}  // namespace latmix
