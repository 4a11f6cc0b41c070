#include "latmix/lattice.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>

namespace latmix {

namespace {

double det(const Mat& A, int d) {
  if (d == 2) return A(0, 0) * A(1, 1) - A(0, 1) * A(1, 0);
  return A(0, 0) * (A(1, 1) * A(2, 2) - A(1, 2) * A(2, 1)) -
         A(0, 1) * (A(1, 0) * A(2, 2) - A(1, 2) * A(2, 0)) +
         A(0, 2) * (A(1, 0) * A(2, 1) - A(1, 1) * A(2, 0));
}

Mat inverse(const Mat& A, int d) {
  Mat inv;
  double dt = det(A, d);
  if (std::abs(dt) < 1e-14) throw std::invalid_argument("singular cell matrix");
  if (d == 2) {
    inv(0, 0) = A(1, 1) / dt;
    inv(0, 1) = -A(0, 1) / dt;
    inv(1, 0) = -A(1, 0) / dt;
    inv(1, 1) = A(0, 0) / dt;
    inv(2, 2) = 1.0;
    return inv;
  }
  auto cof = [&](int i, int j) {
    int r0 = (i + 1) % 3, r1 = (i + 2) % 3, c0 = (j + 1) % 3, c1 = (j + 2) % 3;
    return A(r0, c0) * A(r1, c1) - A(r0, c1) * A(r1, c0);
  };
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) inv(i, j) = cof(j, i) / dt;
  return inv;
}

// Column with largest l1 norm (induced matrix 1-norm).
double norm1(const Mat& A, int d) {
  double best = 0.0;
  for (int j = 0; j < d; ++j) {
    double s = 0.0;
    for (int i = 0; i < d; ++i) s += std::abs(A(i, j));
    best = std::max(best, s);
  }
  return best;
}

struct SpecKey {
  int d;
  double a[9];
  bool operator<(const SpecKey& o) const {
    if (d != o.d) return d < o.d;
    for (int i = 0; i < 9; ++i)
      if (a[i] != o.a[i]) return a[i] < o.a[i];
    return false;
  }
};

SpecKey key_of(const LatticeSpec& s) {
  SpecKey k{};
  k.d = s.d;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) k.a[i * 3 + j] = s.A(i, j);
  return k;
}

}  // namespace

LatticeSpec LatticeSpec::square() {
  LatticeSpec s;
  s.d = 2;
  return s;
}

LatticeSpec LatticeSpec::triangular() {
  LatticeSpec s;
  s.d = 2;
  s.A(0, 0) = 1.0;
  s.A(0, 1) = 0.5;
  s.A(1, 0) = 0.0;
  s.A(1, 1) = std::sqrt(3.0) / 2.0;
  return s;
}

LatticeSpec LatticeSpec::cubic() {
  LatticeSpec s;
  s.d = 3;
  return s;
}

int ReferenceConfig::find_site(const Vec& x) const {
  Mat Ainv = inverse(spec.A, spec.d);
  Vec z = matvec(Ainv, x);
  ZVec k;
  for (int i = 0; i < spec.d; ++i) k.z[i] = std::llround(z[i]);
  Vec back;
  for (int i = 0; i < 3; ++i) back[i] = 0.0;
  for (int i = 0; i < spec.d; ++i)
    for (int j = 0; j < spec.d; ++j)
      back[i] += spec.A(i, j) * static_cast<double>(k.z[j]);
  if (norm(back - x) > 1e-8) return -1;
  auto it = index.find(k);
  return it == index.end() ? -1 : it->second;
}

// Brute-force search over unimodular re-lattices A*U with U entries in
// [-2, 2]; minimal induced 1-norm, lexicographic tie-break.
const std::vector<Vec>& nn_stencil_offsets(const LatticeSpec& spec) {
  static std::map<SpecKey, std::vector<Vec>> cache;
  static std::mutex mtx;
  std::lock_guard<std::mutex> lock(mtx);
  auto it = cache.find(key_of(spec));
  if (it != cache.end()) return it->second;

  const int d = spec.d;
  const int n = d * d;
  std::vector<int> e(n, -2);
  Mat best;
  double best_norm = 1e300;
  std::vector<double> best_flat;
  bool found = false;
  while (true) {
    Mat U;
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) U(i, j) = e[i * d + j];
    double du = det(U, d);
    if (std::abs(std::abs(du) - 1.0) < 1e-9) {
      Mat B;
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
          double s = 0.0;
          for (int k = 0; k < d; ++k) s += spec.A(i, k) * U(k, j);
          B(i, j) = s;
        }
      double nb = norm1(B, d);
      std::vector<double> flat;
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) flat.push_back(B(i, j));
      if (!found || nb < best_norm - 1e-12 ||
          (std::abs(nb - best_norm) <= 1e-12 && flat < best_flat)) {
        best = B;
        best_norm = nb;
        best_flat = flat;
        found = true;
      }
    }
    int k = 0;
    while (k < n && e[k] == 2) e[k++] = -2;
    if (k == n) break;
    ++e[k];
  }

  std::vector<Vec> offsets;
  for (int j = 0; j < d; ++j) {
    Vec a;
    for (int i = 0; i < d; ++i) a[i] = best(i, j);
    offsets.push_back(a);
    offsets.push_back(-a);
  }
  auto [pos, ok] = cache.emplace(key_of(spec), std::move(offsets));
  return pos->second;
}

ReferenceConfig build_lattice(const LatticeSpec& spec, double R_DOM) {
  if (R_DOM < 0.0) throw std::invalid_argument("R_DOM must be nonnegative");
  if (std::abs(det(spec.A, spec.d)) < 1e-12)
    throw std::invalid_argument("singular cell matrix");

  ReferenceConfig cfg;
  cfg.spec = spec;
  cfg.R_DOM = R_DOM;
  cfg.R_DEF = 0.0;
  cfg.homogeneous = true;

  // Enumerate integer coordinates inside a generous box, keep |x| <= R_DOM.
  Mat Ainv = inverse(spec.A, spec.d);
  double zmax = 0.0;
  for (int i = 0; i < spec.d; ++i) {
    double s = 0.0;
    for (int j = 0; j < spec.d; ++j) s += std::abs(Ainv(i, j));
    zmax = std::max(zmax, s);
  }
  const std::int64_t L = static_cast<std::int64_t>(std::ceil(zmax * R_DOM)) + 1;
  const double tol = 1e-9;
  const std::int64_t L3 = (spec.d == 3) ? L : 0;
  for (std::int64_t i = -L; i <= L; ++i)
    for (std::int64_t j = -L; j <= L; ++j)
      for (std::int64_t k = -L3; k <= L3; ++k) {
        Vec x;
        for (int r = 0; r < spec.d; ++r)
          x[r] = spec.A(r, 0) * i + spec.A(r, 1) * j +
                 (spec.d == 3 ? spec.A(r, 2) * k : 0.0);
        if (norm(x) <= R_DOM + tol) {
          ZVec zc;
          zc.z[0] = i;
          zc.z[1] = j;
          zc.z[2] = k;
          cfg.index.emplace(zc, static_cast<int>(cfg.sites.size()));
          cfg.sites.push_back(x);
          cfg.coords.push_back(zc);
        }
      }
  return cfg;
}

ReferenceConfig apply_vacancy(const ReferenceConfig& cfg, const Vec& center) {
  int id = cfg.find_site(center);
  if (id < 0) throw std::invalid_argument("vacancy center is not a site");

  ReferenceConfig out;
  out.spec = cfg.spec;
  out.R_DOM = cfg.R_DOM;
  out.homogeneous = false;
  out.defect = cfg.defect;
  out.defect.type = DefectType::Vacancy;
  out.defect.removed_sites.push_back(cfg.sites[id]);

  // R_DEF = nearest-neighbor distance from the removed site.
  double nn = 1e300;
  for (int s = 0; s < cfg.size(); ++s) {
    if (s == id) continue;
    nn = std::min(nn, norm(cfg.sites[s] - cfg.sites[id]));
  }
  out.R_DEF = std::max(cfg.R_DEF, nn);

  for (int s = 0; s < cfg.size(); ++s) {
    if (s == id) continue;
    out.index.emplace(cfg.coords[s], static_cast<int>(out.sites.size()));
    out.sites.push_back(cfg.sites[s]);
    out.coords.push_back(cfg.coords[s]);
  }
  return out;
}

NeighborTable NeighborTable::build(const ReferenceConfig& cfg, double R_cut) {
  NeighborTable nt;
  nt.R_cut = R_cut;
  nt.nbrs.resize(cfg.sites.size());

  // Cell-list binning on reference coordinates.
  const double cell = std::max(R_cut, 1e-6);
  std::unordered_map<ZVec, std::vector<int>, ZVecHash> bins;
  auto bin_of = [&](const Vec& x) {
    ZVec b;
    for (int i = 0; i < cfg.spec.d; ++i)
      b.z[i] = static_cast<std::int64_t>(std::floor(x[i] / cell));
    return b;
  };
  for (int s = 0; s < cfg.size(); ++s) bins[bin_of(cfg.sites[s])].push_back(s);

  const int reach = 1;
  for (int s = 0; s < cfg.size(); ++s) {
    ZVec b0 = bin_of(cfg.sites[s]);
    for (std::int64_t di = -reach; di <= reach; ++di)
      for (std::int64_t dj = -reach; dj <= reach; ++dj)
        for (std::int64_t dk = (cfg.spec.d == 3 ? -reach : 0);
             dk <= (cfg.spec.d == 3 ? reach : 0); ++dk) {
          ZVec b{b0.z[0] + di, b0.z[1] + dj, b0.z[2] + dk};
          auto it = bins.find(b);
          if (it == bins.end()) continue;
          for (int t : it->second) {
            if (t == s) continue;
            Vec rho = cfg.sites[t] - cfg.sites[s];
            if (norm(rho) <= R_cut + 1e-9)
              nt.nbrs[s].push_back(NeighborEntry{t, rho});
          }
        }
    std::sort(nt.nbrs[s].begin(), nt.nbrs[s].end(),
              [](const NeighborEntry& a, const NeighborEntry& b) {
                return a.index < b.index;
              });
  }
  return nt;
}

StencilView make_stencil(const ReferenceConfig& cfg, const NeighborTable& nt,
                         const DisplacementField& u, int site) {
  StencilView sv;
  sv.center = site;
  const auto& lst = nt.nbrs[site];
  sv.rho.reserve(lst.size());
  sv.du.reserve(lst.size());
  for (const auto& e : lst) {
    sv.rho.push_back(e.rho);
    sv.du.push_back(u.u[e.index] - u.u[site]);
  }
  (void)cfg;
  return sv;
}

NearestNeighborSet nearest_neighbor_set(const ReferenceConfig& cfg, int site) {
  if (site < 0 || site >= cfg.size())
    throw std::out_of_range("site out of range");
  NearestNeighborSet out;
  for (const Vec& a : nn_stencil_offsets(cfg.spec)) {
    Vec x = cfg.sites[site] + a;
    int id = cfg.find_site(x);
    if (id >= 0)
      out.present.push_back(NeighborEntry{id, a});
    else
      out.missing_any = true;
  }
  return out;
}

double stencil_norm_nn(const DisplacementField& u, int site) {
  const ReferenceConfig& cfg = *u.config;
  double s2 = 0.0;
  for (const Vec& a : nn_stencil_offsets(cfg.spec)) {
    int id = cfg.find_site(cfg.sites[site] + a);
    if (id < 0) continue;
    s2 += norm2(u.u[id] - u.u[site]);
  }
  return std::sqrt(s2);
}

double stencil_norm_nn_global(const DisplacementField& u) {
  double s2 = 0.0;
  for (int s = 0; s < u.size(); ++s) {
    double v = stencil_norm_nn(u, s);
    s2 += v * v;
  }
  return std::sqrt(s2);
}

double stencil_norm_weighted(const DisplacementField& u, int site,
                             double gamma) {
  if (gamma <= 0.0) throw std::invalid_argument("gamma must be positive");
  const ReferenceConfig& cfg = *u.config;
  // e^{-2 gamma R} < 1e-16  =>  R > 16 ln(10) / (2 gamma)
  const double R = 16.0 * std::log(10.0) / (2.0 * gamma);
  double s2 = 0.0;
  for (int t = 0; t < cfg.size(); ++t) {
    if (t == site) continue;
    double r = norm(cfg.sites[t] - cfg.sites[site]);
    if (r > R) continue;
    s2 += std::exp(-2.0 * gamma * r) * norm2(u.u[t] - u.u[site]);
  }
  return std::sqrt(s2);
}

double stencil_norm_weighted_global(const DisplacementField& u, double gamma) {
  double s2 = 0.0;
  for (int s = 0; s < u.size(); ++s) {
    double v = stencil_norm_weighted(u, s, gamma);
    s2 += v * v;
  }
  return std::sqrt(s2);
}

double error_norm(const DisplacementField& u_ref, const DisplacementField& u_h,
                  const std::vector<std::uint8_t>* site_mask) {
  if (u_ref.config != u_h.config || u_ref.size() != u_h.size())
    throw std::invalid_argument("error_norm: mismatched configurations");
  const ReferenceConfig& cfg = *u_ref.config;
  double s2 = 0.0;
  for (int s = 0; s < cfg.size(); ++s) {
    if (site_mask && !(*site_mask)[s]) continue;
    for (const Vec& a : nn_stencil_offsets(cfg.spec)) {
      int id = cfg.find_site(cfg.sites[s] + a);
      if (id < 0) continue;
      Vec d = (u_ref.u[id] - u_ref.u[s]) - (u_h.u[id] - u_h.u[s]);
      s2 += norm2(d);
    }
  }
  return std::sqrt(s2);
}

bool check_admissible(const ReferenceConfig& cfg, const std::vector<Vec>& y,
                      double m) {
  if (m <= 0.0) throw std::invalid_argument("m must be positive");
  const int n = cfg.size();
  if (static_cast<int>(y.size()) != n)
    throw std::invalid_argument("positions size mismatch");

  if (n <= 1500) {
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        if (norm(y[i] - y[j]) <= m * norm(cfg.sites[i] - cfg.sites[j]))
          return false;
    return true;
  }

  // Pairs farther apart than L0 in reference coordinates satisfy the bound
  // automatically given the displacement envelope.
  double dmax = 0.0;
  for (int i = 0; i < n; ++i) dmax = std::max(dmax, norm(y[i] - cfg.sites[i]));
  if (m >= 1.0) return false;  // cannot be guaranteed far away
  const double L0 = 2.0 * dmax / (1.0 - m) + 1e-9;

  const double cell = std::max(L0, 1.0);
  std::unordered_map<ZVec, std::vector<int>, ZVecHash> bins;
  auto bin_of = [&](const Vec& x) {
    ZVec b;
    for (int i = 0; i < cfg.spec.d; ++i)
      b.z[i] = static_cast<std::int64_t>(std::floor(x[i] / cell));
    return b;
  };
  for (int s = 0; s < n; ++s) bins[bin_of(cfg.sites[s])].push_back(s);
  for (int s = 0; s < n; ++s) {
    ZVec b0 = bin_of(cfg.sites[s]);
    for (std::int64_t di = -1; di <= 1; ++di)
      for (std::int64_t dj = -1; dj <= 1; ++dj)
        for (std::int64_t dk = (cfg.spec.d == 3 ? -1 : 0);
             dk <= (cfg.spec.d == 3 ? 1 : 0); ++dk) {
          ZVec b{b0.z[0] + di, b0.z[1] + dj, b0.z[2] + dk};
          auto it = bins.find(b);
          if (it == bins.end()) continue;
          for (int t : it->second) {
            if (t <= s) continue;
            double rr = norm(cfg.sites[t] - cfg.sites[s]);
            if (rr > L0) continue;
            if (norm(y[t] - y[s]) <= m * rr) return false;
          }
        }
  }
  return true;
}

}  // namespace latmix
