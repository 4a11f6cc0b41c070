#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "latmix/vec.hpp"

namespace latmix {

// Bravais lattice A*Z^d, dimensionless units with nearest-neighbor
// spacing r0 = 1.
struct LatticeSpec {
  int d = 2;
  Mat A;

  static LatticeSpec square();
  static LatticeSpec triangular();
  static LatticeSpec cubic();
};

enum class DefectType { None, Vacancy, EdgeDislocation };

struct DefectRecord {
  DefectType type = DefectType::None;
  std::vector<Vec> removed_sites;
};

enum class Region : std::uint8_t { QM = 0, MM = 1, FF = 2 };

// Finite defective reference configuration: outside B_{R_DEF} the sites
// coincide with A*Z^d restricted to B_{R_DOM}.
struct ReferenceConfig {
  LatticeSpec spec;
  std::vector<Vec> sites;    // coordinates
  std::vector<ZVec> coords;  // integer lattice coordinates per site
  bool homogeneous = true;
  double R_DEF = 0.0;
  double R_DOM = 0.0;
  DefectRecord defect;
  std::unordered_map<ZVec, int, ZVecHash> index;  // lattice coord -> site id

  int size() const { return static_cast<int>(sites.size()); }
  // Site id at position x, or -1 when x is not a site of the config.
  int find_site(const Vec& x) const;
};

// Per-site displacement vectors with the frozen far-field mask
// (u == 0 wherever frozen is set).
struct DisplacementField {
  const ReferenceConfig* config = nullptr;
  std::vector<Vec> u;
  std::vector<std::uint8_t> frozen;

  DisplacementField() = default;
  explicit DisplacementField(const ReferenceConfig& cfg)
      : config(&cfg), u(cfg.sites.size()), frozen(cfg.sites.size(), 0) {}

  int size() const { return static_cast<int>(u.size()); }
  void enforce_frozen() {
    for (std::size_t i = 0; i < u.size(); ++i)
      if (frozen[i]) u[i] = Vec{};
  }
};

struct NeighborEntry {
  int index;  // neighbor site id
  Vec rho;    // offset m - l in reference coordinates
};

// Symmetric neighbor lists within a cutoff radius (reference coordinates).
struct NeighborTable {
  double R_cut = 0.0;
  std::vector<std::vector<NeighborEntry>> nbrs;

  static NeighborTable build(const ReferenceConfig& cfg, double R_cut);
};

// Finite-difference stencil of one site: pairs (rho, D_rho u(l)).
struct StencilView {
  int center = -1;
  std::vector<Vec> rho;
  std::vector<Vec> du;  // du[k] = u(l + rho[k]) - u(l)

  int size() const { return static_cast<int>(rho.size()); }
};

StencilView make_stencil(const ReferenceConfig& cfg, const NeighborTable& nt,
                         const DisplacementField& u, int site);

// Nearest-neighbor set N(l) from the minimal-l1-norm cell generators.
struct NearestNeighborSet {
  std::vector<NeighborEntry> present;
  bool missing_any = false;  // off-domain or removed members omitted
};

// Offsets +-a_i of the minimal-norm generator matrix (2d of them);
// cached per LatticeSpec.
const std::vector<Vec>& nn_stencil_offsets(const LatticeSpec& spec);

ReferenceConfig build_lattice(const LatticeSpec& spec, double R_DOM);
ReferenceConfig apply_vacancy(const ReferenceConfig& cfg, const Vec& center);

NearestNeighborSet nearest_neighbor_set(const ReferenceConfig& cfg, int site);

// |Du(l)|_N and the global version ||Du||_{l2_N}.
double stencil_norm_nn(const DisplacementField& u, int site);
double stencil_norm_nn_global(const DisplacementField& u);

// Weighted stencil norm with weights e^{-2 gamma |rho|} over all sites,
// truncated where the weight drops below 1e-16.
double stencil_norm_weighted(const DisplacementField& u, int site,
                             double gamma);
double stencil_norm_weighted_global(const DisplacementField& u, double gamma);

// ||D(u_ref - u_h)||_{l2_N}; optional site mask restricts the outer sum.
double error_norm(const DisplacementField& u_ref, const DisplacementField& u_h,
                  const std::vector<std::uint8_t>* site_mask = nullptr);

// Adm_m: |y(l) - y(k)| > m |l - k| for all pairs.
bool check_admissible(const ReferenceConfig& cfg, const std::vector<Vec>& y,
                      double m);

}  // namespace latmix
