#pragma once

#include <map>
#include <optional>
#include <string>

#include "latmix/cb_taylor.hpp"
#include "latmix/mlip.hpp"

namespace latmix {

enum class ObsKind : int { EnergyDeriv = 0, ForceDeriv = 1, VirialDeriv = 2 };

// One scalar matching observation: a flattened component of a derivative
// of the homogeneous site energy, force, or Cauchy-Born density.
struct Observation {
  ObsKind kind;
  int order;               // derivative order j (virials: j = K+1 slots)
  std::vector<int> tuple;  // ordered support slots (energy/force kinds)
  std::vector<int> comp;   // per-slot components; virials: F-entry slots
  double target = 0.0;
  double w_inv = 1.0;  // locality weight w_j^{-1}(rho) = prod e^{+2 gamma |rho_i|}
  double W = 1.0;      // loss weight W_j
  double mult = 1.0;   // ordered-tuple permutation multiplicity
};

struct ObservationSet {
  LatticeSpec lat;
  double gamma = 0.5;
  std::vector<Vec> support_E;  // offsets for energy tuples
  std::vector<Vec> support_F;  // sites for force tuples (slot 0 = origin)
  std::vector<Observation> obs;

  int count() const { return static_cast<int>(obs.size()); }
  void append(const ObservationSet& other);
};

// Loss weights per derivative order (Table of practical choices).
struct LossWeights {
  double gamma = 0.5;
  std::vector<double> W_E;  // indexed by order 0..K_E
  std::vector<double> W_F;  // indexed by order 0..K_F (order 0 unused)
  double W_V = 0.0;

  static LossWeights energy_defaults(int K_E, bool with_virial);
  static LossWeights force_defaults(int K_F, bool with_virial);
};

// Matching errors eps_j and their RRMSE counterparts per (kind, order).
struct MatchErrors {
  struct Entry {
    double eps = 0.0;
    double rrmse = 0.0;
    double ref_norm = 0.0;
    int count = 0;
  };
  std::map<std::pair<int, int>, Entry> by_order;  // key: (kind, order)

  const Entry& get(ObsKind k, int j) const;
};

// Observation generation from any stencil-backed model on the homogeneous
// lattice.  Tuples are ordered representatives with multiplicities; zero
// targets are kept.  j = 1 targets are analytic, higher orders use nested
// centered differences.
ObservationSet gen_energy_obs(const HomogeneousModel& hom, int K_E,
                              double R_cut, double gamma,
                              const std::vector<double>& W_by_order,
                              const FDSteps& steps = {});
ObservationSet gen_force_obs(const HomogeneousModel& hom, int K_F,
                             double R_cut, double gamma,
                             const std::vector<double>& W_by_order,
                             const FDSteps& steps = {});
ObservationSet gen_virial_obs(const HomogeneousModel& hom, int K, double W_V,
                              const FDSteps& steps = {});

// eps_j = (sum mult w^{-1} |t_ref - t_mm|^2)^{1/2} over identically
// enumerated observation sets.
MatchErrors match_errors_sets(const ObservationSet& ref,
                              const ObservationSet& mm);

struct MatchSpec {
  int K_E = 0;
  int K_F = 0;
  int K_V = 0;  // adds virial order K_V+1 when > 0
  double R_E = 2.5;
  double R_F = 5.0;
  double gamma = 0.5;
};

// Generates both sets on a common enumeration and compares them.
MatchErrors match_errors(const HomogeneousModel& model_ref,
                         const HomogeneousModel& model_mm,
                         const MatchSpec& spec);

// Per-basis rows: the same derivative functional applied to each basis
// function; rows make the loss exactly quadratic in the coefficients.
Eigen::MatrixXd observation_rows(const MlipHomogeneous& mh,
                                 const ObservationSet& set,
                                 const FDSteps& steps = {});

// Single-observation row (thin wrapper over observation_rows).
Eigen::VectorXd observation_row(const MlipHomogeneous& mh,
                                const ObservationSet& set, int index,
                                const FDSteps& steps = {});

struct FitResult {
  Coefficients coeffs;
  int n_obs = 0;
  int n_basis = 0;
  int rank = 0;
  int zero_columns = 0;
  double loss = 0.0;
  double loss_at_zero = 0.0;
  double wall_seconds = 0.0;
  MatchErrors achieved;  // residual-based eps/RRMSE per order
};

// Weighted least squares min sum W w^{-1} mult (target - row.c)^2 solved by
// column-pivoted Householder QR with relative pivot cutoff `tol`.
FitResult assemble_and_fit(const ObservationSet& set,
                           const MlipHomogeneous& mh, double tol,
                           const FDSteps& steps = {});

}  // namespace latmix
