#pragma once

#include <Eigen/Dense>
#include <array>
#include <functional>
#include <unordered_map>
#include <vector>

#include "latmix/refmodel.hpp"

namespace latmix {

// Centered finite-difference steps per derivative order, balancing
// truncation against roundoff at double precision.
struct FDSteps {
  double h[5] = {0.0, 1e-5, 1e-4, 3e-4, 1e-3};
  double order(int j) const { return h[std::min(std::max(j, 1), 4)]; }
};

// Taylor-expanded MM site potential T_K V^h about the homogeneous state.
// Coefficient tables are stored sparsely over ordered offset tuples with
// multiplicity bookkeeping; entries below 1e-14 are pruned.
class TaylorPotential : public SitePotential {
 public:
  struct Pair2 {
    int i, j;     // support slots, i <= j
    double mult;  // number of ordered tuples the representative stands for
    Mat M;        // d^2 V / dg_i dg_j
  };
  struct Trip3 {
    int i, j, k;  // support slots, i <= j <= k
    double mult;
    std::array<double, 27> T;  // T[(a*3+b)*3+c] = d^3 V / dg_i^a dg_j^b dg_k^c
  };

  TaylorPotential(const LatticeSpec& spec, int K, double R_cut);

  std::string name() const override { return "taylor"; }
  double cutoff() const override { return R_cut_; }
  double site_energy(const StencilView& s) const override;
  void site_gradient(const StencilView& s,
                     std::vector<Vec>& grad) const override;

  int order() const { return K_; }
  double base_value() const { return V0_; }
  const std::vector<Vec>& support() const { return support_; }
  const std::vector<Vec>& grad_table() const { return grad1_; }
  const std::vector<Pair2>& quad_table() const { return quad_; }
  const std::vector<Trip3>& cubic_table() const { return cubic_; }

  // Evaluation on support-aligned displacements (taylor_eval fast path).
  double eval(const std::vector<Vec>& g) const;
  void eval_gradient(const std::vector<Vec>& g, std::vector<Vec>& grad) const;

  int support_slot(const Vec& rho) const;  // -1 when outside the table

 private:
  friend TaylorPotential taylor_coefficients(const HomogeneousModel&, int,
                                             double, const FDSteps&, double);
  LatticeSpec spec_;
  Mat Ainv_;
  int K_;
  double R_cut_;
  double V0_ = 0.0;
  std::vector<Vec> support_;
  std::unordered_map<ZVec, int, ZVecHash> slot_;
  std::vector<Vec> grad1_;
  std::vector<Pair2> quad_;
  std::vector<Trip3> cubic_;
};

// Taylor-expanded homogeneous force law T_K F^h (force-mixing MM model).
class TaylorForce {
 public:
  struct Quad {
    int i, j;  // support slots, i <= j
    double mult;
    std::array<double, 27> T;  // T[(a*3+b)*3+c]: F comp a, dw_i^b, dw_j^c
  };

  TaylorForce(const LatticeSpec& spec, int K, double R_cut);

  int order() const { return K_; }
  double cutoff() const { return R_cut_; }
  const std::vector<Vec>& support() const { return support_; }  // includes 0
  const std::vector<Mat>& jacobian_table() const { return J1_; }
  const std::vector<Quad>& quad_table() const { return quad_; }
  int support_slot(const Vec& rho) const;

  // Force at the stencil center for support-aligned displacements w
  // (w relative to the center's own displacement; the law is translation
  // invariant so only differences matter).
  Vec eval(const std::vector<Vec>& w) const;

 private:
  friend TaylorForce taylor_force_coefficients(const HomogeneousModel&, int,
                                               double, const FDSteps&,
                                               double);
  LatticeSpec spec_;
  Mat Ainv_;
  int K_;
  double R_cut_;
  std::vector<Vec> support_;
  std::unordered_map<ZVec, int, ZVecHash> slot_;
  std::vector<Mat> J1_;
  std::vector<Quad> quad_;
};

// Order list of Cauchy-Born tensors d^j_F W_cb(I), j = 1..j_max, stored as
// flat arrays over (d x d)^j slots.
struct CauchyBornTensor {
  int d = 2;
  int j_max = 0;
  std::vector<std::vector<double>> tensors;  // tensors[j-1], size (d*d)^j

  double& at(int j, const std::vector<int>& slots);
  double at(int j, const std::vector<int>& slots) const;
};

// W_cb(F) = V^h((F - I) Lambda^h_*), stencil truncated at
// R_cut / sigma_min(F).
double cauchy_born_density(const HomogeneousModel& hom, const Mat& F);

// Nested central differences of W_cb about the identity, symmetrized over
// slots.
CauchyBornTensor virial_derivatives(const HomogeneousModel& hom, int j_max,
                                    const FDSteps& steps = {});

// Lattice-sum route sum_rho V^h_{,rho...}(0) (x) rho (x) ... for j = 1, 2;
// the independent cross-check of the finite-difference path.
CauchyBornTensor virial_lattice_sum(const HomogeneousModel& hom, int j_max,
                                    const FDSteps& steps = {});

TaylorPotential taylor_coefficients(const HomogeneousModel& hom, int K,
                                    double R_cut, const FDSteps& steps = {},
                                    double prune = 1e-14);
TaylorForce taylor_force_coefficients(const HomogeneousModel& hom, int K,
                                      double R_cut, const FDSteps& steps = {},
                                      double prune = 1e-14);

// Nested central differences in the entries of F of a vector-valued
// functional; returns the flat tensor with index
// ((slot_1 * d^2 + slot_2) * d^2 + ...) * m + component.
std::vector<double> fd_deriv_wrt_F(
    const std::function<Eigen::VectorXd(const Mat&)>& W, int d, int order,
    double step, int m);

}  // namespace latmix
