#include "latmix/coupling.hpp"

#include <algorithm>
#include <cmath>

namespace latmix {

Region Decomposition::classify(const Vec& x) const {
  const double r = norm(x - center);
  if (r <= R_QM + 1e-9) return Region::QM;
  if (r <= R_MM + 1e-9) return Region::MM;
  return Region::FF;
}

bool Decomposition::in_buffer(const Vec& x) const {
  const double r = norm(x - center);
  return r > R_QM + 1e-9 && r <= R_QM + buf_width + 1e-9;
}

Decomposition decompose(const ReferenceConfig& cfg, const Vec& center,
                        double R_QM, double buf_width, double R_MM) {
  if (!(cfg.R_DEF < R_QM))
    throw std::invalid_argument("decompose: defect core must lie inside R_QM");
  if (!(R_QM + buf_width <= R_MM && R_MM <= cfg.R_DOM + 1e-9))
    throw std::invalid_argument("decompose: radius ordering violation");

  Decomposition dec;
  dec.center = center;
  dec.R_QM = R_QM;
  dec.buf_width = buf_width;
  dec.R_MM = R_MM;
  dec.region.resize(cfg.size());
  dec.buffer.assign(cfg.size(), 0);
  dec.qm_buf.assign(cfg.size(), 0);
  for (int s = 0; s < cfg.size(); ++s) {
    Region r = dec.classify(cfg.sites[s]);
    dec.region[s] = r;
    if (r == Region::QM) {
      ++dec.n_qm;
      dec.qm_buf[s] = 1;
    } else if (r == Region::MM) {
      ++dec.n_mm;
      if (dec.in_buffer(cfg.sites[s])) {
        dec.buffer[s] = 1;
        dec.qm_buf[s] = 1;
        ++dec.n_buf;
      }
    } else {
      ++dec.n_ff;
    }
  }
  return dec;
}

Interpolant::Interpolant(const ReferenceConfig& defective,
                         const ReferenceConfig& homogeneous)
    : def_(&defective), hom_(&homogeneous) {
  reads_.resize(homogeneous.size());
  for (int h = 0; h < homogeneous.size(); ++h) {
    int d = defective.find_site(homogeneous.sites[h]);
    if (d >= 0) {
      reads_[h].direct = d;
      continue;
    }
    // fill from nearest-neighbor stencil members present in the defective
    // configuration
    std::vector<int> present;
    for (const Vec& a : nn_stencil_offsets(homogeneous.spec)) {
      int n = defective.find_site(homogeneous.sites[h] + a);
      if (n >= 0) present.push_back(n);
    }
    if (present.empty())
      throw std::runtime_error("interpolate: unmapped site beyond the core");
    const double w = 1.0 / present.size();
    for (int n : present) reads_[h].fill.push_back({n, w});
  }
}

DisplacementField Interpolant::apply(const DisplacementField& u) const {
  DisplacementField out(*hom_);
  for (int h = 0; h < hom_->size(); ++h) {
    const Read& r = reads_[h];
    if (r.direct >= 0) {
      out.u[h] = u.u[r.direct];
    } else {
      Vec v{};
      for (const auto& [d, w] : r.fill) v += w * u.u[d];
      out.u[h] = v;
    }
  }
  return out;
}

PotentialForceLaw::PotentialForceLaw(const LatticeSpec& lat,
                                     const SitePotential& V)
    : V_(&V) {
  const double rc = V.cutoff();
  stencil_ = lattice_offsets_within(lat, rc + 1e-9);
  support_.push_back(Vec{});
  for (const Vec& r : lattice_offsets_within(lat, 2.0 * rc + 1e-9))
    support_.push_back(r);
  auto slot_of = [&](const Vec& x) -> int {
    for (std::size_t i = 0; i < support_.size(); ++i)
      if (norm(support_[i] - x) < 1e-9) return static_cast<int>(i);
    return -1;
  };
  inner_.push_back(Vec{});
  for (const Vec& r : stencil_) inner_.push_back(r);
  slots_.resize(inner_.size());
  back_.assign(inner_.size(), -1);
  inner_slot_.assign(inner_.size(), -1);
  for (std::size_t m = 0; m < inner_.size(); ++m) {
    inner_slot_[m] = slot_of(inner_[m]);
    slots_[m].resize(stencil_.size());
    for (std::size_t k = 0; k < stencil_.size(); ++k) {
      slots_[m][k] = slot_of(inner_[m] + stencil_[k]);
      if (norm(inner_[m] + stencil_[k]) < 1e-9)
        back_[m] = static_cast<int>(k);
    }
  }
}

Vec PotentialForceLaw::force(const std::vector<Vec>& w_rel) const {
  Vec f{};
  StencilView sv;
  sv.rho = stencil_;
  sv.du.resize(stencil_.size());
  std::vector<Vec> grad;
  for (std::size_t m = 0; m < inner_.size(); ++m) {
    const Vec w_center = w_rel[inner_slot_[m]];
    for (std::size_t k = 0; k < stencil_.size(); ++k) {
      const int s = slots_[m][k];
      sv.du[k] = (s >= 0 ? w_rel[s] : Vec{}) - w_center;
    }
    V_->site_gradient(sv, grad);
    // F_0 = -grad_0 E: own-stencil entries enter the gradient negatively,
    // neighbor back-references positively
    if (m == 0) {
      for (const Vec& g : grad) f += g;
    } else if (back_[m] >= 0) {
      f -= grad[back_[m]];
    }
  }
  return f;
}

HybridModel::HybridModel(const HybridBuild& b)
    : cfg_(b.config),
      Vref_(b.Vref),
      Vmm_(b.Vmm),
      Fmm_(b.Fmm),
      disl_(b.dislocation) {
  if (!cfg_ || !Vref_)
    throw std::invalid_argument("hybrid: config and reference model required");
  dec_ = decompose(*cfg_, b.center, b.R_QM, b.buf_width, b.R_MM);
  nt_ = NeighborTable::build(*cfg_, Vref_->cutoff() + b.nbr_slack);

  hom_owned_ = std::make_unique<ReferenceConfig>(
      build_lattice(cfg_->spec, cfg_->R_DOM));
  interp_ = std::make_unique<Interpolant>(*cfg_, *hom_owned_);

  u0_.assign(cfg_->size(), Vec{});
  if (disl_) {
    disl_->validate();
    for (int s = 0; s < cfg_->size(); ++s)
      u0_[s] = core_regularized_u0(*disl_, cfg_->sites[s]);
  }
  beta_.assign(cfg_->size(), 1.0);
  for (int s = 0; s < cfg_->size(); ++s)
    if (norm(cfg_->sites[s] - dec_.center) < dec_.R_QM / 2.0) beta_[s] = 0.0;

  const ReferenceConfig& hom = interp_->homogeneous();
  hom_region_.resize(hom.size());
  for (int h = 0; h < hom.size(); ++h)
    hom_region_[h] = dec_.classify(hom.sites[h]);

  if (Vmm_) {
    build_mm_tables();
    DisplacementField zero(*cfg_);
    hybrid_energy_gradient(zero, dead_load_);
  }
  if (Fmm_) build_fm_tables();
}

void HybridModel::build_mm_tables() {
  const ReferenceConfig& hom = interp_->homogeneous();
  mm_offsets_.clear();
  for (const Vec& r : lattice_offsets_within(cfg_->spec, Vmm_->cutoff() + 1e-9))
    if (norm(r) < Vmm_->cutoff() - 1e-12) mm_offsets_.push_back(r);

  mm_sites_.clear();
  StencilView sv;
  sv.rho = mm_offsets_;
  for (int h = 0; h < hom.size(); ++h) {
    if (hom_region_[h] == Region::QM) continue;
    MMSite site;
    site.hom_id = h;
    site.read.resize(mm_offsets_.size());
    site.base.resize(mm_offsets_.size());
    bool touches_active = hom_region_[h] != Region::FF;
    for (std::size_t k = 0; k < mm_offsets_.size(); ++k) {
      Vec pos = hom.sites[h] + mm_offsets_[k];
      Vec u0c{};
      if (disl_) {
        SlipRead rd = slip_read(*disl_, hom.sites[h], mm_offsets_[k]);
        pos = rd.pos;
        u0c = rd.u0_const;
      }
      int id = hom.find_site(pos);
      site.read[k] = id;
      if (id >= 0 && hom_region_[id] != Region::FF) touches_active = true;
      if (disl_)
        site.base[k] = core_regularized_u0(*disl_, pos) + u0c -
                       core_regularized_u0(*disl_, hom.sites[h]);
      else
        site.base[k] = Vec{};
    }
    if (!touches_active) continue;
    sv.du = site.base;
    site.base_energy = Vmm_->site_energy(sv);
    mm_sites_.push_back(std::move(site));
  }
}

void HybridModel::build_fm_tables() {
  const ReferenceConfig& hom = interp_->homogeneous();
  const auto* pf = dynamic_cast<const PotentialForceLaw*>(Fmm_);
  if (pf) {
    // bulk-assembly tables: one stencil per homogeneous site
    fm_potential_ = &pf->potential();
    fm_offsets_.clear();
    for (const Vec& r :
         lattice_offsets_within(cfg_->spec, fm_potential_->cutoff() + 1e-9))
      if (norm(r) < fm_potential_->cutoff() - 1e-12) fm_offsets_.push_back(r);
    fm_bulk_.clear();
    fm_bulk_.reserve(hom.size());
    for (int h = 0; h < hom.size(); ++h) {
      MMSite site;
      site.hom_id = h;
      site.read.resize(fm_offsets_.size());
      site.base.resize(fm_offsets_.size());
      for (std::size_t k = 0; k < fm_offsets_.size(); ++k) {
        Vec pos = hom.sites[h] + fm_offsets_[k];
        Vec u0c{};
        if (disl_) {
          SlipRead rd = slip_read(*disl_, hom.sites[h], fm_offsets_[k]);
          pos = rd.pos;
          u0c = rd.u0_const;
        }
        site.read[k] = hom.find_site(pos);
        if (disl_)
          site.base[k] = core_regularized_u0(*disl_, pos) + u0c -
                         core_regularized_u0(*disl_, hom.sites[h]);
        else
          site.base[k] = Vec{};
      }
      site.base_energy = 0.0;
      fm_bulk_.push_back(std::move(site));
    }
    fm_def_to_hom_.assign(cfg_->size(), -1);
    for (int s = 0; s < cfg_->size(); ++s)
      if (dec_.region[s] == Region::MM)
        fm_def_to_hom_[s] = hom.find_site(cfg_->sites[s]);
    return;
  }

  const auto& sup = Fmm_->support();
  fm_sites_.clear();
  for (int s = 0; s < cfg_->size(); ++s) {
    if (dec_.region[s] != Region::MM) continue;
    FMSite site;
    site.def_id = s;
    site.read.resize(sup.size());
    site.base.resize(sup.size());
    for (std::size_t k = 0; k < sup.size(); ++k) {
      Vec pos = cfg_->sites[s] + sup[k];
      Vec u0c{};
      if (disl_) {
        SlipRead rd = slip_read(*disl_, cfg_->sites[s], sup[k]);
        pos = rd.pos;
        u0c = rd.u0_const;
      }
      site.read[k] = hom.find_site(pos);
      if (disl_)
        site.base[k] = core_regularized_u0(*disl_, pos) + u0c -
                       core_regularized_u0(*disl_, cfg_->sites[s]);
      else
        site.base[k] = Vec{};
    }
    fm_sites_.push_back(std::move(site));
  }
}

DisplacementField HybridModel::lift(const DisplacementField& u) const {
  return interp_->apply(u);
}

double HybridModel::mm_energy(const DisplacementField& uh) const {
  StencilView sv;
  sv.rho = mm_offsets_;
  sv.du.resize(mm_offsets_.size());
  double total = 0.0;
  for (const MMSite& site : mm_sites_) {
    const Vec uc = uh.u[site.hom_id];
    for (std::size_t k = 0; k < mm_offsets_.size(); ++k) {
      const int r = site.read[k];
      sv.du[k] = site.base[k] + (r >= 0 ? uh.u[r] : Vec{}) - uc;
    }
    total += Vmm_->site_energy(sv) - site.base_energy;
  }
  return total;
}

void HybridModel::mm_energy_gradient(const DisplacementField& uh,
                                     std::vector<Vec>& grad_h) const {
  grad_h.assign(interp_->homogeneous().size(), Vec{});
  StencilView sv;
  sv.rho = mm_offsets_;
  sv.du.resize(mm_offsets_.size());
  std::vector<Vec> g;
  for (const MMSite& site : mm_sites_) {
    const Vec uc = uh.u[site.hom_id];
    for (std::size_t k = 0; k < mm_offsets_.size(); ++k) {
      const int r = site.read[k];
      sv.du[k] = site.base[k] + (r >= 0 ? uh.u[r] : Vec{}) - uc;
    }
    Vmm_->site_gradient(sv, g);
    Vec sum{};
    for (std::size_t k = 0; k < mm_offsets_.size(); ++k) {
      const int r = site.read[k];
      if (r >= 0) grad_h[r] += g[k];
      sum += g[k];
    }
    grad_h[site.hom_id] -= sum;
  }
}

void HybridModel::scatter_hom_gradient(const std::vector<Vec>& grad_h,
                                       std::vector<Vec>& grad) const {
  const auto& reads = interp_->reads();
  for (std::size_t h = 0; h < grad_h.size(); ++h) {
    if (norm2(grad_h[h]) == 0.0) continue;
    const auto& r = reads[h];
    if (r.direct >= 0) {
      grad[r.direct] += grad_h[h];
    } else {
      for (const auto& [d, w] : r.fill) grad[d] += w * grad_h[h];
    }
  }
}

double HybridModel::hybrid_energy(const DisplacementField& u) const {
  if (!Vmm_) throw std::logic_error("hybrid: no energy-mixing MM model");
  DisplacementField u0f(*cfg_);
  u0f.u = u0_;
  std::vector<std::uint8_t> qm_only(cfg_->size(), 0);
  for (int s = 0; s < cfg_->size(); ++s)
    if (dec_.region[s] == Region::QM) qm_only[s] = 1;
  const double eqm = energy_difference(*Vref_, *cfg_, nt_,
                                       disl_ ? &u0f : nullptr, u,
                                       &dec_.qm_buf, &qm_only);
  DisplacementField uh = lift(u);
  return eqm + mm_energy(uh);
}

void HybridModel::hybrid_energy_gradient(const DisplacementField& u,
                                         std::vector<Vec>& grad) const {
  if (!Vmm_) throw std::logic_error("hybrid: no energy-mixing MM model");
  DisplacementField u0f(*cfg_);
  u0f.u = u0_;
  std::vector<std::uint8_t> qm_only(cfg_->size(), 0);
  for (int s = 0; s < cfg_->size(); ++s)
    if (dec_.region[s] == Region::QM) qm_only[s] = 1;
  std::vector<Vec> F;
  forces(*Vref_, *cfg_, nt_, disl_ ? &u0f : nullptr, u, F, &dec_.qm_buf,
         &qm_only);
  grad.assign(cfg_->size(), Vec{});
  for (int s = 0; s < cfg_->size(); ++s) grad[s] = -F[s];

  DisplacementField uh = lift(u);
  std::vector<Vec> grad_h;
  mm_energy_gradient(uh, grad_h);
  scatter_hom_gradient(grad_h, grad);
}

std::vector<Vec> HybridModel::ghost_force_field() const {
  std::vector<Vec> g = dead_load_;
  if (g.empty()) {
    DisplacementField zero(*cfg_);
    hybrid_energy_gradient(zero, g);
  }
  for (auto& v : g) v = -v;
  return g;
}

double HybridModel::hybrid_energy_gfc(const DisplacementField& u) const {
  double e = hybrid_energy(u);
  for (int s = 0; s < cfg_->size(); ++s)
    e -= beta_[s] * dot(dead_load_[s], u.u[s]);
  return e;
}

void HybridModel::hybrid_energy_gfc_gradient(const DisplacementField& u,
                                             std::vector<Vec>& grad) const {
  hybrid_energy_gradient(u, grad);
  for (int s = 0; s < cfg_->size(); ++s)
    grad[s] -= beta_[s] * dead_load_[s];
}

void HybridModel::hybrid_forces(const DisplacementField& u,
                                std::vector<Vec>& F) const {
  if (!Fmm_) throw std::logic_error("hybrid: no force-mixing MM model");
  DisplacementField u0f(*cfg_);
  u0f.u = u0_;
  std::vector<Vec> Fqm;
  forces(*Vref_, *cfg_, nt_, disl_ ? &u0f : nullptr, u, Fqm, &dec_.qm_buf,
         &dec_.qm_buf);
  F.assign(cfg_->size(), Vec{});
  for (int s = 0; s < cfg_->size(); ++s)
    if (dec_.region[s] == Region::QM) F[s] = Fqm[s];

  DisplacementField uh = lift(u);
  if (fm_potential_) {
    // assembly sweep: one stencil gradient per homogeneous site, scattered
    // to its reads; the per-site force law gives identical values
    std::vector<Vec> Fh(uh.size(), Vec{});
    StencilView sv;
    sv.rho = fm_offsets_;
    sv.du.resize(fm_offsets_.size());
    std::vector<Vec> g;
    for (const MMSite& site : fm_bulk_) {
      const Vec uc = uh.u[site.hom_id];
      for (std::size_t k = 0; k < fm_offsets_.size(); ++k) {
        const int r = site.read[k];
        sv.du[k] = site.base[k] + (r >= 0 ? uh.u[r] : Vec{}) - uc;
      }
      fm_potential_->site_gradient(sv, g);
      Vec sum{};
      for (std::size_t k = 0; k < fm_offsets_.size(); ++k) {
        const int r = site.read[k];
        if (r >= 0) Fh[r] -= g[k];
        sum += g[k];
      }
      Fh[site.hom_id] += sum;
    }
    for (int s = 0; s < cfg_->size(); ++s)
      if (fm_def_to_hom_[s] >= 0) F[s] = Fh[fm_def_to_hom_[s]];
    return;
  }

  std::vector<Vec> w(Fmm_->support().size());
  for (const FMSite& site : fm_sites_) {
    for (std::size_t k = 0; k < w.size(); ++k) {
      const int r = site.read[k];
      w[k] = site.base[k] + (r >= 0 ? uh.u[r] : Vec{});
    }
    // relative to the center slot
    const Vec wc = w[0];
    for (auto& v : w) v -= wc;
    F[site.def_id] = Fmm_->force(w);
  }
}

}  // namespace latmix
