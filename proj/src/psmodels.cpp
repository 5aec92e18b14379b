// SPDX-License-Identifier: Apache-2.0

#include "gridpinn/psmodels.hpp"

#include "gridpinn/odesolve.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

namespace gridpinn::models {

namespace {

void require_finite(const Eigen::Ref<const Vector>& x, const char* what) {
  if (!x.allFinite()) throw DomainError(std::string(what) + ": non-finite state");
}

void require_positive(double v, const char* name) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    throw DomainError(std::string(name) + " must be positive and finite");
  }
}

}  // namespace

// ---------------------------------------------------------------------------

Matrix DynamicsModel::jacobian(const Eigen::Ref<const Vector>& x,
                               double t) const {
  return model_jacobian(*this, x, t);
}

void DynamicsModel::linearize(const Eigen::Ref<const Vector>& x, double t,
                              Vector& f, Matrix& jac) const {
  f = rhs(x, t);
  jac = jacobian(x, t);
}

Matrix model_jacobian(const DynamicsModel& model,
                      const Eigen::Ref<const Vector>& x, double t, double h) {
  if (!(h > 0.0)) throw ContractError("model_jacobian: step must be positive");
  const Index n = model.state_dim();
  if (x.size() != n) throw ShapeError("model_jacobian: state size mismatch");
  Matrix jac(n, n);
  Vector xp = x;
  for (Index j = 0; j < n; ++j) {
    const double dx = h * std::max(1.0, std::abs(x(j)));
    xp(j) = x(j) + dx;
    const Vector fp = model.rhs(xp, t);
    xp(j) = x(j) - dx;
    const Vector fm = model.rhs(xp, t);
    xp(j) = x(j);
    jac.col(j) = (fp - fm) / (2.0 * dx);
  }
  return jac;
}

Vector find_equilibrium(const DynamicsModel& model,
                        const Eigen::Ref<const Vector>& guess,
                        const NewtonOptions& options) {
  require_finite(guess, "find_equilibrium");
  Vector x = guess;
  Vector f = model.rhs(x, 0.0);
  double res = f.lpNorm<Eigen::Infinity>();
  for (int it = 0; it < options.max_iterations; ++it) {
    if (res < options.tolerance) return x;
    const Matrix jac = model_jacobian(model, x, 0.0, options.fd_step);
    const Vector step = jac.fullPivLu().solve(-f);
    double scale = 1.0;
    bool improved = false;
    for (int halvings = 0; halvings < 40; ++halvings) {
      const Vector trial = x + scale * step;
      const Vector ft = model.rhs(trial, 0.0);
      const double rt = ft.lpNorm<Eigen::Infinity>();
      if (std::isfinite(rt) && rt < res) {
        x = trial;
        f = ft;
        res = rt;
        improved = true;
        break;
      }
      scale *= 0.5;
    }
    if (!improved) break;
  }
  if (res < options.tolerance) return x;
  throw ConvergenceError("find_equilibrium: Newton did not converge",
                         options.max_iterations, res);
}

// ---------------------------------------------------------------------------
// Synchronous generator

void SgParams::validate() const {
  require_positive(L_s, "L_s");
  require_positive(J, "J");
  require_positive(V, "V");
  if (!(D_p >= 0.0) || !std::isfinite(D_p)) {
    throw DomainError("D_p must be nonnegative and finite");
  }
  for (double v : {omega_g, R_s, m_if, mechanical_torque()}) {
    if (!std::isfinite(v)) throw DomainError("SgParams: non-finite value");
  }
}

SgState SgState::from_vector(const Eigen::Ref<const Vector>& v) {
  if (v.size() != 4) throw ShapeError("SgState: expected 4 entries");
  return {v(0), v(1), v(2), v(3)};
}

Eigen::Vector4d sg_dynamics(const SgState& x, const SgParams& p) {
  p.validate();
  const Vector xv = x.to_vector();
  require_finite(xv, "sg_dynamics");
  return sg_rhs<double>(xv, p);
}

SgState sg_default_guess(const SgParams& p) {
  // Row 3 fixes i_q; rows 1-2 give i_d and delta. Starting delta near pi
  // selects the stable root.
  const double i_q = (p.D_p * p.omega_g - p.mechanical_torque()) / p.m_if;
  return {0.0, i_q, p.omega_g, std::numbers::pi};
}

SgState sg_equilibrium(const SgParams& p, const SgState& guess) {
  p.validate();
  const Vector g = guess.to_vector();
  require_finite(g, "sg_equilibrium");
  const SgModel model(p);
  return SgState::from_vector(find_equilibrium(model, g));
}

SgModel::SgModel(SgParams params) : params_(std::move(params)) {
  params_.validate();
}

Vector SgModel::rhs(const Eigen::Ref<const Vector>& x, double) const {
  if (x.size() != 4) throw ShapeError("SgModel: expected 4 states");
  require_finite(x, "sg_dynamics");
  const Vector xv = x;
  return sg_rhs<double>(xv, params_);
}

Matrix SgModel::jacobian(const Eigen::Ref<const Vector>& x, double t) const {
  Vector f;
  Matrix j;
  linearize(x, t, f, j);
  return j;
}

void SgModel::linearize(const Eigen::Ref<const Vector>& x, double, Vector& f,
                        Matrix& jac) const {
  if (x.size() != 4) throw ShapeError("SgModel: expected 4 states");
  require_finite(x, "sg_dynamics");
  detail::autodiff_linearize<4>(
      [&](const auto& xa) { return sg_rhs(xa, params_); }, x, f, jac);
}

// ---------------------------------------------------------------------------
// Inverter

void InverterParams::validate() const {
  require_positive(l_filter, "L");
  require_positive(c_filter, "C");
  require_positive(x_coupl, "X_coupl");
  require_positive(f_grid, "f_grid");
  for (double v : {v_phase, r_coupl, v_dc, r_filter, r_ground, f_c, p_ref,
                   q_ref, kp_d, ki_d, kp_q, ki_q, kp_pll, ki_pll}) {
    if (!std::isfinite(v)) throw DomainError("InverterParams: non-finite value");
  }
  if (v_sat_limit && !(*v_sat_limit > 0.0)) {
    throw DomainError("InverterParams: saturation limit must be positive");
  }
}

InverterState InverterState::from_vector(const Eigen::Ref<const Vector>& v) {
  if (v.size() != kInverterStates) throw ShapeError("InverterState: expected 17 entries");
  InverterState s;
  for (Index i = 0; i < kInverterStates; ++i) s.values[static_cast<size_t>(i)] = v(i);
  return s;
}

namespace {

constexpr std::array<std::pair<RTag, std::string_view>, 13> kTagNames{{
    {RTag::zero, "zero"},
    {RTag::pll_prop, "pll_prop"},
    {RTag::pll_input, "pll_input"},
    {RTag::power_ref_d, "power_ref_d"},
    {RTag::power_ref_q, "power_ref_q"},
    {RTag::cap_comp_d, "cap_comp_d"},
    {RTag::cap_comp_q, "cap_comp_q"},
    {RTag::bridge_d, "bridge_d"},
    {RTag::bridge_q, "bridge_q"},
    {RTag::cap_rot_d, "cap_rot_d"},
    {RTag::cap_rot_q, "cap_rot_q"},
    {RTag::grid_d, "grid_d"},
    {RTag::grid_q, "grid_q"},
}};

}  // namespace

std::string_view to_string(RTag tag) {
  for (const auto& [t, name] : kTagNames) {
    if (t == tag) return name;
  }
  return "zero";
}

RTag rtag_from_string(std::string_view s) {
  for (const auto& [t, name] : kTagNames) {
    if (name == s) return t;
  }
  throw ConfigError("unknown R tag: " + std::string(s));
}

InverterDefinition build_inverter_definition(const InverterParams& p) {
  p.validate();
  InverterDefinition def;
  def.version = 1;
  def.description =
      "Grid-following inverter, current control mode: PLL, second-order "
      "power-reference filter, PI current controller with capacitor-current "
      "compensation, LC filter, coupling impedance. Stiff grid at the "
      "coupling point.";
  auto& A = def.A;
  auto& tags = def.r_tags;
  tags.fill(RTag::zero);

  const double wc = p.omega_c();
  const double l = p.l_filter;
  const double c = p.c_filter;
  const double lc = p.l_coupl();

  // PLL
  A(kTheta, kPhiPll) = p.ki_pll;
  tags[kTheta] = RTag::pll_prop;
  tags[kPhiPll] = RTag::pll_input;

  // Second-order reference filter: i* / r = wc^2 / (s^2 + sqrt(2) wc s + wc^2)
  A(kILdStar, kILdStar) = -std::numbers::sqrt2 * wc;
  A(kILdStar, kQ3Ld) = wc * wc;
  A(kILqStar, kILqStar) = -std::numbers::sqrt2 * wc;
  A(kILqStar, kQ3Lq) = wc * wc;
  A(kQ3Ld, kILdStar) = -1.0;
  A(kQ3Lq, kILqStar) = -1.0;
  tags[kQ3Ld] = RTag::power_ref_d;
  tags[kQ3Lq] = RTag::power_ref_q;

  // Current-controller integrators
  A(kQLdErr, kILdStar) = 1.0;
  A(kQLdErr, kILd) = -1.0;
  A(kQLqErr, kILqStar) = 1.0;
  A(kQLqErr, kILq) = -1.0;
  tags[kQLdErr] = RTag::cap_comp_d;
  tags[kQLqErr] = RTag::cap_comp_q;

  // Filter inductor
  A(kILd, kILd) = -p.r_filter / l;
  A(kILd, kVCd) = -1.0 / l;
  A(kILq, kILq) = -p.r_filter / l;
  A(kILq, kVCq) = -1.0 / l;
  A(kILO, kILO) = -p.r_filter / l;
  A(kILO, kVCO) = -1.0 / l;
  tags[kILd] = RTag::bridge_d;
  tags[kILq] = RTag::bridge_q;

  // Filter capacitor
  A(kVCd, kILd) = 1.0 / c;
  A(kVCd, kIOd) = -1.0 / c;
  A(kVCq, kILq) = 1.0 / c;
  A(kVCq, kIOq) = -1.0 / c;
  A(kVCO, kILO) = 1.0 / c;
  A(kVCO, kIOO) = -1.0 / c;
  tags[kVCd] = RTag::cap_rot_d;
  tags[kVCq] = RTag::cap_rot_q;

  // Coupling impedance; the zero-sequence path carries the ground resistor
  // with the coefficient as printed for this model.
  A(kIOd, kVCd) = 1.0 / lc;
  A(kIOd, kIOd) = -p.r_coupl / lc;
  A(kIOq, kVCq) = 1.0 / lc;
  A(kIOq, kIOq) = -p.r_coupl / lc;
  A(kIOO, kVCO) = 1.0 / lc;
  A(kIOO, kIOO) = -(3.0 * p.r_ground - p.r_coupl) / lc;
  tags[kIOd] = RTag::grid_d;
  tags[kIOq] = RTag::grid_q;
  return def;
}

InverterDefinition load_inverter_definition(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open inverter definition: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("invalid inverter definition " + path.string() + ": " + e.what());
  }
  InverterDefinition def;
  try {
    if (j.at("format").get<std::string>() != "gridpinn-inverter-model") {
      throw ConfigError("inverter definition: unexpected format tag");
    }
    def.version = j.at("version").get<int>();
    if (def.version != 1) throw ConfigError("inverter definition: unsupported version");
    def.description = j.value("description", "");
    const auto& names = j.at("states");
    if (names.size() != static_cast<size_t>(kInverterStates)) {
      throw ConfigError("inverter definition: expected 17 states");
    }
    for (Index i = 0; i < kInverterStates; ++i) {
      if (names[static_cast<size_t>(i)].get<std::string>() != kInverterStateNames[static_cast<size_t>(i)]) {
        throw ConfigError("inverter definition: state order mismatch at " + std::to_string(i));
      }
    }
    const auto& a = j.at("A");
    if (a.size() != static_cast<size_t>(kInverterStates * kInverterStates)) {
      throw ConfigError("inverter definition: A must hold 289 entries (row-major)");
    }
    for (Index r = 0; r < kInverterStates; ++r) {
      for (Index c = 0; c < kInverterStates; ++c) {
        def.A(r, c) = a[static_cast<size_t>(r * kInverterStates + c)].get<double>();
      }
    }
    const auto& tags = j.at("R");
    if (tags.size() != static_cast<size_t>(kInverterStates)) {
      throw ConfigError("inverter definition: R must hold 17 tags");
    }
    for (Index i = 0; i < kInverterStates; ++i) {
      def.r_tags[static_cast<size_t>(i)] = rtag_from_string(tags[static_cast<size_t>(i)].get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("invalid inverter definition " + path.string() + ": " + e.what());
  }
  return def;
}

void save_inverter_definition(const InverterDefinition& def,
                              const std::filesystem::path& path) {
  nlohmann::json j;
  j["format"] = "gridpinn-inverter-model";
  j["version"] = def.version;
  j["description"] = def.description;
  j["states"] = nlohmann::json::array();
  for (auto name : kInverterStateNames) j["states"].push_back(std::string(name));
  j["A"] = nlohmann::json::array();
  for (Index r = 0; r < kInverterStates; ++r) {
    for (Index c = 0; c < kInverterStates; ++c) j["A"].push_back(def.A(r, c));
  }
  j["R"] = nlohmann::json::array();
  for (auto tag : def.r_tags) j["R"].push_back(std::string(to_string(tag)));
  std::ofstream out(path);
  if (!out) throw IoError("cannot write inverter definition: " + path.string());
  out << j.dump(1) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

Vector inverter_dynamics(const InverterState& x, const InverterParams& p,
                         const InverterDefinition& def) {
  const Vector xv = x.to_vector();
  require_finite(xv, "inverter_dynamics");
  if (!(p.v_phase * p.v_phase > 0.0)) {
    throw DomainError("inverter_dynamics: zero output-voltage magnitude");
  }
  return inverter_rhs<double>(xv, p, def);
}

InverterModel::InverterModel(InverterParams params, InverterDefinition definition)
    : params_(std::move(params)), definition_(std::move(definition)) {
  params_.validate();
}

InverterModel::InverterModel(InverterParams params)
    : InverterModel(params, build_inverter_definition(params)) {}

Vector InverterModel::rhs(const Eigen::Ref<const Vector>& x, double) const {
  if (x.size() != kInverterStates) throw ShapeError("InverterModel: expected 17 states");
  return inverter_dynamics(InverterState::from_vector(x), params_, definition_);
}

Matrix InverterModel::jacobian(const Eigen::Ref<const Vector>& x, double t) const {
  Vector f;
  Matrix j;
  linearize(x, t, f, j);
  return j;
}

void InverterModel::linearize(const Eigen::Ref<const Vector>& x, double,
                              Vector& f, Matrix& jac) const {
  if (x.size() != kInverterStates) throw ShapeError("InverterModel: expected 17 states");
  require_finite(x, "inverter_dynamics");
  if (!(params_.v_phase * params_.v_phase > 0.0)) {
    throw DomainError("inverter_dynamics: zero output-voltage magnitude");
  }
  detail::autodiff_linearize<kInverterStates>(
      [&](const auto& xa) { return inverter_rhs(xa, params_, definition_); }, x,
      f, jac);
}

Vector InverterModel::enable_state() const {
  Vector x = Vector::Zero(kInverterStates);
  const auto [v_od, v_oq] = grid_voltage_dq<double>(0.0, params_.v_phase);
  x(kVCd) = v_od;
  x(kVCq) = v_oq;
  return x;
}

Vector InverterModel::nominal_steady_state() const {
  ode::NewtonConfig newton;
  const auto traj = ode::implicit_trapezoidal(*this, enable_state(), {0.0, 0.3},
                                              1e-5, newton);
  NewtonOptions opts;
  opts.tolerance = 1e-7;
  return find_equilibrium(*this, traj.states.col(traj.states.cols() - 1), opts);
}

// ---------------------------------------------------------------------------

PowerPair output_power(double v_od, double v_oq, double i_od, double i_oq) {
  return {1.5 * (v_od * i_od + v_oq * i_oq), 1.5 * (v_oq * i_od - v_od * i_oq)};
}

PowerPair inverter_output_power(const Eigen::Ref<const Vector>& x,
                                const InverterParams& p) {
  const auto [v_od, v_oq] = grid_voltage_dq<double>(x(kTheta), p.v_phase);
  return output_power(v_od, v_oq, x(kIOd), x(kIOq));
}

}  // namespace gridpinn::models
