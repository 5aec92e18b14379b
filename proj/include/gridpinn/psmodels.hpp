// SPDX-License-Identifier: Apache-2.0
//
// Power-system dynamics: the two-axis synchronous generator and the
// grid-following inverter, both written as x' = A x + R(x, u).

#pragma once

#include "gridpinn/core.hpp"

#include <unsupported/Eigen/AutoDiff>

#include <array>
#include <cmath>
#include <filesystem>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

namespace gridpinn::models {

// ---------------------------------------------------------------------------
// Generic model interface

/// Autonomous or time-dependent right-hand side f(x, t). Inputs u are
/// constants held by the concrete model.
class DynamicsModel {
 public:
  virtual ~DynamicsModel() = default;

  virtual std::string_view name() const = 0;
  virtual Index state_dim() const = 0;
  virtual Vector rhs(const Eigen::Ref<const Vector>& x, double t) const = 0;

  /// Exact Jacobian df/dx where the model provides one; central differences
  /// otherwise.
  virtual Matrix jacobian(const Eigen::Ref<const Vector>& x, double t) const;

  /// Evaluates f and df/dx together. The default calls rhs() and jacobian().
  virtual void linearize(const Eigen::Ref<const Vector>& x, double t,
                         Vector& f, Matrix& jac) const;
};

/// Central finite-difference Jacobian. Column j perturbs x_j by
/// +-h * max(1, |x_j|).
Matrix model_jacobian(const DynamicsModel& model,
                      const Eigen::Ref<const Vector>& x, double t,
                      double h = 1e-6);

struct NewtonOptions {
  double tolerance = 1e-9;  // infinity norm of f(x*)
  int max_iterations = 200;
  double fd_step = 1e-6;
};

/// Damped Newton on f(x) = 0 using the finite-difference Jacobian. The step
/// is halved until the residual decreases. Throws ConvergenceError carrying
/// the last residual norm.
Vector find_equilibrium(const DynamicsModel& model,
                        const Eigen::Ref<const Vector>& guess,
                        const NewtonOptions& options = {});

namespace detail {

template <int N>
using AdScalar = Eigen::AutoDiffScalar<Eigen::Matrix<double, N, 1>>;

/// Value and Jacobian of a templated rhs functor via forward-mode AutoDiff.
template <int N, typename F>
void autodiff_linearize(const F& eval, const Eigen::Ref<const Vector>& x,
                        Vector& f, Matrix& jac) {
  using Ad = AdScalar<N>;
  const Index n = x.size();
  VectorX<Ad> xa(n);
  for (Index i = 0; i < n; ++i) {
    xa(i).value() = x(i);
    xa(i).derivatives() = Eigen::Matrix<double, N, 1>::Zero(n);
    xa(i).derivatives()(i) = 1.0;
  }
  const VectorX<Ad> fa = eval(xa);
  f.resize(n);
  jac.resize(n, n);
  for (Index i = 0; i < n; ++i) {
    f(i) = fa(i).value();
    if (fa(i).derivatives().size() == 0) {
      jac.row(i).setZero();
    } else {
      jac.row(i) = fa(i).derivatives().transpose();
    }
  }
}

}  // namespace detail

/// Wraps a generic lambda `f(const VectorX<S>& x, double t) -> VectorX<S>`
/// as a DynamicsModel with an exact AutoDiff Jacobian. Used for test models
/// and toy problems.
template <typename F>
class FunctionModel final : public DynamicsModel {
 public:
  FunctionModel(std::string name, Index dim, F f)
      : name_(std::move(name)), dim_(dim), f_(std::move(f)) {}

  std::string_view name() const override { return name_; }
  Index state_dim() const override { return dim_; }

  Vector rhs(const Eigen::Ref<const Vector>& x, double t) const override {
    if (x.size() != dim_) throw ShapeError("FunctionModel: state size mismatch");
    Vector xv = x;
    Vector out = f_(xv, t);
    if (out.size() != dim_) throw ShapeError("FunctionModel: rhs size mismatch");
    return out;
  }

  Matrix jacobian(const Eigen::Ref<const Vector>& x, double t) const override {
    Vector f;
    Matrix j;
    linearize(x, t, f, j);
    return j;
  }

  void linearize(const Eigen::Ref<const Vector>& x, double t, Vector& f,
                 Matrix& jac) const override {
    if (x.size() != dim_) throw ShapeError("FunctionModel: state size mismatch");
    detail::autodiff_linearize<Eigen::Dynamic>(
        [&](const auto& xa) { return f_(xa, t); }, x, f, jac);
  }

 private:
  std::string name_;
  Index dim_;
  F f_;
};

template <typename F>
std::shared_ptr<const DynamicsModel> make_model(std::string name, Index dim,
                                                F f) {
  return std::make_shared<FunctionModel<F>>(std::move(name), dim, std::move(f));
}

// ---------------------------------------------------------------------------
// Synchronous generator

struct SgParams {
  double omega_g = 100.0 * std::numbers::pi;  // rad/s
  double R_s = 0.152;                         // ohm
  double L_s = 0.0044;                        // H
  double D_p = 10.14;                         // N m s / rad
  double J = 0.02;                            // kg m^2 / rad
  std::optional<double> T_m;                  // N m; defaults to 15.9 + D_p omega_g
  double V = 230.0 * std::numbers::sqrt3;     // V
  double m_if = -1.38;                        // V s

  double mechanical_torque() const { return T_m ? *T_m : 15.9 + D_p * omega_g; }

  /// Throws DomainError unless L_s > 0, J > 0, D_p >= 0, V > 0 and all
  /// values are finite.
  void validate() const;
};

struct SgState {
  double i_d = 0.0;
  double i_q = 0.0;
  double omega = 0.0;
  double delta = 0.0;

  Eigen::Vector4d to_vector() const { return {i_d, i_q, omega, delta}; }
  static SgState from_vector(const Eigen::Ref<const Vector>& v);
};

/// Two-axis generator right-hand side, templated on scalar so it can be
/// differentiated. State order (i_d, i_q, omega, delta).
template <typename Scalar>
VectorX<Scalar> sg_rhs(const VectorX<Scalar>& x, const SgParams& p) {
  using std::cos;
  using std::sin;
  const Scalar& i_d = x(0);
  const Scalar& i_q = x(1);
  const Scalar& w = x(2);
  const Scalar& delta = x(3);
  const double r_over_l = p.R_s / p.L_s;
  const double v_over_l = p.V / p.L_s;
  VectorX<Scalar> f(4);
  f(0) = -r_over_l * i_d + w * i_q + v_over_l * sin(delta);
  f(1) = -w * i_d - r_over_l * i_q - (p.m_if / p.L_s) * w + v_over_l * cos(delta);
  f(2) = (p.m_if / p.J) * i_q - (p.D_p / p.J) * w + p.mechanical_torque() / p.J;
  f(3) = w - p.omega_g;
  return f;
}

/// Checked evaluation of the generator rhs; non-finite inputs throw
/// DomainError.
Eigen::Vector4d sg_dynamics(const SgState& x, const SgParams& p);

/// Equilibrium near `guess` with ||f(x*)||_inf < 1e-9.
SgState sg_equilibrium(const SgParams& p, const SgState& guess);

/// Guess that converges to the stable operating point for Table-1-like
/// parameters (rotor angle on the descending side of the power curve).
SgState sg_default_guess(const SgParams& p);

class SgModel final : public DynamicsModel {
 public:
  explicit SgModel(SgParams params);

  std::string_view name() const override { return "sg"; }
  Index state_dim() const override { return 4; }
  Vector rhs(const Eigen::Ref<const Vector>& x, double t) const override;
  Matrix jacobian(const Eigen::Ref<const Vector>& x, double t) const override;
  void linearize(const Eigen::Ref<const Vector>& x, double t, Vector& f,
                 Matrix& jac) const override;

  const SgParams& params() const { return params_; }

 private:
  SgParams params_;
};

// ---------------------------------------------------------------------------
// Grid-following inverter

struct InverterParams {
  double v_phase = 240.0;    // nominal phase voltage, V (dq magnitude)
  double f_grid = 50.0;      // Hz
  double r_coupl = 0.131;    // ohm
  double x_coupl = 0.96;     // ohm at f_grid
  double v_dc = 1000.0;      // V
  double l_filter = 1.35e-3; // H
  double c_filter = 50e-6;   // F
  double r_filter = 0.056;   // ohm
  double r_ground = 100.0;   // ohm
  double f_c = 100.0;        // Hz, power-reference filter corner
  double p_ref = 10e3;       // W
  double q_ref = 5e3;        // var
  double kp_d = 1.0;
  double ki_d = 460.0;
  double kp_q = 1.0;
  double ki_q = 460.0;
  double kp_pll = 2.1;
  double ki_pll = 5000.0;
  std::optional<double> v_sat_limit;  // bridge-voltage magnitude clamp, V

  double omega_g() const { return 2.0 * std::numbers::pi * f_grid; }
  double omega_c() const { return 2.0 * std::numbers::pi * f_c; }
  double l_coupl() const { return x_coupl / omega_g(); }

  void validate() const;
};

inline constexpr Index kInverterStates = 17;

/// State names in storage order.
inline constexpr std::array<std::string_view, kInverterStates> kInverterStateNames{
    "theta", "phi_PLL", "iLd_star", "iLq_star", "q3Ld", "q3Lq",
    "qLd_err", "qLq_err", "iLd", "iLq", "iLO", "vCd",
    "vCq", "vCO", "iOd", "iOq", "iOO"};

enum InverterIndex : Index {
  kTheta = 0, kPhiPll, kILdStar, kILqStar, kQ3Ld, kQ3Lq, kQLdErr, kQLqErr,
  kILd, kILq, kILO, kVCd, kVCq, kVCO, kIOd, kIOq, kIOO
};

struct InverterState {
  std::array<double, kInverterStates> values{};

  Vector to_vector() const {
    return Eigen::Map<const Vector>(values.data(), kInverterStates);
  }
  static InverterState from_vector(const Eigen::Ref<const Vector>& v);
};

/// Nonlinear term attached to one row of the inverter model.
enum class RTag {
  zero,
  pll_prop,       // K_P^PLL v_Oq
  pll_input,      // v_Oq
  power_ref_d,    // (2/3)(v_Od P* + v_Oq Q*) / |v_O|^2
  power_ref_q,    // (2/3)(v_Oq P* - v_Od Q*) / |v_O|^2
  cap_comp_d,     // -omega C v_Cq
  cap_comp_q,     //  omega C v_Cd
  bridge_d,       // v_Id / L + omega i_Lq
  bridge_q,       // v_Iq / L - omega i_Ld
  cap_rot_d,      //  omega v_Cq
  cap_rot_q,      // -omega v_Cd
  grid_d,         // -v_Od / L_coupl + omega i_Oq
  grid_q,         // -v_Oq / L_coupl - omega i_Od
};

std::string_view to_string(RTag tag);
RTag rtag_from_string(std::string_view s);

/// Versioned linear part + nonlinear tags of the inverter model. Serialized
/// as JSON; see docs/inverter_model.md.
struct InverterDefinition {
  int version = 1;
  std::string description;
  Eigen::Matrix<double, kInverterStates, kInverterStates> A =
      Eigen::Matrix<double, kInverterStates, kInverterStates>::Zero();
  std::array<RTag, kInverterStates> r_tags{};
};

InverterDefinition build_inverter_definition(const InverterParams& p);
InverterDefinition load_inverter_definition(const std::filesystem::path& path);
void save_inverter_definition(const InverterDefinition& def,
                              const std::filesystem::path& path);

/// Grid voltage seen in the PLL frame, theta being the PLL angle offset from
/// the nominal synchronous frame.
template <typename Scalar>
std::pair<Scalar, Scalar> grid_voltage_dq(const Scalar& theta, double v_phase) {
  using std::cos;
  using std::sin;
  return {v_phase * cos(theta), -v_phase * sin(theta)};
}

/// Bridge (modulation) voltage commanded by the current controller, before
/// saturation.
template <typename Scalar>
std::pair<Scalar, Scalar> bridge_voltage(const VectorX<Scalar>& x,
                                         const Scalar& omega,
                                         const Scalar& v_od, const Scalar& v_oq,
                                         const InverterParams& p) {
  const double c = p.c_filter;
  const double l = p.l_filter;
  const Scalar ref_d = x(kILdStar) - omega * c * x(kVCq);
  const Scalar ref_q = x(kILqStar) + omega * c * x(kVCd);
  Scalar v_d = p.kp_d * (ref_d - x(kILd)) + p.ki_d * x(kQLdErr) + v_od -
               omega * l * x(kILq);
  Scalar v_q = p.kp_q * (ref_q - x(kILq)) + p.ki_q * x(kQLqErr) + v_oq +
               omega * l * x(kILd);
  return {v_d, v_q};
}

/// x' = A x + R(x, u) for the inverter. Inputs (P*, Q*, grid voltage) come
/// from `p`. Templated so the model can be differentiated.
template <typename Scalar>
VectorX<Scalar> inverter_rhs(const VectorX<Scalar>& x, const InverterParams& p,
                             const InverterDefinition& def) {
  using std::sqrt;
  VectorX<Scalar> f(kInverterStates);
  for (Index i = 0; i < kInverterStates; ++i) {
    Scalar acc = Scalar(0.0) * x(0);
    for (Index j = 0; j < kInverterStates; ++j) {
      if (def.A(i, j) != 0.0) acc += def.A(i, j) * x(j);
    }
    f(i) = acc;
  }

  const auto [v_od, v_oq] = grid_voltage_dq<Scalar>(x(kTheta), p.v_phase);
  const Scalar v_mag2 = v_od * v_od + v_oq * v_oq;
  // PLL frequency: nominal plus the angle-offset rate of row 0.
  Scalar pll_rate = f(kTheta);
  if (def.r_tags[kTheta] == RTag::pll_prop) pll_rate += p.kp_pll * v_oq;
  const Scalar omega = p.omega_g() + pll_rate;

  auto [v_id, v_iq] = bridge_voltage<Scalar>(x, omega, v_od, v_oq, p);
  if (p.v_sat_limit) {
    const Scalar mag = sqrt(v_id * v_id + v_iq * v_iq);
    if (mag > *p.v_sat_limit) {
      const Scalar k = *p.v_sat_limit / mag;
      v_id = v_id * k;
      v_iq = v_iq * k;
    }
  }

  const double l = p.l_filter;
  const double lc = p.l_coupl();
  const double c = p.c_filter;
  for (Index i = 0; i < kInverterStates; ++i) {
    switch (def.r_tags[i]) {
      case RTag::zero: break;
      case RTag::pll_prop: f(i) += p.kp_pll * v_oq; break;
      case RTag::pll_input: f(i) += v_oq; break;
      case RTag::power_ref_d:
        f(i) += (2.0 / 3.0) * (v_od * p.p_ref + v_oq * p.q_ref) / v_mag2;
        break;
      case RTag::power_ref_q:
        f(i) += (2.0 / 3.0) * (v_oq * p.p_ref - v_od * p.q_ref) / v_mag2;
        break;
      case RTag::cap_comp_d: f(i) += -omega * c * x(kVCq); break;
      case RTag::cap_comp_q: f(i) += omega * c * x(kVCd); break;
      case RTag::bridge_d: f(i) += v_id / l + omega * x(kILq); break;
      case RTag::bridge_q: f(i) += v_iq / l - omega * x(kILd); break;
      case RTag::cap_rot_d: f(i) += omega * x(kVCq); break;
      case RTag::cap_rot_q: f(i) += -omega * x(kVCd); break;
      case RTag::grid_d: f(i) += -v_od / lc + omega * x(kIOq); break;
      case RTag::grid_q: f(i) += -v_oq / lc - omega * x(kIOd); break;
    }
  }
  return f;
}

/// Checked inverter rhs: rejects non-finite states and a zero grid-voltage
/// magnitude with DomainError.
Vector inverter_dynamics(const InverterState& x, const InverterParams& p,
                         const InverterDefinition& def);

class InverterModel final : public DynamicsModel {
 public:
  InverterModel(InverterParams params, InverterDefinition definition);
  explicit InverterModel(InverterParams params);

  std::string_view name() const override { return "inverter"; }
  Index state_dim() const override { return kInverterStates; }
  Vector rhs(const Eigen::Ref<const Vector>& x, double t) const override;
  Matrix jacobian(const Eigen::Ref<const Vector>& x, double t) const override;
  void linearize(const Eigen::Ref<const Vector>& x, double t, Vector& f,
                 Matrix& jac) const override;

  const InverterParams& params() const { return params_; }
  const InverterDefinition& definition() const { return definition_; }

  /// State with the PLL locked, every current and controller state at zero,
  /// and the filter capacitor charged to the grid voltage.
  Vector enable_state() const;

  /// Operating point delivering (P*, Q*): integrates from enable_state()
  /// with the trapezoidal rule, then polishes with Newton.
  Vector nominal_steady_state() const;

 private:
  InverterParams params_;
  InverterDefinition definition_;
};

// ---------------------------------------------------------------------------
// Transforms and outputs

/// Amplitude-invariant inverse Park transform.
template <typename Scalar>
std::array<Scalar, 3> dq_to_abc(const Scalar& d, const Scalar& q,
                                const Scalar& zero, const Scalar& theta) {
  using std::cos;
  using std::sin;
  constexpr double shift = 2.0 * std::numbers::pi / 3.0;
  return {d * cos(theta) - q * sin(theta) + zero,
          d * cos(theta - shift) - q * sin(theta - shift) + zero,
          d * cos(theta + shift) - q * sin(theta + shift) + zero};
}

/// Amplitude-invariant Park transform; inverse of dq_to_abc.
template <typename Scalar>
std::array<Scalar, 3> abc_to_dq(const Scalar& a, const Scalar& b,
                                const Scalar& c, const Scalar& theta) {
  using std::cos;
  using std::sin;
  constexpr double shift = 2.0 * std::numbers::pi / 3.0;
  const Scalar d = (2.0 / 3.0) * (a * cos(theta) + b * cos(theta - shift) +
                                  c * cos(theta + shift));
  const Scalar q = -(2.0 / 3.0) * (a * sin(theta) + b * sin(theta - shift) +
                                   c * sin(theta + shift));
  const Scalar zero = (a + b + c) / 3.0;
  return {d, q, zero};
}

struct PowerPair {
  double p = 0.0;  // W
  double q = 0.0;  // var
};

/// P = 3/2 (v_d i_d + v_q i_q), Q = 3/2 (v_q i_d - v_d i_q).
PowerPair output_power(double v_od, double v_oq, double i_od, double i_oq);

/// Output power of an inverter state, using the grid voltage in the PLL
/// frame and the coupling-branch current.
PowerPair inverter_output_power(const Eigen::Ref<const Vector>& x,
                                const InverterParams& p);

}  // namespace gridpinn::models
