#pragma once

#include <string>

#include "rompc/cert/falsify.hpp"
#include "rompc/cert/synth.hpp"
#include "rompc/core/constraints.hpp"
#include "rompc/mhe/mhe.hpp"
#include "rompc/sim/config.hpp"
#include "rompc/tube/controllers.hpp"

namespace rompc::sim {

using core::ConstraintSet;
using core::PlantModel;

// Bare quadrotor: Euler-discretized ten-state model with the position, angle
// and input limits.  Tightening gains are zero until certificates are
// attached (see SystemBundle).
std::pair<PlantModel, ConstraintSet> build_quadrotor(double h = 0.05,
                                                     double w_bar = 0.9e-3);

// Bare 2-D double integrator with disturbance on both states and a noisy
// position measurement.
std::pair<PlantModel, ConstraintSet> build_double_integrator(double h = 0.1,
                                                             double w_bar = 0.02);

// Everything a closed-loop run needs: model, certificates, tightened
// constraint sets, tube gains, setpoint.
struct SystemBundle {
  PlantModel model;
  cert::SynthesizedCertificates certs;
  ConstraintSet constraints;            // homothetic tightening (exact, sqrt)
  ConstraintSet constraints_superadd;   // range-calibrated superadditive gains
  tube::TubeGains gains;                // certified cross-gains
  tube::RpiBounds rpi;
  VecXd x_s, u_s;
  VecXd x0_default;
  double terminal_c_f = 0.0;         // sublevel radius, free-initial formulations
  double terminal_c_f_pinned = 0.0;  // drift-absorbing sublevel for pinned ones
  bool pinned_terminal_ok = false;   // calibration feasible for the pinned form
  double s_lo = 0.0;                 // linear-tightening anchor

  obs::LuenbergerObserver make_observer() const {
    return obs::LuenbergerObserver(model, certs.L, certs.observer);
  }
  mhe::MheConfig make_mhe_config(int M) const;
  cert::SampleOpts make_sample_opts(std::size_t count, std::uint64_t seed) const;

  cert::SampleOpts sample_template;  // centres and clamps; count/seed overridden
};

std::string default_quadrotor_certs();

// Quadrotor bundle; certificates come from the checked-in artifact unless a
// different path is given (empty path: synthesize on the fly).
SystemBundle quadrotor_bundle(const std::string& cert_path = default_quadrotor_certs(),
                              double w_bar = 0.9e-3, int N_for_calibration = 20);

// 2-D bundle (certificates synthesized at construction; fast).
SystemBundle double_integrator_bundle(double w_bar = 0.02, int N_for_calibration = 12);

// Certificate (de)serialization for the artifact/config files.
void save_certificates(const cert::SynthesizedCertificates& certs, KeyValueConfig& cfg);
cert::SynthesizedCertificates load_certificates(const KeyValueConfig& cfg);

// LPV synthesis input for the quadrotor (used by the offline synthesis tool).
cert::LinearSynthesisInput quadrotor_synthesis_input(double h = 0.05);

// Sublevel-terminal calibration: the row cap keeps every tightened constraint
// satisfiable on the set under the terminal law; the pinned variant must also
// absorb the N-step-discounted tube drift each step.  Returns (c_f_free,
// c_f_pinned, pinned_feasible).
struct TerminalCalibration {
  double c_f_free = 0.0;
  double c_f_pinned = 0.0;
  bool pinned_ok = false;
};
TerminalCalibration calibrate_terminal_sublevel(
    const cert::SynthesizedCertificates& certs, const tube::TubeGains& gains,
    const tube::RpiBounds& rpi, const ConstraintSet& tightened_rows,
    const std::vector<std::pair<VecXd, VecXd>>& affine_rows, const VecXd& x_s,
    const VecXd& u_s, double w_bar, int N);

// Samples the terminal-set conditions (invariance under the terminal law with
// the injected drift, and tightened-row satisfaction); returns the worst
// violation found (<= 0 means the sampled check passed).
double verify_terminal_sublevel(const PlantModel& model,
                                const cert::SynthesizedCertificates& certs,
                                const tube::TubeGains& gains,
                                const tube::RpiBounds& rpi,
                                const ConstraintSet& tightened_rows, const VecXd& x_s,
                                const VecXd& u_s, double c_f, double drift,
                                std::size_t samples, std::uint64_t seed);

// Attaches tightening gains to affine constraint rows (a, b):
//   sigma_o(e) = (|a|/sqrt(lmin(Po))) e^{1/2}
//   sigma_s(s) = (|a + K'b|/sqrt(lmin(Pd))) s^{1/2}
// plus a superadditive linear variant with slope anchored at s_lo (valid for
// every propagated scaling, which stays >= s_lo for k >= 1 and is exactly
// zero at k = 0 in the pinned formulations).
std::pair<ConstraintSet, ConstraintSet> attach_affine_tightening(
    const ConstraintSet& base, const std::vector<std::pair<VecXd, VecXd>>& rows,
    const MatXd& K, const cert::QuadraticForm& Pd, const cert::QuadraticForm& Po,
    double s_lo);

}  // namespace rompc::sim
