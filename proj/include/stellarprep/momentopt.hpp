#pragma once
// Moment-optimization loss, derivative-free minimization with restarts and
// optional quasi-Newton polish, target-set builders, and uncertainty
// propagation from stochastic targets to optimized parameters.

#include "stellarprep/ansatz.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace stellarprep::momentopt {

using ansatz::AnsatzParams;
using ansatz::CoreTemplate;
using ansatz::ObservableSpec;

struct TargetMoment {
  ObservableSpec obs;
  double target = 0.0;
  double sigma = 0.0;   // statistical error of the target
  double weight = 0.0;  // w in the loss
  std::string label;
};

struct HamiltonianSpec {
  bool single_mode = true;
  int sigma = 1;               // single-mode quadratic sign
  double m_sq = 0.0;           // lattice mass^2
  double lambda_coupling = 0.0;
  int n_modes = 1;

  static HamiltonianSpec oscillator(int sigma, double lambda);
  static HamiltonianSpec lattice(double m_sq, double lambda, int n_modes);
};

struct LossSpec {
  HamiltonianSpec ham;
  std::vector<TargetMoment> targets;
  CoreTemplate tmpl;
};

double hamiltonian_energy(const AnsatzParams& params, const HamiltonianSpec& ham);
// <H> + sum_O w_O (<O> − target_O)^2
double loss(const AnsatzParams& params, const LossSpec& spec);

struct OptOptions {
  int multistart = 1;        // independent random initializations
  int restarts = 6;          // simplex rebuilds per start
  int max_evals = 60000;
  double tol_loss = 1e-10;   // improvement over a full simplex cycle
  double tol_x = 1e-8;       // parameter displacement
  bool polish = true;        // central-difference quasi-Newton finish
  std::uint64_t seed = 0x517ee7ULL;
};

struct OptResult {
  AnsatzParams params;
  double loss_value = 0.0;
  double energy = 0.0;
  std::vector<double> residuals;  // <O> − target per target
  double delta_e = 0.0;           // filled by callers that know the spectrum
  bool converged = false;
  int restarts_used = 0;
};

struct MinimizeInit {
  enum class Kind { GaussianSeed, Given } kind = Kind::GaussianSeed;
  AnsatzParams given;  // used when kind == Given
};

OptResult minimize(const LossSpec& spec, const OptOptions& opts = {},
                   const MinimizeInit& init = {});

// Moments <phi^p pi^q> of the exact single-mode ground state, cutoff-converged.
std::function<double(int, int)> single_mode_moment_oracle(int sigma, double lambda_coupling);

// T_q = { O_{p,q} : even p, p + q <= p_max_total, (p,q) != (0,0) } with
// targets from the oracle and weights 1/target^2.
std::vector<TargetMoment> column_targets(int q_column,
                                         const std::function<double(int, int)>& oracle,
                                         int p_max_total = 8);

enum class PresetKind { MomentRatio, TwoPoint };
const std::vector<double>& preset_weight_ladder(PresetKind kind);
// pimc_table keys: "phi6","phi8","phi10" (moment-ratio) or "phi0phi4" (two-point),
// values (mean, stderr). All listed targets share the single weight w.
std::vector<TargetMoment> preset_multimode_targets(
    PresetKind kind, const std::map<std::string, std::pair<double, double>>& pimc_table,
    double w);

struct UncertaintyResult {
  OptResult central;
  Eigen::VectorXd param_mean, param_std;  // [r, orbit coefficients...]
  double energy_mean = 0.0, energy_std = 0.0;
  std::vector<double> moment_mean, moment_std;  // per target observable
  int failures = 0;
};
UncertaintyResult propagate_uncertainty(const LossSpec& spec, const OptResult& central,
                                        int n_resamples, std::uint64_t seed);

// Closed-form single-mode oracle for the rank-2 squeezed ansatz
// S(r)(c0|0> + c2|2>) against the harmonic reference.
std::pair<double, double> analytic_squeezed_oracle(double r, double c0, double c2);

double delta_E(double energy, double e0, double e1);

}  // namespace stellarprep::momentopt
