#pragma once
// Euclidean path-integral Monte Carlo for the (1+1)D lattice phi^4 theory:
// Metropolis sampling of the second-order-Trotter action, autocorrelation
// control, bootstrap error estimation, ground-state moment / gap extraction,
// and zero-temporal-spacing extrapolation.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace stellarprep::pimc {

// N spatial sites x M imaginary-time slices, both periodic.
struct LatticeShape {
  int n_sites = 0;
  int n_timeslices = 0;
  double theta = 0.0;  // temporal spacing in units of the spatial spacing

  LatticeShape(int n, int m, double th);
  double temperature() const { return n_timeslices * theta; }  // T = M theta
};

// phi_{j,t}: row = spatial site j, column = time slice t.
using FieldConfig = Eigen::MatrixXd;

struct LatticeEnsemble {
  LatticeShape shape;
  std::vector<FieldConfig> configs;
  double iac = 0.0;         // integrated autocorrelation of the phi_{0,0} series
  double acceptance = 0.0;  // mean Metropolis acceptance during collection
  std::uint64_t seed = 0;
  int thinning = 1;         // sweeps between stored configs (after auto-increase)
  double step_width = 0.0;  // tuned proposal width
};

struct EstimateWithError {
  double mean = 0.0;
  double std_err = 0.0;  // std-dev of the bootstrap means
  std::vector<double> bootstrap_means;
  double skewness = 0.0;
  double excess_kurtosis = 0.0;
  bool normality_warning = false;  // screened, never fatal
};

struct FitResult {
  enum class Model { Linear, Quadratic };
  EstimateWithError intercept;
  Model model = Model::Linear;     // the selected model
  double chi2_red = 0.0;           // reduced chi^2 of the selected model
  double chi2_red_linear = 0.0;
  double chi2_red_quadratic = 0.0;
};

// S = sum_{t,j} (theta/2)[m^2 phi^2 + (lambda/2) phi^4
//                         + (Delta_tau phi)^2/theta^2 + (Delta_x phi)^2]
double action(const FieldConfig& config, double m_sq, double lambda_coupling, double theta);

// One site-by-site Gaussian-proposal Metropolis sweep targeting e^{-S}.
// Returns the acceptance fraction of the sweep.
double metropolis_sweep(FieldConfig& config, double m_sq, double lambda_coupling,
                        double theta, double step_width, std::mt19937_64& rng);

// Burn in with the proposal width auto-tuned toward 50% acceptance, then
// collect n_samples configs; thinning is doubled (up to thinning_cap) until
// the integrated autocorrelation of the phi_{0,0} series is <= iac_target.
LatticeEnsemble sample_chain(const LatticeShape& shape, double m_sq,
                             double lambda_coupling, int n_samples, int thinning,
                             int burn_in, std::uint64_t seed, double iac_target = 1.6,
                             int thinning_cap = 2048);

// 1/2 + sum_{d=0}^{100} AC(d) with
// AC(d) = [n/(n-d)] sum_{a<n-d} s_a s_{a+d} / sum_a s_a^2. Requires n > 200.
double integrated_autocorrelation(const std::vector<double>& series);

// Resample configs with replacement; mean of per-resample means, std_err from
// their spread. Deterministic under a fixed seed.
EstimateWithError bootstrap_estimate(const LatticeEnsemble& ensemble,
                                     const std::function<double(const FieldConfig&)>& observable,
                                     int n_bootstrap = 200, std::uint64_t seed = 0x600d5eedULL);

// <phi_0 phi_j>, volume- and time-averaged over all (site, slice) origins.
EstimateWithError two_point(const LatticeEnsemble& ensemble, int separation,
                            int n_bootstrap = 200, std::uint64_t seed = 0x600d5eedULL);
// <phi^power> with the same averaging (power even in practice).
EstimateWithError local_moment(const LatticeEnsemble& ensemble, int power,
                               int n_bootstrap = 200, std::uint64_t seed = 0x600d5eedULL);

// Virial estimate <pi^2> = (2+m^2)<phi^2> + lambda <phi^4> - 2<phi_0 phi_1>,
// combined per bootstrap resample (all inputs from the same ensemble/seed).
EstimateWithError virial_pi2(const EstimateWithError& phi2, const EstimateWithError& phi4,
                             const EstimateWithError& phi0phi1, double m_sq,
                             double lambda_coupling);

// Symmetrized temporal correlator C(t) = <phi_{j,t} phi_{j,0}>, t = 0..M/2,
// with a shared bootstrap index stream across t.
std::vector<EstimateWithError> temporal_correlator(const LatticeEnsemble& ensemble,
                                                   int n_bootstrap = 200,
                                                   std::uint64_t seed = 0x600d5eedULL);

struct EffectiveMassPoint {
  double tau = 0.0;  // t * theta
  EstimateWithError m_eff;
  bool usable = false;  // false when the cosh-ratio equation has no root
};

// Solve C(t)/C(t+1) = cosh[m(T/2 - t theta)]/cosh[m(T/2 - (t+1) theta)]
// per point by bracketed bisection; errors from per-bootstrap solves.
std::vector<EffectiveMassPoint> effective_mass(const std::vector<EstimateWithError>& correlator,
                                               double temperature, double theta);

// Average usable effective-mass points inside [t_min_frac, t_max_frac] * (T/2)
// (default: middle third), combined per bootstrap resample.
EstimateWithError plateau_average(const std::vector<EffectiveMassPoint>& points,
                                  double temperature, double t_min_frac = 1.0 / 3.0,
                                  double t_max_frac = 2.0 / 3.0);

// Weighted least squares of a+b*theta and a+b*theta^2; the model with the
// lower reduced chi^2 wins (quadratic preferred when they differ by < 0.05).
// Intercept errors come from per-bootstrap refits when every point carries
// bootstrap means of equal count, otherwise from the WLS covariance.
FitResult extrapolate_theta(const std::vector<std::pair<double, EstimateWithError>>& points);

// Binary persistence: one text header line, then row-major 64-bit floats.
void save_ensemble(const std::string& path, const LatticeEnsemble& ensemble);
LatticeEnsemble load_ensemble(const std::string& path);

}  // namespace stellarprep::pimc
