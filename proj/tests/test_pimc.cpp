#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "stellarprep/ansatz.hpp"
#include "stellarprep/pimc.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

using namespace stellarprep;
using namespace stellarprep::pimc;

namespace {

// exact covariance of the Gaussian (free) lattice action at finite theta
double free_lattice_two_point(int sep, int n, int m, double theta, double m_sq) {
  double s = 0.0;
  for (int k = 0; k < n; ++k) {
    const double sx = std::sin(std::numbers::pi * k / n);
    for (int nt = 0; nt < m; ++nt) {
      const double st = std::sin(std::numbers::pi * nt / m);
      const double a = theta * (m_sq + 4.0 * sx * sx) + 4.0 * st * st / theta;
      s += std::cos(2.0 * std::numbers::pi * sep * k / n) / a;
    }
  }
  return s / (n * m);
}

// continuum (theta -> 0, T -> infinity) ground-state two-point function
double free_continuum_two_point(int sep, int n, double m_sq) {
  double s = 0.0;
  for (int k = 0; k < n; ++k) {
    const double sx = std::sin(std::numbers::pi * k / n);
    const double omega = std::sqrt(m_sq + 4.0 * sx * sx);
    s += std::cos(2.0 * std::numbers::pi * sep * k / n) / (2.0 * omega);
  }
  return s / n;
}

}  // namespace

TEST_CASE("action evaluation") {
  FieldConfig zero = FieldConfig::Zero(3, 4);
  CHECK(action(zero, 1.0, 2.0, 0.3) == doctest::Approx(0.0));

  FieldConfig one = FieldConfig::Constant(1, 1, 1.0);
  CHECK(action(one, 1.0, 2.0, 1.0) == doctest::Approx(1.0).epsilon(1e-14));

  // constant field: gradients vanish
  const double c = 0.7;
  FieldConfig flat = FieldConfig::Constant(4, 6, c);
  const double expected = 4 * 6 * 0.25 * (0.5 * c * c / 2.0 + 1.5 * std::pow(c, 4) / 4.0);
  CHECK(action(flat, 0.5, 1.5, 0.25) == doctest::Approx(expected).epsilon(1e-12));

  // local Metropolis weight is consistent with the global action
  std::mt19937_64 rng(5);
  FieldConfig f = FieldConfig::Random(3, 5);
  FieldConfig g = f;
  metropolis_sweep(g, 0.8, 1.2, 0.4, 0.5, rng);
  CHECK(std::isfinite(action(g, 0.8, 1.2, 0.4)));
}

TEST_CASE("metropolis determinism and limits") {
  std::mt19937_64 r1(42), r2(42);
  FieldConfig a = FieldConfig::Zero(2, 4), b = FieldConfig::Zero(2, 4);
  for (int s = 0; s < 50; ++s) {
    metropolis_sweep(a, 1.0, 0.5, 0.5, 0.7, r1);
    metropolis_sweep(b, 1.0, 0.5, 0.5, 0.7, r2);
  }
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);

  // vanishing step width accepts everything
  std::mt19937_64 r3(7);
  FieldConfig c = FieldConfig::Zero(2, 4);
  CHECK(metropolis_sweep(c, 1.0, 0.5, 0.5, 1e-10, r3) == doctest::Approx(1.0));
  CHECK_THROWS(metropolis_sweep(c, 1.0, 0.5, 0.5, 0.0, r3));
}

TEST_CASE("sampler reproduces exact Gaussian moments at desk scale") {
  // single-site free chain: phi^2 against the exact lattice covariance
  {
    const LatticeShape shape(1, 4, 1.0);
    const auto ens = sample_chain(shape, 1.0, 0.0, 4000, 2, 500, 1234);
    CHECK(ens.iac < 2.5);  // verbatim 101-lag estimator carries O(sqrt(100/n)) noise
    const auto phi2 = local_moment(ens, 2);
    const double exact = free_lattice_two_point(0, 1, 4, 1.0, 1.0);
    CHECK(std::abs(phi2.mean - exact) < 3.0 * phi2.std_err);
  }
  // N=2, M=4: second moment and spatial correlator
  {
    const LatticeShape shape(2, 4, 0.5);
    const auto ens = sample_chain(shape, 1.0, 0.0, 4000, 2, 500, 77);
    const auto phi2 = local_moment(ens, 2);
    const auto cross = two_point(ens, 1);
    CHECK(std::abs(phi2.mean - free_lattice_two_point(0, 2, 4, 0.5, 1.0)) <
          3.0 * phi2.std_err);
    CHECK(std::abs(cross.mean - free_lattice_two_point(1, 2, 4, 0.5, 1.0)) <
          3.0 * cross.std_err);
    // acceptance tuned to roughly one half
    CHECK(ens.acceptance > 0.3);
    CHECK(ens.acceptance < 0.7);
  }
}

TEST_CASE("integrated autocorrelation") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> white(20000);
  for (double& x : white) x = gauss(rng);
  CHECK(std::abs(integrated_autocorrelation(white) - 1.5) < 0.1);

  std::vector<double> constant(300, 2.5);
  CHECK(integrated_autocorrelation(constant) == doctest::Approx(101.5).epsilon(1e-12));

  std::vector<double> short_series(150, 1.0);
  CHECK_THROWS(integrated_autocorrelation(short_series));
}

TEST_CASE("bootstrap estimation") {
  const LatticeShape shape(2, 4, 0.5);
  const auto ens = sample_chain(shape, 1.0, 1.0, 300, 2, 200, 9);

  // constant observable: zero spread
  const auto konst = bootstrap_estimate(ens, [](const FieldConfig&) { return 3.25; });
  CHECK(konst.mean == doctest::Approx(3.25));
  CHECK(konst.std_err == doctest::Approx(0.0));
  CHECK_FALSE(konst.normality_warning);

  // determinism and closeness to the plain sample mean
  auto obs = [](const FieldConfig& c) { return c.squaredNorm() / c.size(); };
  const auto e1 = bootstrap_estimate(ens, obs, 200, 5);
  const auto e2 = bootstrap_estimate(ens, obs, 200, 5);
  CHECK(e1.mean == doctest::Approx(e2.mean).epsilon(1e-15));
  CHECK(e1.std_err == doctest::Approx(e2.std_err).epsilon(1e-15));
  double plain = 0.0;
  for (const auto& c : ens.configs) plain += obs(c);
  plain /= ens.configs.size();
  CHECK(std::abs(e1.mean - plain) < 2.0 * e1.std_err);

  // stderr stabilizes when the resample count doubles
  const auto e4 = bootstrap_estimate(ens, obs, 400, 5);
  CHECK(std::abs(e4.std_err - e1.std_err) < 0.25 * e1.std_err);

  CHECK_THROWS(bootstrap_estimate(ens, obs, 50));
  LatticeEnsemble empty{shape};
  CHECK_THROWS(bootstrap_estimate(empty, obs));
}

TEST_CASE("two-point equals local second moment at zero separation") {
  const LatticeShape shape(3, 4, 0.5);
  const auto ens = sample_chain(shape, 0.8, 0.6, 200, 1, 100, 21);
  const auto a = two_point(ens, 0);
  const auto b = local_moment(ens, 2);
  CHECK(a.mean == doctest::Approx(b.mean).epsilon(1e-14));
  CHECK(a.std_err == doctest::Approx(b.std_err).epsilon(1e-12));
}

TEST_CASE("free-theory extrapolation matches the continuum formula") {
  const int n = 8;
  const double temperature = 10.0;
  std::vector<std::pair<double, EstimateWithError>> pts0, pts1;
  double max_iac = 1.5;
  for (double theta : {0.4, 0.2, 0.1}) {
    const LatticeShape shape(n, static_cast<int>(std::lround(temperature / theta)), theta);
    const auto ens = sample_chain(shape, 1.0, 0.0, 1500, 2, 500, 1111);
    max_iac = std::max(max_iac, ens.iac);
    pts0.emplace_back(theta, local_moment(ens, 2));
    pts1.emplace_back(theta, two_point(ens, 1));
  }
  // bootstrap errors assume independent draws; residual autocorrelation
  // inflates the true error by sqrt(IAC / 1.5)
  const double inflate = std::sqrt(max_iac / 1.5);
  const auto fit0 = extrapolate_theta(pts0);
  const auto fit1 = extrapolate_theta(pts1);
  CHECK(std::abs(fit0.intercept.mean - free_continuum_two_point(0, n, 1.0)) <
        3.0 * inflate * fit0.intercept.std_err);
  CHECK(std::abs(fit1.intercept.mean - free_continuum_two_point(1, n, 1.0)) <
        3.0 * inflate * fit1.intercept.std_err);
}

TEST_CASE("interacting theory has sub-Gaussian quartic moments") {
  const LatticeShape shape(10, 50, 0.2);
  const auto ens = sample_chain(shape, 0.6, 1.5, 800, 2, 500, 333);
  const auto phi2 = local_moment(ens, 2);
  const auto phi4 = local_moment(ens, 4);
  const double ratio = ansatz::moment_ratio(phi4.mean, phi2.mean, 2);
  CHECK(ratio < 1.0);
}

TEST_CASE("virial combination") {
  // lambda = 0 reduction with hand-built aligned bootstrap means
  EstimateWithError phi2, phi4, phi01;
  phi2.bootstrap_means = {0.5, 0.52, 0.48, 0.5};
  phi4.bootstrap_means = {0.7, 0.7, 0.7, 0.7};
  phi01.bootstrap_means = {0.0, 0.0, 0.0, 0.0};
  const auto v = virial_pi2(phi2, phi4, phi01, 1.0, 0.0);
  CHECK(v.mean == doctest::Approx(3.0 * 0.5).epsilon(1e-12));
  CHECK(v.std_err > 0.0);
  phi4.bootstrap_means.pop_back();
  CHECK_THROWS(virial_pi2(phi2, phi4, phi01, 1.0, 0.0));

  // identity on an exactly diagonalized interacting ground state
  const int lam = 36, n = 2;
  fock::FockCutoff cut(lam, n);
  const auto sp = fock::exact_ground(fock::hamiltonian_1p1(1.0, 1.0, cut));
  const Eigen::MatrixXcd phi = fock::phi_local(lam).cast<fock::Complex>();
  const Eigen::MatrixXcd pi = fock::pi_local(lam);
  auto expect = [&](const Eigen::MatrixXcd& op, int site, int reps, fock::VectorXcd v) {
    for (int k = 0; k < reps; ++k) v = fock::apply_mode_op(op, site, cut, v);
    return sp.ground.dot(v).real();
  };
  const double pi2 = expect(pi, 0, 2, sp.ground);
  const double p2 = expect(phi, 0, 2, sp.ground);
  const double p4 = expect(phi, 0, 4, sp.ground);
  const double p01 = expect(phi, 0, 1, fock::apply_mode_op(phi, 1, cut, sp.ground));
  CHECK(std::abs(pi2 - ((2.0 + 1.0) * p2 + 1.0 * p4 - 2.0 * p01)) < 1e-8);
}

TEST_CASE("effective mass on synthetic correlators") {
  const double temperature = 10.0, theta = 0.25, gap = 0.8;
  const int n_t = static_cast<int>(temperature / theta) / 2 + 1;
  std::vector<EstimateWithError> corr(n_t);
  for (int t = 0; t < n_t; ++t)
    corr[t].mean = std::cosh(gap * (temperature / 2.0 - t * theta));
  const auto pts = effective_mass(corr, temperature, theta);
  for (const auto& p : pts) {
    REQUIRE(p.usable);
    CHECK(std::abs(p.m_eff.mean - gap) < 1e-10);
  }

  // two-state correlator: late-time plateau at the smaller gap
  std::vector<EstimateWithError> two_state(n_t);
  for (int t = 0; t < n_t; ++t) {
    const double arg = temperature / 2.0 - t * theta;
    two_state[t].mean = std::cosh(0.6 * arg) + 0.01 * std::cosh(1.8 * arg);
  }
  const auto pts2 = effective_mass(two_state, temperature, theta);
  REQUIRE(pts2.size() > 4);
  const auto& late = pts2[pts2.size() - 3];
  REQUIRE(late.usable);
  CHECK(std::abs(late.m_eff.mean - 0.6) < 0.05);

  // a flat (ratio <= 1) point is flagged unusable
  std::vector<EstimateWithError> flat(4);
  for (auto& e : flat) e.mean = 1.0;
  const auto pts3 = effective_mass(flat, temperature, theta);
  for (const auto& p : pts3) CHECK_FALSE(p.usable);
}

TEST_CASE("effective mass of the sampled free theory lies in the expected band") {
  const int n = 4;
  const double temperature = 10.0, theta = 0.25;
  const LatticeShape shape(n, 40, theta);
  const auto ens = sample_chain(shape, 1.0, 0.0, 2000, 2, 500, 2024);
  const auto corr = temporal_correlator(ens);
  const auto pts = effective_mass(corr, temperature, theta);
  const auto plateau = plateau_average(pts, temperature);
  // lightest single-particle state: omega_0 = m = 1 (up to O(theta^2))
  CHECK(std::abs(plateau.mean - 1.0) < std::max(0.06, 3.0 * plateau.std_err));
  CHECK(plateau.mean > 0.1);
  CHECK(plateau.mean < 2.5);
}

TEST_CASE("theta extrapolation model selection") {
  auto mk = [](double mean, double err) {
    EstimateWithError e;
    e.mean = mean;
    e.std_err = err;
    return e;
  };
  // exact linear data
  std::vector<std::pair<double, EstimateWithError>> lin;
  for (double th : {0.4, 0.2, 0.1, 0.05})
    lin.emplace_back(th, mk(2.0 + 3.0 * th, 0.01));
  const auto flin = extrapolate_theta(lin);
  CHECK(flin.model == FitResult::Model::Linear);
  CHECK(flin.intercept.mean == doctest::Approx(2.0).epsilon(1e-10));
  CHECK(flin.chi2_red == doctest::Approx(0.0).epsilon(1e-8));

  // exact quadratic data
  std::vector<std::pair<double, EstimateWithError>> quad;
  for (double th : {0.4, 0.2, 0.1, 0.05})
    quad.emplace_back(th, mk(1.5 - 2.0 * th * th, 0.01));
  const auto fquad = extrapolate_theta(quad);
  CHECK(fquad.model == FitResult::Model::Quadratic);
  CHECK(fquad.intercept.mean == doctest::Approx(1.5).epsilon(1e-10));

  // near-tie prefers the quadratic model
  std::vector<std::pair<double, EstimateWithError>> flat;
  for (double th : {0.4, 0.2, 0.1})
    flat.emplace_back(th, mk(1.0, 0.01));
  CHECK(extrapolate_theta(flat).model == FitResult::Model::Quadratic);

  CHECK_THROWS(extrapolate_theta({lin[0], lin[1]}));  // too few points
  std::vector<std::pair<double, EstimateWithError>> degenerate{
      {0.2, mk(1.0, 0.01)}, {0.2, mk(1.1, 0.01)}, {0.2, mk(0.9, 0.01)}};
  CHECK_THROWS(extrapolate_theta(degenerate));  // singular design
}

TEST_CASE("ensemble persistence round trip") {
  const LatticeShape shape(3, 6, 0.4);
  const auto ens = sample_chain(shape, 0.5, 0.7, 120, 1, 100, 55);
  const std::string path = (std::filesystem::temp_directory_path() / "sp_ens.bin").string();
  save_ensemble(path, ens);
  const auto back = load_ensemble(path);
  CHECK(back.shape.n_sites == 3);
  CHECK(back.shape.n_timeslices == 6);
  CHECK(back.shape.theta == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(back.seed == ens.seed);
  CHECK(back.thinning == ens.thinning);
  CHECK(back.iac == doctest::Approx(ens.iac).epsilon(1e-15));
  REQUIRE(back.configs.size() == ens.configs.size());
  for (std::size_t i = 0; i < back.configs.size(); ++i)
    CHECK((back.configs[i] - ens.configs[i]).cwiseAbs().maxCoeff() == 0.0);
  std::filesystem::remove(path);
  CHECK_THROWS(load_ensemble(path));
}
