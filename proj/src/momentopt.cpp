#include "stellarprep/momentopt.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace stellarprep::momentopt {

HamiltonianSpec HamiltonianSpec::oscillator(int sigma, double lambda) {
  HamiltonianSpec h;
  h.single_mode = true;
  h.sigma = sigma;
  h.lambda_coupling = lambda;
  h.n_modes = 1;
  return h;
}

HamiltonianSpec HamiltonianSpec::lattice(double m_sq, double lambda, int n_modes) {
  HamiltonianSpec h;
  h.single_mode = false;
  h.m_sq = m_sq;
  h.lambda_coupling = lambda;
  h.n_modes = n_modes;
  return h;
}

double hamiltonian_energy(const AnsatzParams& params, const HamiltonianSpec& ham) {
  if (ham.single_mode)
    return ansatz::energy_single_mode(params, ham.sigma, ham.lambda_coupling);
  return ansatz::energy(params, ham.m_sq, ham.lambda_coupling, ham.n_modes);
}

double loss(const AnsatzParams& params, const LossSpec& spec) {
  double l = hamiltonian_energy(params, spec.ham);
  for (const TargetMoment& t : spec.targets) {
    const double v = ansatz::expectation(params, t.obs).real();
    const double res = v - t.target;
    l += t.weight * res * res;
  }
  return l;
}

namespace {

using Eigen::VectorXd;

VectorXd pack(const AnsatzParams& p) {
  VectorXd x(1 + p.core.coeffs.size());
  x[0] = p.r;
  x.tail(p.core.coeffs.size()) = p.core.coeffs;
  return x;
}

AnsatzParams unpack(const VectorXd& x, const CoreTemplate& tmpl) {
  AnsatzParams p;
  p.r = x[0];
  p.core.tmpl = tmpl;
  p.core.coeffs = x.tail(x.size() - 1);
  return p;
}

struct NmResult {
  VectorXd x;
  double f = 0.0;
  bool converged = false;
  long evals = 0;
};

// Standard Nelder–Mead simplex over an objective; deterministic.
NmResult nelder_mead(const std::function<double(const VectorXd&)>& f, const VectorXd& x0,
                     const VectorXd& scale, double tol_f, double tol_x, long max_evals) {
  const int n = static_cast<int>(x0.size());
  std::vector<VectorXd> v(n + 1, x0);
  std::vector<double> fv(n + 1);
  for (int i = 0; i < n; ++i) v[i + 1][i] += scale[i];
  long evals = 0;
  for (int i = 0; i <= n; ++i) fv[i] = (++evals, f(v[i]));

  auto order = [&] {
    std::vector<int> idx(n + 1);
    for (int i = 0; i <= n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](int a, int b) { return fv[a] < fv[b]; });
    std::vector<VectorXd> v2(n + 1);
    std::vector<double> f2(n + 1);
    for (int i = 0; i <= n; ++i) {
      v2[i] = v[idx[i]];
      f2[i] = fv[idx[i]];
    }
    v = std::move(v2);
    fv = std::move(f2);
  };
  order();

  NmResult res;
  double cycle_best = fv[0];
  int since_check = 0;
  while (evals < max_evals) {
    VectorXd centroid = VectorXd::Zero(n);
    for (int i = 0; i < n; ++i) centroid += v[i];
    centroid /= n;

    const VectorXd xr = centroid + (centroid - v[n]);
    const double fr = (++evals, f(xr));
    if (fr < fv[0]) {
      const VectorXd xe = centroid + 2.0 * (centroid - v[n]);
      const double fe = (++evals, f(xe));
      if (fe < fr) {
        v[n] = xe;
        fv[n] = fe;
      } else {
        v[n] = xr;
        fv[n] = fr;
      }
    } else if (fr < fv[n - 1]) {
      v[n] = xr;
      fv[n] = fr;
    } else {
      const bool outside = fr < fv[n];
      const double dir = outside ? 0.5 : -0.5;
      const VectorXd xc = centroid + dir * (centroid - v[n]);
      const double fc = (++evals, f(xc));
      if (fc < std::min(fr, fv[n])) {
        v[n] = xc;
        fv[n] = fc;
      } else {  // shrink toward the best vertex
        for (int i = 1; i <= n; ++i) {
          v[i] = v[0] + 0.5 * (v[i] - v[0]);
          fv[i] = (++evals, f(v[i]));
        }
      }
    }
    order();

    if (++since_check >= n + 1) {  // one full simplex cycle
      since_check = 0;
      double spread = 0.0;
      for (int i = 1; i <= n; ++i) spread = std::max(spread, (v[i] - v[0]).norm());
      if (cycle_best - fv[0] < tol_f && spread < tol_x) {
        res.converged = true;
        break;
      }
      cycle_best = fv[0];
    }
  }
  res.x = v[0];
  res.f = fv[0];
  res.evals = evals;
  return res;
}

// Central-difference BFGS polish; falls back to the input when not improving.
std::pair<VectorXd, double> bfgs_polish(const std::function<double(const VectorXd&)>& f,
                                        VectorXd x, double fx, int max_iter = 60) {
  const int n = static_cast<int>(x.size());
  auto grad = [&](const VectorXd& p) {
    VectorXd g(n);
    for (int i = 0; i < n; ++i) {
      const double h = 1e-6 * std::max(1.0, std::abs(p[i]));
      VectorXd a = p, b = p;
      a[i] += h;
      b[i] -= h;
      g[i] = (f(a) - f(b)) / (2.0 * h);
    }
    return g;
  };
  Eigen::MatrixXd hinv = Eigen::MatrixXd::Identity(n, n);
  VectorXd g = grad(x);
  for (int it = 0; it < max_iter; ++it) {
    if (g.norm() < 1e-10) break;
    VectorXd d = -hinv * g;
    if (d.dot(g) > 0) d = -g;  // safeguard against a broken Hessian estimate
    double step = 1.0;
    double fnew = fx;
    VectorXd xnew = x;
    bool ok = false;
    for (int ls = 0; ls < 30; ++ls) {
      xnew = x + step * d;
      fnew = f(xnew);
      if (fnew <= fx + 1e-4 * step * d.dot(g)) {
        ok = true;
        break;
      }
      step *= 0.5;
    }
    if (!ok || fnew >= fx) break;
    const VectorXd gnew = grad(xnew);
    const VectorXd s = xnew - x, y = gnew - g;
    const double sy = s.dot(y);
    if (sy > 1e-14) {
      const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
      hinv = (eye - s * y.transpose() / sy) * hinv * (eye - y * s.transpose() / sy) +
             s * s.transpose() / sy;
    }
    x = xnew;
    fx = fnew;
    g = gnew;
    if (s.norm() < 1e-12) break;
  }
  return {x, fx};
}

}  // namespace

OptResult minimize(const LossSpec& spec, const OptOptions& opts, const MinimizeInit& init) {
  const CoreTemplate& tmpl = spec.tmpl;
  auto objective = [&](const VectorXd& x) {
    const AnsatzParams p = unpack(x, tmpl);
    if (p.core.coeffs.norm() < 1e-8 || !x.allFinite()) return 1e12;
    return loss(p, spec);
  };

  // seed point: coarse squeeze scan with a vacuum core
  AnsatzParams seed_params;
  seed_params.core = ansatz::vacuum_core(tmpl);
  if (init.kind == MinimizeInit::Kind::Given) {
    seed_params = init.given;
  } else {
    double best_r = 0.0, best_e = 1e300;
    for (double r = -1.2; r <= 1.2001; r += 0.05) {
      seed_params.r = r;
      const double e = loss(seed_params, spec);
      if (e < best_e) {
        best_e = e;
        best_r = r;
      }
    }
    seed_params.r = best_r;
  }

  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);

  OptResult best;
  best.loss_value = 1e300;
  for (int start = 0; start < std::max(1, opts.multistart); ++start) {
    VectorXd x0 = pack(seed_params);
    if (start > 0 && init.kind != MinimizeInit::Kind::Given) {
      x0[0] += 0.4 * u(rng);
      for (long i = 1; i < x0.size(); ++i) x0[i] += 0.15 * u(rng);
    } else if (init.kind != MinimizeInit::Kind::Given) {
      for (long i = 2; i < x0.size(); ++i) x0[i] += 1e-2;  // nudge off the vacuum
    }

    VectorXd x = x0;
    double fx = objective(x);
    int restarts_used = 0;
    bool converged = false;
    double sim_scale = 0.25;
    for (int rs = 0; rs < std::max(1, opts.restarts); ++rs) {
      VectorXd scale = VectorXd::Constant(x.size(), sim_scale);
      scale[0] = sim_scale;  // squeeze parameter and coefficients share the scale
      const NmResult nm =
          nelder_mead(objective, x, scale, opts.tol_loss, opts.tol_x, opts.max_evals);
      restarts_used = rs + 1;
      const double gain = fx - nm.f;
      if (nm.f < fx) {
        x = nm.x;
        fx = nm.f;
      }
      converged = nm.converged;
      sim_scale *= 0.2;
      if (gain < opts.tol_loss && rs > 0) break;
    }
    if (opts.polish) {
      auto [xp, fp] = bfgs_polish(objective, x, fx);
      if (fp < fx) {
        x = xp;
        fx = fp;
      }
    }
    if (fx < best.loss_value) {
      best.params = unpack(x, tmpl);
      best.loss_value = fx;
      best.converged = converged;
      best.restarts_used = restarts_used;
    }
  }

  best.energy = hamiltonian_energy(best.params, spec.ham);
  best.residuals.clear();
  for (const TargetMoment& t : spec.targets)
    best.residuals.push_back(ansatz::expectation(best.params, t.obs).real() - t.target);
  return best;
}

std::function<double(int, int)> single_mode_moment_oracle(int sigma, double lambda_coupling) {
  const int lam = 160;
  const auto spec = fock::exact_ground(
      fock::hamiltonian_0p1(sigma, lambda_coupling, fock::FockCutoff(lam, 1)));
  const Eigen::MatrixXcd phi = fock::phi_local(lam).cast<fock::Complex>();
  const Eigen::MatrixXcd pi = fock::pi_local(lam);
  const fock::VectorXcd ground = spec.ground;
  return [phi, pi, ground](int p, int q) {
    fock::VectorXcd v = ground;
    for (int k = 0; k < q; ++k) v = pi * v;
    for (int k = 0; k < p; ++k) v = phi * v;
    return ground.dot(v).real();
  };
}

std::vector<TargetMoment> column_targets(int q_column,
                                         const std::function<double(int, int)>& oracle,
                                         int p_max_total) {
  if (q_column < 0 || q_column % 2 != 0)
    throw std::invalid_argument("column_targets: q must be even >= 0");
  std::vector<TargetMoment> out;
  for (int p = 0; p + q_column <= p_max_total; p += 2) {
    if (p == 0 && q_column == 0) continue;
    TargetMoment t;
    t.obs = ObservableSpec::moment(p, q_column);
    t.target = oracle(p, q_column);
    t.weight = 1.0 / (t.target * t.target);
    t.label = "phi^" + std::to_string(p) + " pi^" + std::to_string(q_column);
    out.push_back(t);
  }
  return out;
}

const std::vector<double>& preset_weight_ladder(PresetKind kind) {
  static const std::vector<double> ratio{12.5, 25.0, 50.0, 100.0, 200.0, 400.0};
  static const std::vector<double> two_point{1.25e4, 2.5e4, 5e4, 1e5, 2e5, 5e5};
  return kind == PresetKind::MomentRatio ? ratio : two_point;
}

std::vector<TargetMoment> preset_multimode_targets(
    PresetKind kind, const std::map<std::string, std::pair<double, double>>& pimc_table,
    double w) {
  if (pimc_table.empty())
    throw std::invalid_argument("preset_multimode_targets: empty target table");
  std::vector<TargetMoment> out;
  auto take = [&](const std::string& key, const ObservableSpec& obs) {
    auto it = pimc_table.find(key);
    if (it == pimc_table.end())
      throw std::invalid_argument("preset_multimode_targets: missing key " + key);
    TargetMoment t;
    t.obs = obs;
    t.target = it->second.first;
    t.sigma = it->second.second;
    t.weight = w;
    t.label = key;
    out.push_back(t);
  };
  if (kind == PresetKind::MomentRatio) {
    take("phi6", ObservableSpec::phi_power(0, 6));
    take("phi8", ObservableSpec::phi_power(0, 8));
    take("phi10", ObservableSpec::phi_power(0, 10));
  } else {
    take("phi0phi4", ObservableSpec::phi_phi(0, 4));
  }
  return out;
}

namespace {

// Remove the core-scale degeneracy so parameter spreads are comparable.
Eigen::VectorXd normalized_param_vector(const AnsatzParams& p) {
  Eigen::VectorXd c = p.core.coeffs;
  double n = c.norm();
  if (n > 0) c /= n;
  int lead = 0;
  c.cwiseAbs().maxCoeff(&lead);
  if (c[lead] < 0) c = -c;
  Eigen::VectorXd x(1 + c.size());
  x[0] = p.r;
  x.tail(c.size()) = c;
  return x;
}

}  // namespace

UncertaintyResult propagate_uncertainty(const LossSpec& spec, const OptResult& central,
                                        int n_resamples, std::uint64_t seed) {
  if (n_resamples < 1) throw std::invalid_argument("propagate_uncertainty: n_resamples >= 1");
  UncertaintyResult out;
  out.central = central;
  const long np = 1 + central.params.core.coeffs.size();
  Eigen::MatrixXd samples(np, n_resamples);
  Eigen::MatrixXd moments(spec.targets.size(), n_resamples);
  Eigen::VectorXd energies(n_resamples);

  OptOptions warm;
  warm.multistart = 1;
  warm.restarts = 3;
  warm.polish = true;
  MinimizeInit init;
  init.kind = MinimizeInit::Kind::Given;

  for (int b = 0; b < n_resamples; ++b) {
    std::mt19937_64 rng(seed + 0x9e3779b97f4a7c15ULL * (b + 1));
    LossSpec drawn = spec;
    for (TargetMoment& t : drawn.targets) {
      std::normal_distribution<double> gauss(t.target, t.sigma);
      if (t.sigma > 0) t.target = gauss(rng);
    }
    init.given = central.params;
    OptResult r = minimize(drawn, warm, init);
    if (!std::isfinite(r.loss_value) || r.loss_value >= 1e11) {
      ++out.failures;
      r = central;
    }
    samples.col(b) = normalized_param_vector(r.params);
    energies[b] = r.energy;
    for (size_t t = 0; t < spec.targets.size(); ++t)
      moments(t, b) = ansatz::expectation(r.params, spec.targets[t].obs).real();
  }
  out.param_mean = samples.rowwise().mean();
  out.param_std = ((samples.colwise() - out.param_mean).array().square().rowwise().sum() /
                   std::max(1, n_resamples - 1))
                      .sqrt();
  out.energy_mean = energies.mean();
  out.energy_std = std::sqrt((energies.array() - out.energy_mean).square().sum() /
                             std::max(1, n_resamples - 1));
  for (long t = 0; t < moments.rows(); ++t) {
    const double m = moments.row(t).mean();
    out.moment_mean.push_back(m);
    out.moment_std.push_back(std::sqrt((moments.row(t).array() - m).square().sum() /
                                       std::max(1, n_resamples - 1)));
  }
  return out;
}

std::pair<double, double> analytic_squeezed_oracle(double r, double c0, double c2) {
  const double n = std::sqrt(c0 * c0 + c2 * c2);
  if (n == 0.0) throw std::invalid_argument("analytic_squeezed_oracle: zero coefficients");
  c0 /= n;
  c2 /= n;
  const double energy = 2.0 * c2 * c2 * std::cosh(2.0 * r) -
                        std::sqrt(2.0) * c0 * c2 * std::sinh(2.0 * r) +
                        std::sinh(r) * std::sinh(r);
  const double amp = c0 + (c2 / std::sqrt(2.0)) * std::tanh(r);
  const double fid = amp * amp / std::cosh(r);
  return {energy, fid};
}

double delta_E(double energy, double e0, double e1) {
  if (e1 <= e0) throw std::invalid_argument("delta_E: requires e1 > e0");
  return (energy - e0) / (e1 - e0);
}

}  // namespace stellarprep::momentopt
