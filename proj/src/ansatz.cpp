#include "stellarprep/ansatz.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

namespace stellarprep::ansatz {

namespace {

std::vector<int> to_dense(const Monomial& m, int n_modes) {
  std::vector<int> v(n_modes, 0);
  for (const auto& [site, exp] : m) v[site] = exp;
  return v;
}

Monomial to_sparse(const std::vector<int>& v) {
  Monomial m;
  for (int j = 0; j < static_cast<int>(v.size()); ++j)
    if (v[j] > 0) m.push_back({j, v[j]});
  return m;
}

std::vector<int> rotate(const std::vector<int>& v, int shift) {
  const int n = static_cast<int>(v.size());
  std::vector<int> out(n);
  for (int j = 0; j < n; ++j) out[(j + shift) % n] = v[j];
  return out;
}

std::vector<int> reflect(const std::vector<int>& v) {
  const int n = static_cast<int>(v.size());
  std::vector<int> out(n);
  for (int j = 0; j < n; ++j) out[(n - j) % n] = v[j];
  return out;
}

// Window shapes (n0..nQ') with edge entries >= 1, interior >= 0, sum = total.
void window_shapes(int width, int total, std::vector<std::vector<int>>& out) {
  std::vector<int> cur(width, 0);
  std::function<void(int, int)> rec = [&](int pos, int left) {
    if (pos == width) {
      if (left == 0 && cur.front() >= 1 && cur.back() >= 1) out.push_back(cur);
      return;
    }
    const int lo = (pos == 0 || pos == width - 1) ? 1 : 0;
    for (int v = lo; v <= left; ++v) {
      cur[pos] = v;
      rec(pos + 1, left - v);
    }
  };
  rec(0, total);
}

std::string shape_label(const std::vector<int>& dense) {
  // occupations of the minimal cyclic window containing the support
  const int n = static_cast<int>(dense.size());
  std::vector<int> support;
  for (int j = 0; j < n; ++j)
    if (dense[j] > 0) support.push_back(j);
  if (support.empty()) return "1";
  int best_start = 0, best_width = n + 1;
  for (int start : support) {
    int width = 0;
    for (int s : support) width = std::max(width, ((s - start) % n + n) % n + 1);
    if (width < best_width) {
      best_width = width;
      best_start = start;
    }
  }
  std::ostringstream os;
  for (int k = 0; k < best_width; ++k) {
    if (k) os << ',';
    os << dense[(best_start + k) % n];
  }
  return os.str();
}

}  // namespace

ObservableSpec ObservableSpec::phi_phi(int site_a, int site_b) {
  if (site_a == site_b) return {{{site_a, 2, 0}}};
  return {{{site_a, 1, 0}, {site_b, 1, 0}}};
}

CoreTemplate enumerate_core_template(int rank, int span, int n_modes) {
  if (rank < 0 || rank % 2 != 0) throw std::invalid_argument("core template: rank must be even >= 0");
  if (n_modes < 1) throw std::invalid_argument("core template: n_modes must be >= 1");
  if (span < 0 || 2 * span > n_modes)
    throw std::invalid_argument("core template: need 0 <= span <= n_modes/2");

  CoreTemplate tmpl;
  tmpl.rank = rank;
  tmpl.span = span;
  tmpl.n_modes = n_modes;

  std::vector<std::vector<int>> shapes;
  for (int qp = 0; qp <= span; ++qp)
    for (int rp = 2; rp <= rank; rp += 2) window_shapes(qp + 1, rp, shapes);
  tmpl.monomials_per_site_ = 1 + static_cast<int>(shapes.size());

  // expand to global occupation vectors, de-duplicating wrap-around collisions
  std::set<std::vector<int>> global;
  for (const auto& shape : shapes) {
    const int w = static_cast<int>(shape.size());
    for (int j = 0; j < n_modes; ++j) {
      std::vector<int> v(n_modes, 0);
      for (int k = 0; k < w; ++k) v[(j + k) % n_modes] += shape[k];
      global.insert(v);
    }
  }

  // group into orbits under cyclic shifts + inversion
  std::set<std::vector<int>> seen;
  std::vector<Orbit> orbits;
  for (const auto& v : global) {
    if (seen.count(v)) continue;
    std::set<std::vector<int>> images;
    for (int s = 0; s < n_modes; ++s) {
      images.insert(rotate(v, s));
      images.insert(rotate(reflect(v), s));
    }
    Orbit orb;
    orb.representative = to_sparse(*images.begin());
    for (const auto& img : images) {
      seen.insert(img);
      orb.members.push_back(to_sparse(img));
    }
    orb.label = shape_label(*images.begin());
    orbits.push_back(std::move(orb));
  }
  std::sort(orbits.begin(), orbits.end(), [n_modes](const Orbit& a, const Orbit& b) {
    int da = 0, db = 0;
    for (auto& [s, e] : a.representative) da += e;
    for (auto& [s, e] : b.representative) db += e;
    if (da != db) return da < db;
    return to_dense(a.representative, n_modes) < to_dense(b.representative, n_modes);
  });

  tmpl.orbits.push_back({{}, {{}}, "1"});  // constant monomial first
  for (auto& o : orbits) tmpl.orbits.push_back(std::move(o));
  return tmpl;
}

std::vector<std::pair<Monomial, double>> CoreState::expanded() const {
  if (coeffs.size() != static_cast<long>(tmpl.orbits.size()))
    throw std::invalid_argument("CoreState: coefficient/orbit count mismatch");
  std::vector<std::pair<Monomial, double>> out;
  for (size_t o = 0; o < tmpl.orbits.size(); ++o)
    for (const auto& m : tmpl.orbits[o].members) out.push_back({m, coeffs[o]});
  return out;
}

CoreState vacuum_core(const CoreTemplate& tmpl) {
  CoreState c;
  c.tmpl = tmpl;
  c.coeffs = Eigen::VectorXd::Zero(tmpl.orbits.size());
  c.coeffs[0] = 1.0;
  return c;
}

// ---------------------------------------------------------------------------
// analytic expectation engine
// ---------------------------------------------------------------------------

namespace {

// <0| phi^a * prod_i (phi^{p_i} pi^{q_i}) * phi^b |0> evaluated exactly in a
// local Fock block; the e^{±r} conjugation scale is applied by the caller.
Complex raw_element(int a, const std::vector<std::pair<int, int>>& pq, int b) {
  thread_local std::map<std::vector<int>, Complex> cache;
  std::vector<int> key{a, b};
  int deg = a + b;
  for (const auto& [p, q] : pq) {
    key.push_back(p);
    key.push_back(q);
    deg += p + q;
  }
  if ((deg % 2) != 0) return {0.0, 0.0};  // parity
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;

  const int lam = deg + 2;
  const Eigen::MatrixXd phi = fock::phi_local(lam);
  const fock::MatrixXcd pi = fock::pi_local(lam);
  VectorXcd v = VectorXcd::Zero(lam + 1);
  v[0] = 1.0;
  for (int k = 0; k < b; ++k) v = phi.cast<Complex>() * v;
  for (auto itf = pq.rbegin(); itf != pq.rend(); ++itf) {
    for (int k = 0; k < itf->second; ++k) v = pi * v;
    for (int k = 0; k < itf->first; ++k) v = phi.cast<Complex>() * v;
  }
  Eigen::VectorXd u = Eigen::VectorXd::Zero(lam + 1);
  u[0] = 1.0;
  for (int k = 0; k < a; ++k) u = phi * u;
  const Complex val = u.cast<Complex>().dot(v);
  cache[key] = val;
  return val;
}

}  // namespace

Complex expectation(const AnsatzParams& params, const ObservableSpec& obs) {
  const auto mons = params.core.expanded();
  std::map<int, std::vector<std::pair<int, int>>> obs_by_site;
  int net = 0;
  for (const auto& f : obs.factors) {
    if (f.p < 0 || f.q < 0) throw std::invalid_argument("expectation: negative power");
    obs_by_site[f.site].push_back({f.p, f.q});
    net += f.p - f.q;
  }
  const double scale = std::exp(params.r * net);

  static const std::vector<std::pair<int, int>> kNoOps;
  Complex num(0.0, 0.0);
  double den = 0.0;
  for (const auto& [m1, c1] : mons) {
    for (const auto& [m2, c2] : mons) {
      const double cc = c1 * c2;
      if (cc == 0.0) continue;
      // merge the site supports of m1, m2 and the observable
      std::set<int> sites;
      for (auto& [s, e] : m1) sites.insert(s);
      for (auto& [s, e] : m2) sites.insert(s);
      Complex t(cc, 0.0);
      double td = cc;
      auto exp_at = [](const Monomial& m, int s) {
        for (auto& [site, e] : m)
          if (site == s) return e;
        return 0;
      };
      for (int s : sites) {
        const int a = exp_at(m1, s), b = exp_at(m2, s);
        td *= raw_element(a, kNoOps, b).real();
        if (!obs_by_site.count(s)) t *= raw_element(a, kNoOps, b);
      }
      for (const auto& [s, pq] : obs_by_site)
        t *= raw_element(exp_at(m1, s), pq, exp_at(m2, s));
      num += t;
      den += td;
    }
  }
  if (den <= 0.0) throw std::runtime_error("expectation: core state has non-positive norm");
  return num * scale / den;
}

double energy(const AnsatzParams& params, double m_sq, double lambda_coupling, int n_modes) {
  if (n_modes < 2) throw std::invalid_argument("energy: n_modes must be >= 2");
  const double pi2 = expectation(params, ObservableSpec::pi_power(0, 2)).real();
  const double phi2 = expectation(params, ObservableSpec::phi_power(0, 2)).real();
  const double phi01 = expectation(params, ObservableSpec::phi_phi(0, 1)).real();
  const double phi4 = expectation(params, ObservableSpec::phi_power(0, 4)).real();
  return n_modes *
         (0.5 * pi2 + (1.0 + 0.5 * m_sq) * phi2 - phi01 + 0.25 * lambda_coupling * phi4);
}

double energy_single_mode(const AnsatzParams& params, int sigma, double lambda_coupling) {
  const double pi2 = expectation(params, ObservableSpec::pi_power(0, 2)).real();
  const double phi2 = expectation(params, ObservableSpec::phi_power(0, 2)).real();
  const double phi4 = expectation(params, ObservableSpec::phi_power(0, 4)).real();
  return 0.5 * pi2 + 0.5 * sigma * phi2 + lambda_coupling * phi4;
}

// ---------------------------------------------------------------------------
// polynomial conversions and dense state construction
// ---------------------------------------------------------------------------

namespace {

// Components of phi^k |0> in the Fock basis (exact: block of dimension k+1).
std::vector<double> phi_power_vacuum(int k) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(k + 1);
  v[0] = 1.0;
  if (k > 0) {
    const Eigen::MatrixXd phi = fock::phi_local(k);
    for (int i = 0; i < k; ++i) v = phi * v;
  }
  return {v.data(), v.data() + k + 1};
}

double sqrt_fact(int n) {
  double f = 1.0;
  for (int k = 2; k <= n; ++k) f *= k;
  return std::sqrt(f);
}

// Fock amplitudes of the monomial prod_j phi_j^{k_j} |0>.
void accumulate_monomial(const std::vector<int>& k, double coeff, Polynomial& amps) {
  const int n = static_cast<int>(k.size());
  std::vector<std::vector<double>> tables(n);
  for (int j = 0; j < n; ++j) tables[j] = phi_power_vacuum(k[j]);
  std::vector<int> occ(n, 0);
  std::function<void(int, double)> rec = [&](int j, double w) {
    if (w == 0.0) return;
    if (j == n) {
      amps[occ] += coeff * w;
      return;
    }
    for (int m = k[j]; m >= 0; m -= 2) {
      occ[j] = m;
      rec(j + 1, w * tables[j][m]);
    }
    occ[j] = 0;
  };
  rec(0, 1.0);
}

void prune(Polynomial& p, double tol) {
  for (auto it = p.begin(); it != p.end();) {
    if (std::abs(it->second) < tol)
      it = p.erase(it);
    else
      ++it;
  }
}

}  // namespace

Polynomial phi_to_ladder(const Polynomial& phi_poly) {
  Polynomial amps;
  for (const auto& [k, d] : phi_poly) accumulate_monomial(k, d, amps);
  Polynomial out;
  for (const auto& [n, amp] : amps) {
    double norm = 1.0;
    for (int nj : n) norm *= sqrt_fact(nj);
    out[n] = amp / norm;
  }
  prune(out, 1e-14);
  return out;
}

Polynomial ladder_to_phi(const Polynomial& ladder_poly) {
  Polynomial amps;
  for (const auto& [n, c] : ladder_poly) {
    double norm = 1.0;
    for (int nj : n) norm *= sqrt_fact(nj);
    amps[n] += c * norm;
  }
  prune(amps, 1e-14);
  Polynomial out;
  while (!amps.empty()) {
    // take a remaining key of maximal total degree (triangular elimination)
    auto best = amps.begin();
    int best_deg = -1;
    for (auto it = amps.begin(); it != amps.end(); ++it) {
      int deg = 0;
      for (int nj : it->first) deg += nj;
      if (deg > best_deg) {
        best_deg = deg;
        best = it;
      }
    }
    const std::vector<int> key = best->first;
    double top = 1.0;
    for (int kj : key) top *= phi_power_vacuum(kj)[kj];
    const double d = best->second / top;
    out[key] = d;
    Polynomial sub;
    accumulate_monomial(key, d, sub);
    for (const auto& [n, a] : sub) amps[n] -= a;
    prune(amps, 1e-12);
  }
  prune(out, 1e-14);
  return out;
}

Polynomial core_fock_amplitudes(const CoreState& core) {
  Polynomial amps;
  const int n = core.tmpl.n_modes;
  for (const auto& [mon, c] : core.expanded())
    accumulate_monomial(to_dense(mon, n), c, amps);
  prune(amps, 1e-15);
  return amps;
}

VectorXcd build_state(const AnsatzParams& params, const FockCutoff& cutoff) {
  if (cutoff.lambda < params.core.tmpl.rank)
    throw std::invalid_argument("build_state: cutoff below core rank");
  if (cutoff.n_modes != params.core.tmpl.n_modes)
    throw std::invalid_argument("build_state: mode-count mismatch");
  const long dim = cutoff.dim();
  const int d = cutoff.local_dim();
  VectorXcd psi = VectorXcd::Zero(dim);
  for (const auto& [occ, amp] : core_fock_amplitudes(params.core)) {
    long idx = 0, stride = 1;
    for (int j = 0; j < cutoff.n_modes; ++j) {
      idx += stride * occ[j];
      stride *= d;
    }
    psi[idx] += amp;
  }
  if (params.r != 0.0) {
    const fock::MatrixXcd s =
        fock::squeeze_matrix(params.r, FockCutoff(cutoff.lambda, 1)).cast<Complex>();
    for (int j = 0; j < cutoff.n_modes; ++j) psi = fock::apply_mode_op(s, j, cutoff, psi);
  }
  const double n = psi.norm();
  if (n == 0.0) throw std::runtime_error("build_state: zero state");
  return psi / n;
}

// ---------------------------------------------------------------------------
// GEP baseline and misc
// ---------------------------------------------------------------------------

GepObservables gep_observables(double mu, double m_sq, double lambda_coupling, int n_modes) {
  if (mu <= 0.0) throw std::invalid_argument("gep_observables: mu must be > 0");
  const int n = n_modes;
  std::vector<double> omega(n);
  for (int k = 0; k < n; ++k) {
    const double s = std::sin(std::numbers::pi * k / n);
    omega[k] = std::sqrt(mu * mu + 4.0 * s * s);
  }
  GepObservables g;
  g.two_point.resize(n);
  for (int j = 0; j < n; ++j) {
    double acc = 0.0;
    for (int k = 0; k < n; ++k)
      acc += std::cos(2.0 * std::numbers::pi * j * k / n) / (2.0 * omega[k]);
    g.two_point[j] = acc / n;
  }
  g.phi2 = g.two_point[0];
  g.phi4 = 3.0 * g.phi2 * g.phi2;
  double pi2 = 0.0;
  for (int k = 0; k < n; ++k) pi2 += 0.5 * omega[k];
  g.pi2 = pi2 / n;
  g.energy = n * (0.5 * g.pi2 + (1.0 + 0.5 * m_sq) * g.phi2 - g.two_point[1 % n] +
                  0.25 * lambda_coupling * g.phi4);
  return g;
}

double moment_ratio(double phi2n, double phi2, int n) {
  if (phi2 <= 0.0) throw std::invalid_argument("moment_ratio: phi2 must be > 0");
  double dfact = 1.0;
  for (int k = 2 * n - 1; k > 1; k -= 2) dfact *= k;
  return phi2n / (dfact * std::pow(phi2, n));
}

std::string serialize(const AnsatzParams& params) {
  std::ostringstream os;
  os.precision(17);
  const CoreTemplate& t = params.core.tmpl;
  os << "ansatz-record v1\n";
  os << "template " << t.rank << ' ' << t.span << ' ' << t.n_modes << '\n';
  os << "r " << params.r << '\n';
  for (size_t o = 0; o < t.orbits.size(); ++o)
    os << "orbit " << t.orbits[o].label << ' ' << params.core.coeffs[o] << '\n';
  return os.str();
}

AnsatzParams deserialize(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != "ansatz-record v1")
    throw std::invalid_argument("deserialize: bad header");
  std::string word;
  int rank, span, n_modes;
  is >> word >> rank >> span >> n_modes;
  if (word != "template") throw std::invalid_argument("deserialize: missing template line");
  AnsatzParams p;
  is >> word >> p.r;
  if (word != "r") throw std::invalid_argument("deserialize: missing r line");
  p.core = vacuum_core(enumerate_core_template(rank, span, n_modes));
  std::map<std::string, int> by_label;
  for (size_t o = 0; o < p.core.tmpl.orbits.size(); ++o)
    by_label[p.core.tmpl.orbits[o].label] = static_cast<int>(o);
  std::string label;
  double value;
  while (is >> word >> label >> value) {
    if (word != "orbit") throw std::invalid_argument("deserialize: bad orbit line");
    auto it = by_label.find(label);
    if (it == by_label.end()) throw std::invalid_argument("deserialize: unknown orbit " + label);
    p.core.coeffs[it->second] = value;
  }
  return p;
}

}  // namespace stellarprep::ansatz
