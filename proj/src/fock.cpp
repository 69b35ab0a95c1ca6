#include "stellarprep/fock.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <random>

namespace stellarprep::fock {

namespace {
constexpr long kMaxDim = 1L << 26;
constexpr long kMaxDenseDim = 8192;
}  // namespace

FockCutoff::FockCutoff(int lambda_, int n_modes_) : lambda(lambda_), n_modes(n_modes_) {
  if (lambda < 0) throw std::invalid_argument("FockCutoff: lambda must be >= 0");
  if (n_modes < 1) throw std::invalid_argument("FockCutoff: n_modes must be >= 1");
  long d = 1;
  for (int j = 0; j < n_modes; ++j) {
    d *= local_dim();
    if (d > kMaxDim) throw std::invalid_argument("FockCutoff: Hilbert dimension too large");
  }
}

long FockCutoff::dim() const {
  long d = 1;
  for (int j = 0; j < n_modes; ++j) d *= local_dim();
  return d;
}

bool TruncatedOperator::is_hermitian(double tol) const {
  return (mat - mat.adjoint()).cwiseAbs().maxCoeff() <= tol;
}

bool TruncatedOperator::is_unitary(double tol) const {
  MatrixXcd g = mat.adjoint() * mat;
  g.diagonal().array() -= 1.0;
  return g.cwiseAbs().maxCoeff() <= tol;
}

MatrixXd annihilator(int lambda) {
  const int d = lambda + 1;
  MatrixXd a = MatrixXd::Zero(d, d);
  for (int n = 1; n < d; ++n) a(n - 1, n) = std::sqrt(static_cast<double>(n));
  return a;
}

MatrixXd creator(int lambda) { return annihilator(lambda).transpose(); }

MatrixXd phi_local(int lambda) {
  return (annihilator(lambda) + creator(lambda)) / std::sqrt(2.0);
}

MatrixXcd pi_local(int lambda) {
  return Complex(0.0, 1.0) * (creator(lambda) - annihilator(lambda)).cast<Complex>() /
         std::sqrt(2.0);
}

MatrixXd parity_local(int lambda) {
  const int d = lambda + 1;
  MatrixXd p = MatrixXd::Zero(d, d);
  for (int n = 0; n < d; ++n) p(n, n) = (n % 2 == 0) ? 1.0 : -1.0;
  return p;
}

VectorXcd apply_mode_op(const MatrixXcd& op, int mode, const FockCutoff& cutoff,
                        const VectorXcd& v) {
  const int d = cutoff.local_dim();
  const long dim = cutoff.dim();
  long stride = 1;
  for (int j = 0; j < mode; ++j) stride *= d;
  const long block = stride * d;
  VectorXcd out = VectorXcd::Zero(dim);
  for (long base = 0; base < dim; base += block) {
    for (long offset = 0; offset < stride; ++offset) {
      // gather the fiber along `mode`
      for (int m = 0; m < d; ++m) {
        Complex acc(0.0, 0.0);
        for (int n = 0; n < d; ++n) {
          const Complex w = op(m, n);
          if (w != 0.0) acc += w * v[base + offset + stride * n];
        }
        out[base + offset + stride * m] = acc;
      }
    }
  }
  return out;
}

VectorXcd SumOperator::apply(const VectorXcd& v) const {
  VectorXcd out = VectorXcd::Zero(v.size());
  for (const Term& t : terms) {
    VectorXcd w = v;
    for (auto it = t.factors.rbegin(); it != t.factors.rend(); ++it)
      w = apply_mode_op(it->op, it->mode, cutoff, w);
    out += t.coeff * w;
  }
  return out;
}

MatrixXcd SumOperator::dense() const {
  const long dim = cutoff.dim();
  if (dim > kMaxDenseDim) throw std::runtime_error("SumOperator::dense: dimension too large");
  MatrixXcd m = MatrixXcd::Zero(dim, dim);
  VectorXcd e = VectorXcd::Zero(dim);
  for (long j = 0; j < dim; ++j) {
    e[j] = 1.0;
    m.col(j) = apply(e);
    e[j] = 0.0;
  }
  return m;
}

std::pair<SumOperator, SumOperator> ladder_ops(const FockCutoff& cutoff, int mode) {
  if (mode < 0 || mode >= cutoff.n_modes) throw std::out_of_range("ladder_ops: mode");
  SumOperator a{cutoff, {{1.0, {{mode, annihilator(cutoff.lambda).cast<Complex>()}}}}};
  SumOperator ad{cutoff, {{1.0, {{mode, creator(cutoff.lambda).cast<Complex>()}}}}};
  return {a, ad};
}

std::pair<SumOperator, SumOperator> quadratures(const FockCutoff& cutoff, int mode) {
  if (mode < 0 || mode >= cutoff.n_modes) throw std::out_of_range("quadratures: mode");
  SumOperator phi{cutoff, {{1.0, {{mode, phi_local(cutoff.lambda).cast<Complex>()}}}}};
  SumOperator pi{cutoff, {{1.0, {{mode, pi_local(cutoff.lambda)}}}}};
  return {phi, pi};
}

TruncatedOperator hamiltonian_0p1(int sigma, double lambda_coupling,
                                  const FockCutoff& cutoff) {
  if (cutoff.n_modes != 1) throw std::invalid_argument("hamiltonian_0p1: single mode only");
  if (sigma != 1 && sigma != -1) throw std::invalid_argument("hamiltonian_0p1: sigma must be ±1");
  if (lambda_coupling < 0) throw std::invalid_argument("hamiltonian_0p1: lambda must be >= 0");
  const MatrixXd phi = phi_local(cutoff.lambda);
  const MatrixXcd pi = pi_local(cutoff.lambda);
  const MatrixXd phi2 = phi * phi;
  MatrixXcd h = 0.5 * (pi * pi) + (0.5 * sigma) * phi2.cast<Complex>() +
                lambda_coupling * (phi2 * phi2).cast<Complex>();
  return {cutoff, h};
}

SumOperator hamiltonian_1p1(double m_sq, double lambda_coupling, const FockCutoff& cutoff) {
  const int N = cutoff.n_modes;
  if (N < 2) throw std::invalid_argument("hamiltonian_1p1: needs N >= 2 modes");
  const MatrixXd phi = phi_local(cutoff.lambda);
  const MatrixXcd pi2 = pi_local(cutoff.lambda) * pi_local(cutoff.lambda);
  const MatrixXd phi2 = phi * phi;
  const MatrixXd phi4 = phi2 * phi2;
  SumOperator h;
  h.cutoff = cutoff;
  for (int j = 0; j < N; ++j) {
    const int jp = (j + 1) % N;
    h.terms.push_back({0.5, {{j, pi2}}});
    // (phi_{j+1} - phi_j)^2 / 2 summed over j contributes phi_j^2 once per site
    h.terms.push_back({1.0 + 0.5 * m_sq, {{j, phi2.cast<Complex>()}}});
    h.terms.push_back({-1.0, {{j, phi.cast<Complex>()}, {jp, phi.cast<Complex>()}}});
    if (lambda_coupling != 0.0)
      h.terms.push_back({0.25 * lambda_coupling, {{j, phi4.cast<Complex>()}}});
  }
  return h;
}

MatrixXd squeeze_matrix(double r, const FockCutoff& cutoff) {
  if (cutoff.n_modes != 1) throw std::invalid_argument("squeeze_matrix: single mode only");
  const MatrixXd a = annihilator(cutoff.lambda);
  const MatrixXd ad = creator(cutoff.lambda);
  const MatrixXd gen = 0.5 * r * (ad * ad - a * a);
  return gen.exp();
}

namespace {

// S(r) e_{n1} at cutoff `lam` via a scaled Taylor expansion of the
// pentadiagonal generator (r/2)(ad^2 - a^2); O(lam) per matvec.
VectorXd squeeze_column(double r, int n1, int lam) {
  const int dim = lam + 1;
  auto gen_apply = [&](const VectorXd& v) {
    VectorXd w = VectorXd::Zero(dim);
    for (int n = 0; n + 2 <= lam; ++n) {
      const double ell = 0.5 * r * std::sqrt((n + 1.0) * (n + 2.0));
      w[n + 2] += ell * v[n];
      w[n] -= ell * v[n + 2];
    }
    return w;
  };
  VectorXd v = VectorXd::Zero(dim);
  v[n1] = 1.0;
  const int steps = std::max(1, static_cast<int>(std::ceil(std::abs(r) * (lam + 2))));
  for (int s = 0; s < steps; ++s) {
    VectorXd sum = v, term = v;
    for (int j = 1; j <= 40; ++j) {
      term = gen_apply(term) / (static_cast<double>(steps) * j);
      sum += term;
      if (term.norm() < 1e-18) break;
    }
    v = std::move(sum);
  }
  return v;
}

}  // namespace

std::vector<double> squeezed_fock_distribution(double r, int n1, int n2_max) {
  if (n1 < 0) throw std::invalid_argument("squeezed_fock_distribution: n1 must be >= 0");
  if (n2_max < 0) throw std::invalid_argument("squeezed_fock_distribution: n2_max must be >= 0");
  int lam = std::max({2 * (n2_max + 8), 4 * n1 + 40, 64});
  double prev_tail = -1.0;
  std::vector<double> probs;
  for (int iter = 0; iter < 12; ++iter) {
    const VectorXd col = squeeze_column(r, n1, lam);
    probs.assign(n2_max + 1, 0.0);
    double head = 0.0;
    for (int n2 = 0; n2 <= n2_max; ++n2) {
      probs[n2] = col[n2] * col[n2];
      head += probs[n2];
    }
    const double tail = 1.0 - head;
    if (prev_tail >= 0.0 && std::abs(tail - prev_tail) < 1e-12) return probs;
    prev_tail = tail;
    lam *= 2;
  }
  throw std::runtime_error("squeezed_fock_distribution: cutoff doubling did not converge");
}

namespace {

// Parity of a multimode basis state: product over modes of (−1)^{n_j}.
double basis_parity(long idx, int d, int n_modes) {
  int total = 0;
  for (int j = 0; j < n_modes; ++j) {
    total += static_cast<int>(idx % d);
    idx /= d;
  }
  return (total % 2 == 0) ? 1.0 : -1.0;
}

Spectrum spectrum_from_dense(const MatrixXcd& h, const FockCutoff& cutoff,
                             std::optional<int> parity_sector) {
  Eigen::SelfAdjointEigenSolver<MatrixXcd> es(h);
  if (es.info() != Eigen::Success) throw std::runtime_error("exact_ground: eigensolver failed");
  const long dim = h.rows();
  const int d = cutoff.local_dim();
  std::vector<int> picks;
  for (long k = 0; k < dim && picks.size() < 2; ++k) {
    if (parity_sector) {
      double p = 0.0;
      const VectorXcd v = es.eigenvectors().col(k);
      for (long i = 0; i < dim; ++i)
        p += basis_parity(i, d, cutoff.n_modes) * std::norm(v[i]);
      if (p * (*parity_sector) < 0.5) continue;
    }
    picks.push_back(static_cast<int>(k));
  }
  if (picks.size() < 2) throw std::runtime_error("exact_ground: sector has < 2 states");
  Spectrum s;
  s.e0 = es.eigenvalues()[picks[0]];
  s.e1 = es.eigenvalues()[picks[1]];
  s.ground = es.eigenvectors().col(picks[0]);
  return s;
}

// Lanczos with full reorthogonalization for the lowest two eigenpairs of a
// Hermitian operator given by its action. Deterministic start vector.
Spectrum lanczos_lowest_two(const SumOperator& h, std::optional<int> parity_sector) {
  const long dim = h.cutoff.dim();
  const int d = h.cutoff.local_dim();
  const int ncv = static_cast<int>(std::min<long>(dim, 320));
  MatrixXcd V(dim, ncv);
  VectorXd alpha = VectorXd::Zero(ncv), beta = VectorXd::Zero(ncv);

  std::mt19937_64 rng(0x5eedf0c5ULL);
  std::normal_distribution<double> gauss(0.0, 1.0);
  VectorXcd v(dim);
  for (long i = 0; i < dim; ++i) v[i] = Complex(gauss(rng), 0.0);
  if (parity_sector) {
    for (long i = 0; i < dim; ++i)
      if (basis_parity(i, d, h.cutoff.n_modes) * (*parity_sector) < 0.0) v[i] = 0.0;
  }
  v.normalize();
  V.col(0) = v;

  double prev_e0 = 1e300, prev_e1 = 1e300;
  int m = 0;
  Eigen::SelfAdjointEigenSolver<MatrixXd> tes;
  for (int k = 0; k < ncv; ++k) {
    VectorXcd w = h.apply(V.col(k));
    alpha[k] = w.dot(V.col(k)).real();
    w -= alpha[k] * V.col(k);
    if (k > 0) w -= beta[k - 1] * V.col(k - 1);
    // full reorthogonalization (twice for stability)
    for (int pass = 0; pass < 2; ++pass)
      w -= V.leftCols(k + 1) * (V.leftCols(k + 1).adjoint() * w);
    m = k + 1;
    const double b = w.norm();
    if (k + 1 < ncv) {
      if (b < 1e-13) break;  // invariant subspace reached
      beta[k] = b;
      V.col(k + 1) = w / b;
    }
    if (m >= 8 && (m % 10 == 0 || k + 1 == ncv)) {
      MatrixXd t = MatrixXd::Zero(m, m);
      for (int i = 0; i < m; ++i) {
        t(i, i) = alpha[i];
        if (i + 1 < m) t(i, i + 1) = t(i + 1, i) = beta[i];
      }
      tes.compute(t);
      const double e0 = tes.eigenvalues()[0];
      const double e1 = tes.eigenvalues()[std::min(1, m - 1)];
      if (std::abs(e0 - prev_e0) < 1e-11 && std::abs(e1 - prev_e1) < 1e-11) break;
      prev_e0 = e0;
      prev_e1 = e1;
    }
  }
  MatrixXd t = MatrixXd::Zero(m, m);
  for (int i = 0; i < m; ++i) {
    t(i, i) = alpha[i];
    if (i + 1 < m) t(i, i + 1) = t(i + 1, i) = beta[i];
  }
  tes.compute(t);
  Spectrum s;
  s.e0 = tes.eigenvalues()[0];
  s.e1 = tes.eigenvalues()[std::min(1, m - 1)];
  s.ground = V.leftCols(m) * tes.eigenvectors().col(0).cast<Complex>();
  s.ground.normalize();
  return s;
}

}  // namespace

Spectrum exact_ground(const TruncatedOperator& h, std::optional<int> parity_sector) {
  if (!h.is_hermitian(1e-10)) throw std::invalid_argument("exact_ground: H not Hermitian");
  return spectrum_from_dense(h.mat, h.cutoff, parity_sector);
}

Spectrum exact_ground(const SumOperator& h, std::optional<int> parity_sector) {
  if (h.cutoff.dim() <= 3000) return spectrum_from_dense(h.dense(), h.cutoff, parity_sector);
  return lanczos_lowest_two(h, parity_sector);
}

double fidelity(const VectorXcd& psi, const VectorXcd& chi) {
  if (psi.size() != chi.size()) throw std::invalid_argument("fidelity: size mismatch");
  const double np = psi.norm(), nc = chi.norm();
  if (np == 0.0 || nc == 0.0) throw std::invalid_argument("fidelity: zero vector");
  return std::norm(psi.dot(chi)) / (np * np * nc * nc);
}

Eigen::VectorXi cyclic_shift_permutation(const FockCutoff& cutoff) {
  const long dim = cutoff.dim();
  const int d = cutoff.local_dim();
  const int N = cutoff.n_modes;
  Eigen::VectorXi perm(dim);
  std::vector<int> n(N);
  for (long idx = 0; idx < dim; ++idx) {
    long rest = idx;
    for (int j = 0; j < N; ++j) {
      n[j] = static_cast<int>(rest % d);
      rest /= d;
    }
    long out = 0;
    long stride = 1;
    for (int j = 0; j < N; ++j) {
      out += stride * n[(j - 1 + N) % N];  // mode j of image = mode j−1 of source
      stride *= d;
    }
    perm[idx] = static_cast<int>(out);
  }
  return perm;
}

double converge_cutoff(const std::function<double(int)>& value, int lambda0, double tol,
                       int max_doublings) {
  int lam = lambda0;
  double prev = value(lam);
  for (int i = 0; i < max_doublings; ++i) {
    lam *= 2;
    const double cur = value(lam);
    if (std::abs(cur - prev) < tol) return cur;
    prev = cur;
  }
  throw std::runtime_error("converge_cutoff: no convergence within doubling budget");
}

}  // namespace stellarprep::fock
