// Config-driven orchestration of the exact / pimc / optimize / circuitize /
// verify stages with seeded reproducibility and deterministic CSV output.

#include "stellarprep/pipeline.hpp"

#include "stellarprep/ansatz.hpp"
#include "stellarprep/fock.hpp"

#include "json.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <future>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace stellarprep::pipeline {

using nlohmann::json;

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

std::uint64_t fnv1a(const std::string& text, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

json canonical_json(const PipelineConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["exact_lambda"] = c.exact_lambda;
  json& ph = j["physics"];
  ph["single_mode"] = c.physics.single_mode;
  if (c.physics.single_mode) ph["sigma"] = c.physics.sigma;
  else ph["m_sq"] = c.physics.m_sq;
  ph["lambda"] = c.physics.lambda_coupling;
  ph["n_modes"] = c.physics.n_modes;
  json& pm = j["pimc"];
  pm["thetas"] = c.pimc.thetas;
  pm["temperature"] = c.pimc.temperature;
  pm["n_samples"] = c.pimc.n_samples;
  pm["n_bootstrap"] = c.pimc.n_bootstrap;
  pm["thinning"] = c.pimc.thinning;
  pm["burn_in"] = c.pimc.burn_in;
  json& an = j["ansatz"];
  an["rank"] = c.ansatz.rank;
  an["span"] = c.ansatz.span;
  json& op = j["optimization"];
  op["preset"] = c.optimization.preset;
  op["q_column"] = c.optimization.q_column;
  op["weights"] = c.optimization.weights;
  op["multistart"] = c.optimization.multistart;
  op["restarts"] = c.optimization.restarts;
  op["n_resamples"] = c.optimization.n_resamples;
  json& ci = j["circuit"];
  ci["f0"] = c.circuit.f0;
  ci["scheme"] = c.circuit.scheme;
  ci["lambda_max"] = c.circuit.lambda_max;
  return j;
}

[[noreturn]] void config_error(const std::string& path, const std::string& what) {
  throw std::runtime_error("config error at " + path + ": " + what);
}

void validate(const PipelineConfig& c) {
  const auto& p = c.physics;
  if (p.n_modes < 1) config_error("physics.n_modes", "must be >= 1");
  if (p.single_mode && p.n_modes != 1)
    config_error("physics.n_modes", "single-mode physics requires n_modes = 1");
  if (p.single_mode && std::abs(p.sigma) != 1)
    config_error("physics.sigma", "must be +1 or -1");
  if (c.ansatz.rank < 0 || c.ansatz.rank % 2 != 0)
    config_error("ansatz.rank", "must be a non-negative even integer");
  if (c.ansatz.span < 0 || c.ansatz.span > p.n_modes / 2)
    config_error("ansatz.span", "requires 0 <= span <= n_modes/2");
  if (c.pimc.thetas.empty()) config_error("pimc.thetas", "must be non-empty");
  for (double th : c.pimc.thetas) {
    if (th <= 0) config_error("pimc.thetas", "entries must be positive");
    const double slices = c.pimc.temperature / th;
    if (std::abs(slices - std::round(slices)) > 1e-9)
      config_error("pimc.thetas", "temperature/theta must be an integer (theta=" + fmt(th) + ")");
  }
  if (c.pimc.n_samples < 2) config_error("pimc.n_samples", "must be >= 2");
  if (c.pimc.n_bootstrap < 2) config_error("pimc.n_bootstrap", "must be >= 2");
  const std::string& pr = c.optimization.preset;
  if (pr != "columns" && pr != "moment-ratio" && pr != "two-point" && pr != "energy")
    config_error("optimization.preset",
                 "must be one of columns | moment-ratio | two-point | energy");
  if (c.circuit.f0 <= 0 || c.circuit.f0 >= 1)
    config_error("circuit.f0", "must lie in (0, 1)");
  if (c.circuit.scheme != "unary" && c.circuit.scheme != "binary")
    config_error("circuit.scheme", "must be unary | binary");
  if (c.circuit.lambda_max < c.ansatz.rank)
    config_error("circuit.lambda_max", "must be >= ansatz.rank");
  if (c.exact_lambda < 2) config_error("exact_lambda", "must be >= 2");
}

template <typename T>
T get_or(const json& j, const std::string& key, const T& fallback, const std::string& path) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    config_error(path + "." + key, e.what());
  }
}

std::string csv_path(const RunContext& ctx, const std::string& name) {
  return ctx.out_dir + "/" + name;
}

class CsvWriter {
 public:
  CsvWriter(const RunContext& ctx, const std::string& name,
            const std::vector<std::string>& columns)
      : path_(csv_path(ctx, name)), out_(path_) {
    if (!out_) throw std::runtime_error("cannot open " + path_ + " for writing");
    out_ << "# config=" << config_hash(ctx.cfg) << " seed=" << ctx.cfg.seed << "\n";
    for (size_t i = 0; i < columns.size(); ++i)
      out_ << columns[i] << (i + 1 < columns.size() ? "," : "\n");
  }
  void row(const std::vector<std::string>& cells) {
    for (size_t i = 0; i < cells.size(); ++i)
      out_ << cells[i] << (i + 1 < cells.size() ? "," : "\n");
  }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ofstream out_;
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << text;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void append_manifest(const RunContext& ctx, const std::string& command,
                     const std::vector<std::string>& outputs) {
  const std::string path = csv_path(ctx, "manifest.json");
  json manifest;
  {
    std::ifstream in(path);
    if (in) in >> manifest;
  }
  if (!manifest.contains("runs")) manifest["runs"] = json::array();
  json entry;
  entry["command"] = command;
  entry["config"] = config_hash(ctx.cfg);
  entry["seed"] = ctx.cfg.seed;
  entry["threads"] = ctx.threads;
  entry["outputs"] = outputs;
  manifest["runs"].push_back(entry);
  write_text(path, manifest.dump(2) + "\n");
}

// Effective lattice parameters for the sampler: the single-mode Hamiltonian
// pi^2/2 + sigma phi^2/2 + lambda phi^4 maps onto the lattice normalization
// m^2 phi^2/2 + (lambda'/4) phi^4 with lambda' = 4 lambda (the N=1 action
// drops the spatial bond).
std::pair<double, double> sampler_couplings(const PhysicsConfig& p) {
  if (p.single_mode) return {static_cast<double>(p.sigma), 4.0 * p.lambda_coupling};
  return {p.m_sq, p.lambda_coupling};
}

momentopt::HamiltonianSpec hamiltonian_spec(const PhysicsConfig& p) {
  if (p.single_mode) return momentopt::HamiltonianSpec::oscillator(p.sigma, p.lambda_coupling);
  return momentopt::HamiltonianSpec::lattice(p.m_sq, p.lambda_coupling, p.n_modes);
}

// Lowest two levels of the configured Hamiltonian with the dense oracle,
// cutoff-doubled until e0 and e1 settle to 1e-9. Only affordable when
// (lambda+1)^N stays small; callers guard.
std::pair<double, double> exact_levels(const PipelineConfig& cfg) {
  const auto& p = cfg.physics;
  double e0 = 0.0, e1 = 0.0;
  int lam = cfg.exact_lambda;
  double prev0 = kNan, prev1 = kNan;
  for (int it = 0; it < 8; ++it) {
    const fock::FockCutoff cutoff(lam, p.n_modes);
    fock::Spectrum sp;
    if (p.single_mode)
      sp = fock::exact_ground(fock::hamiltonian_0p1(p.sigma, p.lambda_coupling, cutoff));
    else
      sp = fock::exact_ground(fock::hamiltonian_1p1(p.m_sq, p.lambda_coupling, cutoff));
    e0 = sp.e0;
    e1 = sp.e1;
    if (std::abs(e0 - prev0) < 1e-9 && std::abs(e1 - prev1) < 1e-9) return {e0, e1};
    prev0 = e0;
    prev1 = e1;
    if (!p.single_mode) break;  // multimode: fixed per-mode cutoff, dim guarded
    lam *= 2;
  }
  return {e0, e1};
}

// ---- pimc stage ----------------------------------------------------------

struct ThetaResult {
  double theta = 0.0;
  double iac = 0.0, acceptance = 0.0;
  // observable label -> estimate, in a fixed emission order
  std::vector<std::pair<std::string, pimc::EstimateWithError>> estimates;
};

ThetaResult run_theta(const PipelineConfig& cfg, double theta, std::uint64_t chain_seed,
                      std::uint64_t boot_seed) {
  const auto [m_sq, lam] = sampler_couplings(cfg.physics);
  const int n_slices = static_cast<int>(std::round(cfg.pimc.temperature / theta));
  const pimc::LatticeShape shape(cfg.physics.n_modes, n_slices, theta);
  const pimc::LatticeEnsemble ens =
      pimc::sample_chain(shape, m_sq, lam, cfg.pimc.n_samples, cfg.pimc.thinning,
                         cfg.pimc.burn_in, chain_seed);

  ThetaResult res;
  res.theta = theta;
  res.iac = ens.iac;
  res.acceptance = ens.acceptance;
  const int nb = cfg.pimc.n_bootstrap;
  for (int power : {2, 4, 6, 8, 10})
    res.estimates.emplace_back("phi" + std::to_string(power),
                               pimc::local_moment(ens, power, nb, boot_seed));
  const auto phi2 = res.estimates[0].second;
  const auto phi4 = res.estimates[1].second;
  if (cfg.physics.n_modes >= 2) {
    const auto p01 = pimc::two_point(ens, 1, nb, boot_seed);
    res.estimates.emplace_back("phi0phi1", p01);
    if (cfg.physics.n_modes / 2 >= 4)
      res.estimates.emplace_back("phi0phi4", pimc::two_point(ens, 4, nb, boot_seed));
    res.estimates.emplace_back("pi2", pimc::virial_pi2(phi2, phi4, p01, m_sq, lam));
  } else {
    pimc::EstimateWithError zero;
    zero.bootstrap_means.assign(phi2.bootstrap_means.size(), 0.0);
    res.estimates.emplace_back("pi2", pimc::virial_pi2(phi2, phi4, zero, m_sq, lam));
  }
  const auto corr = pimc::temporal_correlator(ens, nb, boot_seed);
  const auto meff = pimc::effective_mass(corr, shape.temperature(), theta);
  res.estimates.emplace_back("gap", pimc::plateau_average(meff, shape.temperature()));
  return res;
}

// ---- optimize stage ------------------------------------------------------

std::vector<momentopt::TargetMoment> build_targets(const PipelineConfig& cfg, double w,
                                                   const RunContext& ctx) {
  const std::string& preset = cfg.optimization.preset;
  if (preset == "energy") return {};
  if (preset == "columns") {
    if (!cfg.physics.single_mode)
      config_error("optimization.preset", "'columns' requires single-mode physics");
    auto oracle = momentopt::single_mode_moment_oracle(cfg.physics.sigma,
                                                       cfg.physics.lambda_coupling);
    auto targets = momentopt::column_targets(cfg.optimization.q_column, oracle);
    for (auto& t : targets) t.weight *= w;
    return targets;
  }
  const auto table = read_moment_table(csv_path(ctx, "pimc_moments.csv"));
  const auto kind = preset == "moment-ratio" ? momentopt::PresetKind::MomentRatio
                                             : momentopt::PresetKind::TwoPoint;
  return momentopt::preset_multimode_targets(kind, table, w);
}

std::vector<double> weight_ladder(const PipelineConfig& cfg) {
  if (!cfg.optimization.weights.empty()) return cfg.optimization.weights;
  if (cfg.optimization.preset == "energy") return {0.0};
  if (cfg.optimization.preset == "columns") return {1.0};
  return momentopt::preset_weight_ladder(cfg.optimization.preset == "moment-ratio"
                                             ? momentopt::PresetKind::MomentRatio
                                             : momentopt::PresetKind::TwoPoint);
}

// ---- circuitize helpers --------------------------------------------------

circuits::QubitEncoding make_encoding(const std::string& scheme, int lambda) {
  return circuits::QubitEncoding(scheme == "unary" ? circuits::QubitEncoding::Scheme::Unary
                                                   : circuits::QubitEncoding::Scheme::Binary,
                                 lambda);
}

struct CircuitBundle {
  ansatz::AnsatzParams params;
  circuits::ErrorBudget budget;
  circuits::GateCircuit circuit;
};

circuits::ErrorBudget resource_budget_impl(const ansatz::AnsatzParams& params, double f0,
                                           int lambda_max, std::string* certificate) {
  const auto& tmpl = params.core.tmpl;
  const std::optional<int> span =
      tmpl.n_modes > 1 ? std::optional<int>(tmpl.span) : std::nullopt;
  try {
    const auto budget =
        circuits::min_resources(params.r, tmpl.rank, span, tmpl.n_modes, f0, lambda_max);
    if (certificate) *certificate = "analytic-majorant";
    return budget;
  } catch (const std::exception&) {
    if (tmpl.n_modes != 1) throw;
  }
  // The analytic truncation majorant cannot certify f0 (it diverges for
  // |r| >~ 0.5). Certify with the exactly measured truncation distance
  // instead; the Trotter part keeps the rigorous commutator bound.
  const double eps_target = std::sqrt(2.0 * (1.0 - std::sqrt(f0)));
  const double half = eps_target / 2.0;
  for (int lam = std::max(tmpl.rank, 2); lam <= lambda_max; ++lam) {
    const double tr = measured_trunc_error(params, lam);
    if (tr > half) continue;
    const double c1 = circuits::trotter_error(params.r, lam, 1, 1);
    long k = 1;
    if (c1 > half) {
      long lo = 1, hi = 2;
      while (c1 / static_cast<double>(hi) > half) hi *= 2;
      while (hi - lo > 1) {
        const long mid = lo + (hi - lo) / 2;
        (c1 / static_cast<double>(mid) <= half ? hi : lo) = mid;
      }
      k = hi;
    }
    circuits::ErrorBudget b;
    b.lambda = lam;
    b.k_layers = static_cast<int>(k);
    b.eps_trunc = tr;
    b.eps_trott = c1 / static_cast<double>(k);
    const double eps = b.eps_trunc + b.eps_trott;
    b.fidelity_lower =
        eps < std::sqrt(2.0) ? std::pow(1.0 - eps * eps / 2.0, 2) : 0.0;
    if (certificate) *certificate = "measured-truncation";
    return b;
  }
  throw std::runtime_error("resource budget: f0 unreachable within lambda_max "
                           "(measured-truncation fallback included)");
}

CircuitBundle build_circuit(const RunContext& ctx, std::string* certificate) {
  const PipelineConfig& cfg = ctx.cfg;
  CircuitBundle out;
  out.params = ansatz::deserialize(read_text(csv_path(ctx, "opt_result.txt")));
  const auto& tmpl = out.params.core.tmpl;
  out.budget = resource_budget_impl(out.params, cfg.circuit.f0, cfg.circuit.lambda_max,
                                    certificate);
  const auto enc = make_encoding(cfg.circuit.scheme, out.budget.lambda);
  if (cfg.circuit.scheme == "binary" && out.params.r != 0.0)
    throw std::runtime_error(
        "binary encoding supports core-only circuits (r = 0); use scheme=unary");
  const auto sparse = circuits::encode_core(out.params.core, enc);
  out.circuit = circuits::sparse_prep(sparse, enc.qubits_per_mode() * tmpl.n_modes);
  out.circuit.encoding = enc;
  if (out.params.r != 0.0)
    out.circuit.append(
        circuits::trotter_squeeze(out.params.r, enc, out.budget.k_layers, tmpl.n_modes));
  out.circuit.meta.r = out.params.r;
  out.circuit.meta.lambda = out.budget.lambda;
  out.circuit.meta.k_layers = out.budget.k_layers;
  out.circuit.meta.rank = tmpl.rank;
  out.circuit.meta.span = tmpl.span;
  out.circuit.meta.n_modes = tmpl.n_modes;
  return out;
}

// Statevector index of an occupation tuple under the circuit encoding.
long basis_index(const std::vector<int>& occ, const circuits::QubitEncoding& enc) {
  const int n_q = enc.qubits_per_mode();
  long idx = 0;
  for (size_t j = 0; j < occ.size(); ++j) {
    if (enc.scheme == circuits::QubitEncoding::Scheme::Unary)
      idx |= 1L << (static_cast<int>(j) * n_q + occ[j]);
    else
      idx |= static_cast<long>(occ[j]) << (static_cast<int>(j) * n_q);
  }
  return idx;
}

double simulated_fidelity(const circuits::GateCircuit& circuit,
                          const ansatz::AnsatzParams& params, int lambda, int n_modes) {
  const Eigen::VectorXcd v = circuits::simulate(circuit);
  // exact reference at a much larger cutoff (dimension permitting)
  int ref_lambda = lambda;
  while (static_cast<double>(std::pow(ref_lambda + 2.0, n_modes)) < 2.0e6 &&
         ref_lambda < 4 * lambda + 40)
    ++ref_lambda;
  const fock::FockCutoff ref(ref_lambda, n_modes);
  const fock::VectorXcd exact = ansatz::build_state(params, ref);

  std::complex<double> overlap = 0.0;
  std::vector<int> occ(n_modes, 0);
  const long dim = ref.dim();
  for (long flat = 0; flat < dim; ++flat) {
    long rem = flat;
    bool inside = true;
    for (int j = 0; j < n_modes; ++j) {
      occ[j] = static_cast<int>(rem % (ref_lambda + 1));
      rem /= ref_lambda + 1;
      inside = inside && occ[j] <= lambda;
    }
    if (inside) overlap += std::conj(exact[flat]) * v[basis_index(occ, circuit.encoding)];
  }
  return std::norm(overlap);
}

}  // namespace

// ---- config --------------------------------------------------------------

PipelineConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    config_error("<document>", e.what());
  }
  PipelineConfig c;
  c.seed = get_or<std::uint64_t>(j, "seed", c.seed, "");
  c.exact_lambda = get_or<int>(j, "exact_lambda", c.exact_lambda, "");
  if (j.contains("physics")) {
    const json& ph = j.at("physics");
    c.physics.n_modes = get_or<int>(ph, "n_modes", 1, "physics");
    if (ph.contains("sigma") && ph.contains("m_sq"))
      config_error("physics", "give either sigma (single mode) or m_sq (lattice), not both");
    if (ph.contains("m_sq")) {
      c.physics.single_mode = false;
      c.physics.m_sq = ph.at("m_sq").get<double>();
    } else {
      c.physics.single_mode = true;
      c.physics.sigma = get_or<int>(ph, "sigma", 1, "physics");
    }
    if (!ph.contains("lambda")) config_error("physics.lambda", "required");
    c.physics.lambda_coupling = ph.at("lambda").get<double>();
  }
  if (j.contains("pimc")) {
    const json& pm = j.at("pimc");
    c.pimc.thetas = get_or<std::vector<double>>(pm, "thetas", c.pimc.thetas, "pimc");
    c.pimc.temperature = get_or<double>(pm, "temperature", c.pimc.temperature, "pimc");
    c.pimc.n_samples = get_or<int>(pm, "n_samples", c.pimc.n_samples, "pimc");
    c.pimc.n_bootstrap = get_or<int>(pm, "n_bootstrap", c.pimc.n_bootstrap, "pimc");
    c.pimc.thinning = get_or<int>(pm, "thinning", c.pimc.thinning, "pimc");
    c.pimc.burn_in = get_or<int>(pm, "burn_in", c.pimc.burn_in, "pimc");
  }
  if (j.contains("ansatz")) {
    const json& an = j.at("ansatz");
    c.ansatz.rank = get_or<int>(an, "rank", c.ansatz.rank, "ansatz");
    c.ansatz.span = get_or<int>(an, "span", c.ansatz.span, "ansatz");
  }
  if (j.contains("optimization")) {
    const json& op = j.at("optimization");
    c.optimization.preset = get_or<std::string>(op, "preset", c.optimization.preset, "optimization");
    c.optimization.q_column = get_or<int>(op, "q_column", c.optimization.q_column, "optimization");
    c.optimization.weights =
        get_or<std::vector<double>>(op, "weights", c.optimization.weights, "optimization");
    c.optimization.multistart =
        get_or<int>(op, "multistart", c.optimization.multistart, "optimization");
    c.optimization.restarts = get_or<int>(op, "restarts", c.optimization.restarts, "optimization");
    c.optimization.n_resamples =
        get_or<int>(op, "n_resamples", c.optimization.n_resamples, "optimization");
  }
  if (j.contains("circuit")) {
    const json& ci = j.at("circuit");
    c.circuit.f0 = get_or<double>(ci, "f0", c.circuit.f0, "circuit");
    c.circuit.scheme = get_or<std::string>(ci, "scheme", c.circuit.scheme, "circuit");
    c.circuit.lambda_max = get_or<int>(ci, "lambda_max", c.circuit.lambda_max, "circuit");
  }
  validate(c);
  return c;
}

PipelineConfig load_config(const std::string& path) { return parse_config(read_text(path)); }

std::string config_hash(const PipelineConfig& cfg) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a(canonical_json(cfg).dump())));
  return buf;
}

std::uint64_t substream(std::uint64_t master, const std::string& name, std::uint64_t index) {
  return splitmix64(master ^ fnv1a(name) ^ (0x9e3779b97f4a7c15ULL * (index + 1)));
}

// ---- commands ------------------------------------------------------------

int cmd_exact(const RunContext& ctx) {
  const PipelineConfig& cfg = ctx.cfg;
  const auto& p = cfg.physics;
  if (!p.single_mode) {
    const fock::FockCutoff guard(cfg.exact_lambda, p.n_modes);
    if (guard.dim() > (1L << 22))
      throw std::runtime_error("exact oracle dimension too large; lower exact_lambda/n_modes");
  }
  const auto [e0, e1] = exact_levels(cfg);

  CsvWriter spec_csv(ctx, "exact_spectrum.csv", {"quantity", "value"});
  spec_csv.row({"e0", fmt(e0)});
  spec_csv.row({"e1", fmt(e1)});
  spec_csv.row({"gap", fmt(e1 - e0)});

  CsvWriter mom_csv(ctx, "exact_moments.csv", {"observable", "value"});
  if (p.single_mode) {
    auto oracle = momentopt::single_mode_moment_oracle(p.sigma, p.lambda_coupling);
    for (int power : {2, 4, 6, 8, 10})
      mom_csv.row({"phi" + std::to_string(power), fmt(oracle(power, 0))});
    mom_csv.row({"pi2", fmt(oracle(0, 2))});
  } else {
    const fock::FockCutoff cutoff(cfg.exact_lambda, p.n_modes);
    const auto ground =
        fock::exact_ground(fock::hamiltonian_1p1(p.m_sq, p.lambda_coupling, cutoff)).ground;
    const Eigen::MatrixXcd phi = fock::phi_local(cutoff.lambda).cast<fock::Complex>();
    const Eigen::MatrixXcd pi = fock::pi_local(cutoff.lambda);
    auto expect = [&](const Eigen::MatrixXcd& op, int mode, int reps) {
      fock::VectorXcd v = ground;
      for (int k = 0; k < reps; ++k) v = fock::apply_mode_op(op, mode, cutoff, v);
      return (ground.adjoint() * v)(0).real();
    };
    for (int power : {2, 4, 6, 8, 10})
      mom_csv.row({"phi" + std::to_string(power), fmt(expect(phi, 0, power))});
    mom_csv.row({"pi2", fmt(expect(pi, 0, 2))});
    for (int sep = 1; sep <= p.n_modes / 2; ++sep) {
      fock::VectorXcd v = fock::apply_mode_op(phi, 0, cutoff, ground);
      v = fock::apply_mode_op(phi, sep, cutoff, v);
      mom_csv.row({"phi0phi" + std::to_string(sep), fmt((ground.adjoint() * v)(0).real())});
    }
  }
  append_manifest(ctx, "exact", {spec_csv.path(), mom_csv.path()});
  return 0;
}

int cmd_pimc(const RunContext& ctx) {
  const PipelineConfig& cfg = ctx.cfg;
  const int n_thetas = static_cast<int>(cfg.pimc.thetas.size());
  std::vector<ThetaResult> results(n_thetas);
  const int stride = std::max(1, ctx.threads);
  for (int base = 0; base < n_thetas; base += stride) {
    std::vector<std::future<ThetaResult>> batch;
    for (int i = base; i < std::min(base + stride, n_thetas); ++i)
      batch.push_back(std::async(std::launch::async, run_theta, std::cref(cfg),
                                 cfg.pimc.thetas[i], substream(cfg.seed, "chain", i),
                                 substream(cfg.seed, "bootstrap", i)));
    for (int i = base; i < std::min(base + stride, n_thetas); ++i)
      results[i] = batch[i - base].get();
  }

  CsvWriter csv(ctx, "pimc_moments.csv",
                {"observable", "theta", "mean", "stderr", "n_bootstrap", "iac", "acceptance",
                 "chi2_red", "model"});
  for (const auto& res : results)
    for (const auto& [label, est] : res.estimates)
      csv.row({label, fmt(res.theta), fmt(est.mean), fmt(est.std_err),
               std::to_string(cfg.pimc.n_bootstrap), fmt(res.iac), fmt(res.acceptance),
               fmt(kNan), ""});

  // theta -> 0 extrapolation per observable (needs at least three spacings)
  if (n_thetas >= 3) {
    for (size_t obs = 0; obs < results[0].estimates.size(); ++obs) {
      std::vector<std::pair<double, pimc::EstimateWithError>> points;
      for (const auto& res : results)
        points.emplace_back(res.theta, res.estimates[obs].second);
      const pimc::FitResult fit = pimc::extrapolate_theta(points);
      csv.row({results[0].estimates[obs].first, fmt(0.0), fmt(fit.intercept.mean),
               fmt(fit.intercept.std_err), std::to_string(cfg.pimc.n_bootstrap), fmt(kNan),
               fmt(kNan), fmt(fit.chi2_red),
               fit.model == pimc::FitResult::Model::Linear ? "linear" : "quadratic"});
    }
  }
  append_manifest(ctx, "pimc", {csv.path()});
  return 0;
}

int cmd_optimize(const RunContext& ctx) {
  const PipelineConfig& cfg = ctx.cfg;
  momentopt::LossSpec spec;
  spec.ham = hamiltonian_spec(cfg.physics);
  spec.tmpl = ansatz::enumerate_core_template(cfg.ansatz.rank, cfg.ansatz.span,
                                              cfg.physics.n_modes);
  double e0 = kNan, e1 = kNan;
  if (cfg.physics.single_mode) std::tie(e0, e1) = exact_levels(cfg);

  const std::vector<double> ladder = weight_ladder(cfg);
  CsvWriter csv(ctx, "optimize.csv",
                {"weight", "energy", "delta_e_pct", "loss", "rms_residual", "r", "converged",
                 "energy_std", "r_std"});
  std::vector<std::string> outputs = {csv.path()};
  momentopt::OptResult last;
  momentopt::MinimizeInit init;
  for (size_t wi = 0; wi < ladder.size(); ++wi) {
    spec.targets = build_targets(cfg, ladder[wi], ctx);
    momentopt::OptOptions opts;
    opts.multistart = cfg.optimization.multistart;
    opts.restarts = cfg.optimization.restarts;
    opts.seed = substream(cfg.seed, "restart", wi);
    momentopt::OptResult res = momentopt::minimize(spec, opts, init);
    res.delta_e =
        cfg.physics.single_mode ? 100.0 * momentopt::delta_E(res.energy, e0, e1) : kNan;

    double rms = 0.0;
    for (double d : res.residuals) rms += d * d;
    rms = res.residuals.empty() ? 0.0 : std::sqrt(rms / res.residuals.size());

    double energy_std = kNan, r_std = kNan;
    bool stochastic = false;
    for (const auto& t : spec.targets) stochastic = stochastic || t.sigma > 0;
    if (cfg.optimization.n_resamples > 0 && stochastic) {
      const auto unc = momentopt::propagate_uncertainty(
          spec, res, cfg.optimization.n_resamples, substream(cfg.seed, "resample", wi));
      energy_std = unc.energy_std;
      r_std = unc.param_std[0];
    }
    csv.row({fmt(ladder[wi]), fmt(res.energy), fmt(res.delta_e), fmt(res.loss_value), fmt(rms),
             fmt(res.params.r), res.converged ? "1" : "0", fmt(energy_std), fmt(r_std)});

    const std::string record = csv_path(ctx, "opt_result_w" + std::to_string(wi) + ".txt");
    write_text(record, ansatz::serialize(res.params));
    outputs.push_back(record);
    last = res;
    // warm-start the next rung of the weight ladder
    init.kind = momentopt::MinimizeInit::Kind::Given;
    init.given = res.params;
  }
  write_text(csv_path(ctx, "opt_result.txt"), ansatz::serialize(last.params));
  outputs.push_back(csv_path(ctx, "opt_result.txt"));
  append_manifest(ctx, "optimize", outputs);
  return 0;
}

int cmd_circuitize(const RunContext& ctx) {
  const PipelineConfig& cfg = ctx.cfg;
  std::string certificate;
  const CircuitBundle bundle = build_circuit(ctx, &certificate);
  const auto& tmpl = bundle.params.core.tmpl;

  write_text(csv_path(ctx, "circuit.qasm"), circuits::export_qasm(bundle.circuit));

  CsvWriter budget_csv(ctx, "budget.csv",
                       {"r", "rank", "span", "n_modes", "f0", "lambda", "k_layers", "eps_trunc",
                        "eps_trott", "fidelity_lower", "certificate"});
  budget_csv.row({fmt(bundle.params.r), std::to_string(tmpl.rank), std::to_string(tmpl.span),
                  std::to_string(tmpl.n_modes), fmt(cfg.circuit.f0),
                  std::to_string(bundle.budget.lambda), std::to_string(bundle.budget.k_layers),
                  fmt(bundle.budget.eps_trunc), fmt(bundle.budget.eps_trott),
                  fmt(bundle.budget.fidelity_lower), certificate});

  const auto counts = circuits::gate_counts(bundle.circuit);
  std::ostringstream meta;
  meta << "n_qubits " << bundle.circuit.n_qubits << "\n"
       << "scheme " << cfg.circuit.scheme << "\n"
       << "lambda " << bundle.budget.lambda << "\n"
       << "k_layers " << bundle.budget.k_layers << "\n"
       << "r " << fmt(bundle.params.r) << "\n"
       << "not_gates " << counts.not_gates << "\n"
       << "cnots " << counts.cnots << "\n"
       << "rotations " << counts.rotations << "\n"
       << "controlled_rotations " << counts.controlled_rotations << "\n"
       << "pauli_rotations " << counts.pauli_rotations << "\n"
       << "cnot_equivalents " << counts.cnot_equivalents << "\n";
  write_text(csv_path(ctx, "circuit_meta.txt"), meta.str());

  append_manifest(ctx, "circuitize",
                  {csv_path(ctx, "circuit.qasm"), budget_csv.path(),
                   csv_path(ctx, "circuit_meta.txt")});
  return 0;
}

int cmd_verify(const RunContext& ctx, const std::string& qasm_path) {
  const PipelineConfig& cfg = ctx.cfg;
  const auto params = ansatz::deserialize(read_text(csv_path(ctx, "opt_result.txt")));
  const auto& tmpl = params.core.tmpl;
  const auto budget = resource_budget(params, cfg.circuit.f0, cfg.circuit.lambda_max);

  circuits::GateCircuit circuit = circuits::import_qasm(read_text(qasm_path));
  circuit.encoding = make_encoding(cfg.circuit.scheme, budget.lambda);
  if (circuit.n_qubits > 26)
    throw std::runtime_error("register too large to simulate (" +
                             std::to_string(circuit.n_qubits) + " qubits)");

  const double fidelity = simulated_fidelity(circuit, params, budget.lambda, tmpl.n_modes);
  const bool pass = fidelity + 1e-12 >= budget.fidelity_lower;
  std::ostringstream report;
  report << "fidelity " << fmt(fidelity) << "\n"
         << "fidelity_lower " << fmt(budget.fidelity_lower) << "\n"
         << "pass " << (pass ? 1 : 0) << "\n";
  write_text(csv_path(ctx, "verify.txt"), report.str());
  append_manifest(ctx, "verify", {csv_path(ctx, "verify.txt")});
  return pass ? 0 : 1;
}

int cmd_pipeline(const RunContext& ctx) {
  const PipelineConfig& cfg = ctx.cfg;
  if (cfg.physics.single_mode) {
    if (int rc = cmd_exact(ctx)) return rc;
  } else {
    if (int rc = cmd_pimc(ctx)) return rc;
  }
  if (int rc = cmd_optimize(ctx)) return rc;
  if (int rc = cmd_circuitize(ctx)) return rc;

  // verify only when the register fits the statevector simulator
  const auto params = ansatz::deserialize(read_text(csv_path(ctx, "opt_result.txt")));
  const auto& tmpl = params.core.tmpl;
  const auto budget = resource_budget(params, cfg.circuit.f0, cfg.circuit.lambda_max);
  const auto enc = make_encoding(cfg.circuit.scheme, budget.lambda);
  if (enc.qubits_per_mode() * tmpl.n_modes <= 26)
    return cmd_verify(ctx, csv_path(ctx, "circuit.qasm"));
  append_manifest(ctx, "verify-skipped", {});
  return 0;
}

double measured_trunc_error(const ansatz::AnsatzParams& params, int lambda) {
  const auto& tmpl = params.core.tmpl;
  if (tmpl.n_modes != 1)
    throw std::invalid_argument("measured_trunc_error: single mode only");
  if (lambda < tmpl.rank)
    throw std::invalid_argument("measured_trunc_error: lambda below the core rank");

  Eigen::VectorXd core = Eigen::VectorXd::Zero(tmpl.rank + 1);
  for (const auto& [occ, amp] : ansatz::core_fock_amplitudes(params.core)) core[occ[0]] = amp;
  core.normalize();

  double prev = kNan;
  for (int big = std::max(4 * lambda + 40, 2 * lambda + 80);; big *= 2) {
    Eigen::VectorXd embedded = Eigen::VectorXd::Zero(big + 1);
    embedded.head(core.size()) = core;
    const Eigen::VectorXd full = fock::squeeze_matrix(params.r, fock::FockCutoff(big, 1)) * embedded;
    const Eigen::VectorXd truncated =
        fock::squeeze_matrix(params.r, fock::FockCutoff(lambda, 1)) * embedded.head(lambda + 1);
    Eigen::VectorXd diff = full;
    diff.head(lambda + 1) -= truncated;
    const double eps = diff.norm();
    if (std::abs(eps - prev) < 1e-10) return eps;
    prev = eps;
    if (big > 4096)
      throw std::runtime_error("measured_trunc_error: reference cutoff did not converge");
  }
}

circuits::ErrorBudget resource_budget(const ansatz::AnsatzParams& params, double f0,
                                      int lambda_max) {
  return resource_budget_impl(params, f0, lambda_max, nullptr);
}

std::map<std::string, std::pair<double, double>> read_moment_table(const std::string& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw std::runtime_error("cannot open " + csv_path + " (run the pimc stage first)");
  std::map<std::string, std::pair<double, double>> table;
  std::map<std::string, std::pair<double, double>> smallest_theta;
  std::map<std::string, double> best_theta;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("observable", 0) == 0) continue;
    std::istringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 4) continue;
    const std::string& label = cells[0];
    const double theta = std::stod(cells[1]);
    const double mean = std::stod(cells[2]);
    const double err = std::stod(cells[3]);
    if (theta == 0.0) {
      table[label] = {mean, err};
    } else if (!best_theta.count(label) || theta < best_theta[label]) {
      best_theta[label] = theta;
      smallest_theta[label] = {mean, err};
    }
  }
  // fall back to the finest available spacing when no extrapolated rows exist
  for (const auto& [label, value] : smallest_theta)
    if (!table.count(label)) table[label] = value;
  if (table.empty()) throw std::runtime_error("no moment rows found in " + csv_path);
  return table;
}

}  // namespace stellarprep::pipeline
