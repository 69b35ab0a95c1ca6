#pragma once
// Config-driven orchestration: JSON pipeline configuration, named RNG
// sub-streams from one master seed, CSV/QASM/manifest emission, and the
// exact | pimc | optimize | circuitize | verify | pipeline commands.

#include "stellarprep/circuits.hpp"
#include "stellarprep/momentopt.hpp"
#include "stellarprep/pimc.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace stellarprep::pipeline {

struct PhysicsConfig {
  bool single_mode = true;
  int sigma = 1;                  // single-mode quadratic sign
  double m_sq = 0.0;              // lattice mass^2
  double lambda_coupling = 0.0;
  int n_modes = 1;
};

struct PimcConfig {
  std::vector<double> thetas = {0.4, 0.2, 0.1};
  double temperature = 10.0;      // T = M * theta, each T/theta integral
  int n_samples = 1500;
  int n_bootstrap = 200;
  int thinning = 1;
  int burn_in = 500;
};

struct AnsatzConfig {
  int rank = 4;  // R, even
  int span = 0;  // Q <= N/2
};

struct OptimConfig {
  // "columns" (single-mode exact-moment targets), "moment-ratio",
  // "two-point" (both driven by the pimc table), or "energy".
  std::string preset = "columns";
  int q_column = 0;               // for "columns"
  std::vector<double> weights;    // ladder; empty = preset default
  int multistart = 4;
  int restarts = 6;
  int n_resamples = 0;            // >0 adds target-resampling spread columns
};

struct CircuitConfig {
  double f0 = 0.9;
  std::string scheme = "unary";   // "unary" | "binary" (binary: r = 0 only)
  int lambda_max = 64;
};

struct PipelineConfig {
  std::uint64_t seed = 0x5eedULL;
  PhysicsConfig physics;
  PimcConfig pimc;
  AnsatzConfig ansatz;
  OptimConfig optimization;
  CircuitConfig circuit;
  int exact_lambda = 16;          // dense-oracle cutoff (single mode; per mode for lattices)
};

// Parse + validate (R even, Q <= N/2, T/theta integral, ...); throws
// std::runtime_error naming the offending config path.
PipelineConfig parse_config(const std::string& json_text);
PipelineConfig load_config(const std::string& path);

// FNV-1a hash of the canonical config serialization, as fixed-width hex.
std::string config_hash(const PipelineConfig& cfg);

// Deterministic named sub-stream of the master seed (chain, bootstrap,
// restart, resample, ...).
std::uint64_t substream(std::uint64_t master, const std::string& name, std::uint64_t index = 0);

struct RunContext {
  PipelineConfig cfg;
  std::string out_dir = ".";
  int threads = 1;
};

// Each command writes its tables into ctx.out_dir and appends to the run
// manifest; returns 0 on full success.
int cmd_exact(const RunContext& ctx);
int cmd_pimc(const RunContext& ctx);
int cmd_optimize(const RunContext& ctx);       // reads pimc_moments.csv when the preset needs it
int cmd_circuitize(const RunContext& ctx);     // reads opt_result.txt
int cmd_verify(const RunContext& ctx, const std::string& qasm_path);
int cmd_pipeline(const RunContext& ctx);

// Exact single-mode truncation distance ||(S(r) - S^Lambda(r)) |C>||, with the
// untruncated operator approximated at a reference cutoff doubled until the
// distance settles to 1e-10.
double measured_trunc_error(const ansatz::AnsatzParams& params, int lambda);

// Budget used by circuitize/verify: the analytic-majorant search when it can
// certify f0; otherwise (single mode only) the smallest lambda/K combination
// certified by the measured truncation distance plus the rigorous commutator
// Trotter bound. The analytic truncation majorant diverges for |r| >~ 0.5, so
// strongly squeezed single-mode ansatzes require the measured fallback.
circuits::ErrorBudget resource_budget(const ansatz::AnsatzParams& params, double f0,
                                      int lambda_max);

// Moment table loaded back from a pimc_moments.csv (theta = 0 rows):
// observable -> (mean, stderr).
std::map<std::string, std::pair<double, double>> read_moment_table(const std::string& csv_path);

}  // namespace stellarprep::pipeline
