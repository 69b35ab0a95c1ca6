// stellarprep: config-driven pipeline driver.
// Subcommands: exact | pimc | optimize | circuitize | verify | pipeline.

#include "stellarprep/pipeline.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir = ".";
  std::string seed_override;  // empty = use config
  int threads = 0;            // 0 = flag absent
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "pipeline configuration (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--out", args.out_dir, "output directory (created if missing)");
  cmd->add_option("--seed", args.seed_override, "master seed override (decimal u64)");
  cmd->add_option("--threads", args.threads, "worker threads (default: STELLARPREP_THREADS or 1)");
}

stellarprep::pipeline::RunContext make_context(const CommonArgs& args) {
  stellarprep::pipeline::RunContext ctx;
  ctx.cfg = stellarprep::pipeline::load_config(args.config_path);
  if (!args.seed_override.empty())
    ctx.cfg.seed = std::stoull(args.seed_override);
  ctx.out_dir = args.out_dir;
  std::filesystem::create_directories(ctx.out_dir);
  ctx.threads = args.threads;
  if (ctx.threads <= 0) {
    const char* env = std::getenv("STELLARPREP_THREADS");
    ctx.threads = env ? std::max(1, std::atoi(env)) : 1;
  }
  return ctx;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"squeezed-core ansatz pipeline: sampling, optimization, circuit synthesis"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string qasm_path;

  CLI::App* exact = app.add_subcommand("exact", "dense-oracle spectrum and moment tables");
  CLI::App* pimc = app.add_subcommand("pimc", "Monte-Carlo moment/gap tables with extrapolation");
  CLI::App* optimize = app.add_subcommand("optimize", "fit the ansatz over the weight ladder");
  CLI::App* circuitize = app.add_subcommand("circuitize", "compile the fitted ansatz to QASM");
  CLI::App* verify = app.add_subcommand("verify", "simulate a QASM file against the exact state");
  CLI::App* pipeline = app.add_subcommand("pipeline", "run all stages in order");
  for (CLI::App* cmd : {exact, pimc, optimize, circuitize, verify, pipeline})
    add_common(cmd, args);
  verify->add_option("--qasm", qasm_path, "QASM file (default: <out>/circuit.qasm)");

  CLI11_PARSE(app, argc, argv);

  try {
    const auto ctx = make_context(args);
    if (exact->parsed()) return stellarprep::pipeline::cmd_exact(ctx);
    if (pimc->parsed()) return stellarprep::pipeline::cmd_pimc(ctx);
    if (optimize->parsed()) return stellarprep::pipeline::cmd_optimize(ctx);
    if (circuitize->parsed()) return stellarprep::pipeline::cmd_circuitize(ctx);
    if (verify->parsed()) {
      if (qasm_path.empty()) qasm_path = ctx.out_dir + "/circuit.qasm";
      return stellarprep::pipeline::cmd_verify(ctx, qasm_path);
    }
    return stellarprep::pipeline::cmd_pipeline(ctx);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
