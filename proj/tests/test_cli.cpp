// Pipeline CLI tests: config parsing/validation, deterministic sub-streams,
// output-file contracts, and full-pipeline byte determinism under fixed seeds.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "stellarprep/pipeline.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace stellarprep;

namespace {

const std::string kSingleModeJson = R"({
  "seed": 2024,
  "physics": {"sigma": 1, "lambda": 5.0},
  "ansatz": {"rank": 4, "span": 0},
  "optimization": {"preset": "columns", "q_column": 0, "weights": [1.0],
                   "multistart": 4, "restarts": 6},
  "circuit": {"f0": 0.9, "scheme": "unary", "lambda_max": 64},
  "exact_lambda": 16
})";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& leaf) {
  fs::path dir = fs::temp_directory_path() / ("stellarprep_cli_test_" + leaf);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write_config(const fs::path& dir, const std::string& text) {
  fs::path p = dir / "config.json";
  std::ofstream(p) << text;
  return p;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(STELLARPREP_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  int rc = std::system(cmd.c_str());
  return rc < 0 ? rc : WEXITSTATUS(rc);
}

std::vector<std::string> csv_lines(const fs::path& p) {
  std::vector<std::string> lines;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

}  // namespace

TEST_CASE("config parsing accepts the reference single-mode document") {
  const pipeline::PipelineConfig cfg = pipeline::parse_config(kSingleModeJson);
  CHECK(cfg.seed == 2024);
  CHECK(cfg.physics.single_mode);
  CHECK(cfg.physics.sigma == 1);
  CHECK(cfg.physics.lambda_coupling == doctest::Approx(5.0));
  CHECK(cfg.ansatz.rank == 4);
  CHECK(cfg.optimization.preset == "columns");
  CHECK(cfg.circuit.f0 == doctest::Approx(0.9));
  CHECK(cfg.exact_lambda == 16);
}

TEST_CASE("config defaults fill unspecified blocks") {
  const pipeline::PipelineConfig cfg =
      pipeline::parse_config(R"({"physics": {"lambda": 1.0}})");
  CHECK(cfg.physics.single_mode);
  CHECK(cfg.ansatz.rank == 4);
  CHECK(cfg.pimc.thetas.size() == 3);
  CHECK(cfg.circuit.scheme == "unary");
}

TEST_CASE("config validation rejects malformed documents") {
  auto with = [](const std::string& patch) {
    return std::string(R"({"physics": {"sigma": 1, "lambda": 1.0},)") +
           patch + "}";
  };
  // Odd stellar rank.
  CHECK_THROWS_AS((void)pipeline::parse_config(with(R"("ansatz": {"rank": 3})")),
                  std::runtime_error);
  // Unknown optimization preset.
  CHECK_THROWS_AS((void)pipeline::parse_config(with(R"("optimization": {"preset": "zigzag"})")),
                  std::runtime_error);
  // f0 outside (0, 1).
  CHECK_THROWS_AS((void)pipeline::parse_config(with(R"("circuit": {"f0": 1.0})")),
                  std::runtime_error);
  // Unknown encoding scheme.
  CHECK_THROWS_AS((void)pipeline::parse_config(with(R"("circuit": {"scheme": "ternary"})")),
                  std::runtime_error);
  // Span exceeding N / 2 on a lattice.
  CHECK_THROWS_AS(
      (void)pipeline::parse_config(
          R"({"physics": {"n_modes": 4, "m_sq": 1.0},
              "ansatz": {"rank": 2, "span": 3}})"),
      std::runtime_error);
  // Non-integral T / theta.
  CHECK_THROWS_AS(
      (void)pipeline::parse_config(
          R"({"physics": {"n_modes": 4, "m_sq": 1.0},
              "pimc": {"thetas": [0.3], "temperature": 1.0}})"),
      std::runtime_error);
  // Not JSON at all.
  CHECK_THROWS_AS((void)pipeline::parse_config("not json"), std::runtime_error);
}

TEST_CASE("config hash is stable, formatting-insensitive, and value-sensitive") {
  const pipeline::PipelineConfig cfg = pipeline::parse_config(kSingleModeJson);
  const std::string h = pipeline::config_hash(cfg);
  CHECK(h.size() == 16);
  CHECK(h.find_first_not_of("0123456789abcdef") == std::string::npos);
  CHECK(pipeline::config_hash(cfg) == h);

  // Whitespace-only changes to the document do not move the hash.
  std::string spaced = kSingleModeJson;
  spaced.insert(1, "\n\n   ");
  CHECK(pipeline::config_hash(pipeline::parse_config(spaced)) == h);

  pipeline::PipelineConfig other = cfg;
  other.circuit.f0 = 0.95;
  CHECK(pipeline::config_hash(other) != h);
  other = cfg;
  other.seed = 7;
  CHECK(pipeline::config_hash(other) != h);
}

TEST_CASE("named sub-streams are deterministic and well separated") {
  const std::uint64_t master = 0x5eedULL;
  CHECK(pipeline::substream(master, "chain", 0) == pipeline::substream(master, "chain", 0));
  CHECK(pipeline::substream(master, "chain", 0) != pipeline::substream(master, "chain", 1));
  CHECK(pipeline::substream(master, "chain", 0) != pipeline::substream(master, "bootstrap", 0));
  CHECK(pipeline::substream(master, "chain", 0) != pipeline::substream(master + 1, "chain", 0));

  // No collisions across a modest grid of names and indices.
  std::vector<std::uint64_t> seen;
  for (const char* name : {"chain", "bootstrap", "restart", "resample"})
    for (std::uint64_t i = 0; i < 64; ++i)
      seen.push_back(pipeline::substream(master, name, i));
  std::sort(seen.begin(), seen.end());
  CHECK(std::adjacent_find(seen.begin(), seen.end()) == seen.end());
}

TEST_CASE("read_moment_table round-trips a written table") {
  const fs::path dir = fresh_dir("moment_table");
  const fs::path p = dir / "pimc_moments.csv";
  std::ofstream(p) << "# config=deadbeefdeadbeef seed=1\n"
                   << "observable,theta,mean,stderr,n_bootstrap,iac,acceptance,chi2_red,model\n"
                   << "phi2,0.2,0.51,0.01,200,1.5,0.6,nan,\n"
                   << "phi2,0.1,0.502,0.008,200,1.4,0.6,nan,\n"
                   << "phi2,0,0.5,0.005,200,nan,nan,1.1,linear\n"
                   << "phi4,0.1,0.77,0.02,200,1.3,0.6,nan,\n";
  const auto table = pipeline::read_moment_table(p.string());
  REQUIRE(table.count("phi2") == 1);
  REQUIRE(table.count("phi4") == 1);
  // theta = 0 extrapolation preferred; otherwise the smallest available theta.
  CHECK(table.at("phi2").first == doctest::Approx(0.5));
  CHECK(table.at("phi2").second == doctest::Approx(0.005));
  CHECK(table.at("phi4").first == doctest::Approx(0.77));
  fs::remove_all(dir);
}

TEST_CASE("CLI rejects bad invocations with nonzero exit") {
  const fs::path dir = fresh_dir("bad_invocations");
  CHECK(run_cli("") != 0);  // subcommand required
  CHECK(run_cli("pipeline --config " + (dir / "missing.json").string()) != 0);
  const fs::path bad = write_config(dir, R"({"ansatz": {"rank": 3}})");
  CHECK(run_cli("pipeline --config " + bad.string() + " --out " + dir.string()) != 0);
  // circuitize before optimize: no opt_result.txt to read.
  const fs::path good = write_config(fresh_dir("bad_stage"), kSingleModeJson);
  CHECK(run_cli("circuitize --config " + good.string() + " --out " +
                good.parent_path().string()) != 0);
  fs::remove_all(dir);
  fs::remove_all(good.parent_path());
}

TEST_CASE("binary encoding refuses a squeezed ansatz") {
  const fs::path dir = fresh_dir("binary_refuse");
  std::string doc = kSingleModeJson;
  const auto pos = doc.find("\"unary\"");
  REQUIRE(pos != std::string::npos);
  doc.replace(pos, 7, "\"binary\"");
  const fs::path cfg = write_config(dir, doc);
  CHECK(run_cli("optimize --config " + cfg.string() + " --out " + dir.string()) == 0);
  CHECK(run_cli("circuitize --config " + cfg.string() + " --out " + dir.string()) != 0);
  fs::remove_all(dir);
}

TEST_CASE("single-mode pipeline: outputs, certificates, and byte determinism") {
  const fs::path dir = fresh_dir("pipeline_det");
  const fs::path cfg = write_config(dir, kSingleModeJson);
  const fs::path run1 = dir / "run1";
  const fs::path run2 = dir / "run2";

  REQUIRE(run_cli("pipeline --config " + cfg.string() + " --out " + run1.string()) == 0);

  for (const char* f : {"exact_spectrum.csv", "exact_moments.csv", "optimize.csv",
                        "opt_result.txt", "circuit.qasm", "budget.csv", "circuit_meta.txt",
                        "verify.txt", "manifest.json"})
    CHECK(fs::exists(run1 / f));

  const pipeline::PipelineConfig parsed = pipeline::parse_config(kSingleModeJson);
  const std::string expect_comment =
      "# config=" + pipeline::config_hash(parsed) + " seed=2024";

  // Every CSV starts with the provenance comment and a header row.
  for (const char* f : {"exact_spectrum.csv", "exact_moments.csv", "optimize.csv", "budget.csv"}) {
    const auto lines = csv_lines(run1 / f);
    REQUIRE(lines.size() >= 3);
    CHECK(lines[0] == expect_comment);
    CHECK(lines[1].find(',') != std::string::npos);
  }

  // Optimizer found the strongly squeezed optimum with a sub-0.01% energy error.
  {
    const auto lines = csv_lines(run1 / "optimize.csv");
    CHECK(lines[1] ==
          "weight,energy,delta_e_pct,loss,rms_residual,r,converged,energy_std,r_std");
    std::istringstream row(lines[2]);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    REQUIRE(cells.size() == 9);
    CHECK(std::stod(cells[2]) < 0.01);                              // delta_e_pct
    CHECK(std::stod(cells[5]) == doctest::Approx(-0.9053).epsilon(0.01));  // r
    CHECK(cells[6] == "1");                                         // converged
  }

  // Budget falls back to the measured-truncation certificate at this r and the
  // verifier accepts the circuit against its own lower bound.
  {
    const auto lines = csv_lines(run1 / "budget.csv");
    REQUIRE(lines.size() == 3);
    CHECK(lines[1].rfind(",certificate") == lines[1].size() - 12);
    CHECK(lines[2].rfind("measured-truncation") != std::string::npos);
  }
  {
    const std::string verify = slurp(run1 / "verify.txt");
    CHECK(verify.find("pass 1") != std::string::npos);
  }

  // Same config, same seed: byte-identical artifacts.
  REQUIRE(run_cli("pipeline --config " + cfg.string() + " --out " + run2.string()) == 0);
  for (const char* f : {"exact_spectrum.csv", "exact_moments.csv", "optimize.csv",
                        "opt_result.txt", "circuit.qasm", "budget.csv", "verify.txt"})
    CHECK(slurp(run1 / f) == slurp(run2 / f));

  // Seed override is honored and recorded in the provenance comment.
  const fs::path run3 = dir / "run3";
  REQUIRE(run_cli("optimize --config " + cfg.string() + " --seed 99 --out " +
                  run3.string()) == 0);
  pipeline::PipelineConfig reseeded = parsed;
  reseeded.seed = 99;
  CHECK(csv_lines(run3 / "optimize.csv")[0] ==
        "# config=" + pipeline::config_hash(reseeded) + " seed=99");

  // Manifest records one entry per stage with its outputs.
  const std::string manifest = slurp(run1 / "manifest.json");
  for (const char* stage : {"exact", "optimize", "circuitize", "verify"})
    CHECK(manifest.find(std::string("\"") + stage + "\"") != std::string::npos);
  CHECK(manifest.find("circuit.qasm") != std::string::npos);

  fs::remove_all(dir);
}

TEST_CASE("multimode pipeline: sampled tables feed the moment-ratio fit") {
  const fs::path dir = fresh_dir("pipeline_mm");
  const std::string doc = R"({
    "seed": 77,
    "physics": {"n_modes": 4, "m_sq": 0.2, "lambda": 0.5},
    "pimc": {"thetas": [0.4, 0.2], "temperature": 10.0, "n_samples": 400,
             "n_bootstrap": 100, "burn_in": 200},
    "ansatz": {"rank": 2, "span": 1},
    "optimization": {"preset": "moment-ratio", "weights": [12.5, 25.0],
                     "multistart": 2, "restarts": 4, "n_resamples": 4},
    "circuit": {"f0": 0.9, "scheme": "unary", "lambda_max": 64},
    "exact_lambda": 4
  })";
  const fs::path cfg = write_config(dir, doc);
  REQUIRE(run_cli("pimc --config " + cfg.string() + " --out " + dir.string()) == 0);
  REQUIRE(run_cli("optimize --config " + cfg.string() + " --out " + dir.string()) == 0);

  const auto table = pipeline::read_moment_table((dir / "pimc_moments.csv").string());
  for (const char* key : {"phi2", "phi4", "phi6", "phi0phi1", "pi2", "gap"}) {
    REQUIRE(table.count(key) == 1);
    CHECK(std::isfinite(table.at(key).first));
    CHECK(table.at(key).second > 0.0);
  }

  const auto lines = csv_lines(dir / "optimize.csv");
  REQUIRE(lines.size() == 4);  // comment + header + two weight rungs
  // delta_e_pct is a single-mode diagnostic; on lattices it must read nan.
  std::istringstream row(lines[2]);
  std::string cell;
  std::vector<std::string> cells;
  while (std::getline(row, cell, ',')) cells.push_back(cell);
  REQUIRE(cells.size() == 9);
  CHECK(cells[2] == "nan");
  // Resampling spread columns populated when n_resamples > 0.
  CHECK(std::stod(cells[7]) > 0.0);
  CHECK(std::stod(cells[8]) > 0.0);
  fs::remove_all(dir);
}
