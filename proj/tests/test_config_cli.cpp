#include <doctest.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>

#include "fedirm/config.hpp"
#include "fedirm/gradcheck.hpp"

using namespace fedirm;

namespace {

namespace fs = std::filesystem;

struct CliResult {
  int exit_code = -1;
  std::string output;
};

CliResult run_cli(const std::string& args) {
  const std::string command = std::string(FEDIRM_CLI_PATH) + " " + args + " 2>&1";
  CliResult result;
  FILE* pipe = popen(command.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 512> buffer;
  while (fgets(buffer.data(), buffer.size(), pipe)) result.output += buffer.data();
  const int status = pclose(pipe);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

std::string tiny_config_text(std::uint64_t seed) {
  return "[experiment]\n"
         "seed = " + std::to_string(seed) + "\n"
         "rounds = 2\n"
         "clients = 3\n"
         "labeled_clients = 2\n"
         "[data]\n"
         "classes = 3\n"
         "per_class = 30\n"
         "dimension = 4\n"
         "[model]\n"
         "hidden = 8\n";
}

std::string slurp(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(is)),
                     std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("config: defaults match the documented values") {
  const ExperimentConfig cfg = parse_config_text("");
  CHECK(cfg.mode == Mode::FedIrm);
  CHECK(cfg.clients == 10);
  CHECK(cfg.labeled_clients == 2);
  CHECK(cfg.rounds == 100);
  CHECK(cfg.local.batch_size == 48);
  CHECK(cfg.local.temperature == 2.0);
  CHECK(cfg.local.mc_passes == 8);
  CHECK(cfg.local.entropy_threshold == std::numbers::ln2);
  CHECK(cfg.local.warmup_rounds == 30);
  CHECK(cfg.local.epochs == 1);
  CHECK(cfg.local.adam.beta1 == 0.9);
  CHECK(cfg.local.adam.beta2 == 0.99);
  CHECK(cfg.local.adam.learning_rate == 1e-3);
  CHECK(cfg.local.adam.epsilon == 1e-3);
  CHECK(cfg.local.irm_weight == 1.0);
  CHECK(cfg.local.unlabeled_uses_logits == false);
}

TEST_CASE("config: synthetic data lowers the default batch size on resolve") {
  ExperimentConfig blobs = parse_config_text("");
  resolve(blobs);
  CHECK(blobs.local.batch_size == kSyntheticBatchSize);

  ExperimentConfig idx = parse_config_text(
      "[data]\nsource = idx\nimages = img.idx\nlabels = lab.idx\n");
  resolve(idx);
  CHECK(idx.local.batch_size == kDefaultBatchSize);

  ExperimentConfig pinned = parse_config_text("[local]\nbatch_size = 20\n");
  resolve(pinned);
  CHECK(pinned.local.batch_size == 20);
}

TEST_CASE("config: unknown keys and malformed lines are hard errors") {
  CHECK_THROWS_WITH_AS(parse_config_text("[experiment]\nroundz = 5\n"),
                       doctest::Contains("unknown key"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("[nonsense]\nmode = fedirm\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("rounds = 5\n"), ConfigError);  // outside a section
  CHECK_THROWS_AS(parse_config_text("[experiment]\nrounds 5\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("[experiment]\nrounds = abc\n"), ConfigError);
}

TEST_CASE("config: validation rules") {
  ExperimentConfig cfg = parse_config_text("[experiment]\nlabeled_clients = 11\n");
  CHECK_THROWS_AS(resolve(cfg), ConfigError);

  ExperimentConfig all = parse_config_text(
      "[experiment]\nmode = fedavg_all_labeled\nlabeled_clients = 2\n");
  resolve(all);
  CHECK(all.labeled_clients == all.clients);

  ExperimentConfig bad_temp = parse_config_text("[local]\ntemperature = 0\n");
  CHECK_THROWS_AS(resolve(bad_temp), ConfigError);
  ExperimentConfig bad_active =
      parse_config_text("[experiment]\nactive_unlabeled = 9\n");
  CHECK_THROWS_AS(resolve(bad_active), ConfigError);
}

TEST_CASE("config: resolved echo round-trips to an identical config") {
  ExperimentConfig cfg = parse_config_text(tiny_config_text(5));
  cfg.local.perturb.sigma = 0.123456789012345;
  cfg.spread = 0.7071067811865476;
  resolve(cfg);
  ExperimentConfig again = parse_config_text(serialize_config(cfg));
  resolve(again);
  CHECK(cfg == again);
  CHECK(serialize_config(cfg) == serialize_config(again));
}

TEST_CASE("config: missing file raises an io error naming the path") {
  CHECK_THROWS_WITH_AS(parse_config_file("/no/such/fedirm.conf"),
                       doctest::Contains("/no/such/fedirm.conf"), IoError);
}

TEST_CASE("gradcheck: corrupted gradient is detected (negative control)") {
  const auto honest = run_gradient_checks(7, 2, 1e-4, false);
  CHECK(honest.all_pass);
  const auto corrupted = run_gradient_checks(7, 2, 1e-4, true);
  CHECK(!corrupted.all_pass);
  CHECK(corrupted.cases.front().loss_name == "cross_entropy");
  CHECK(!corrupted.cases.front().pass);
}

TEST_CASE("gradcheck: report covers every trained loss") {
  const auto report = run_gradient_checks(11, 1, 1e-4, false);
  REQUIRE(report.cases.size() >= 3);
  CHECK(report.cases[0].loss_name == "cross_entropy");
  CHECK(report.cases[1].loss_name == "consistency");
  CHECK(report.cases[2].loss_name == "irm");
  const std::string text = format_gradcheck_report(report);
  CHECK(text.find("cross_entropy") != std::string::npos);
  CHECK(text.find("consistency") != std::string::npos);
  CHECK(text.find("irm") != std::string::npos);
}

TEST_CASE("cli: missing config file exits nonzero and names the path") {
  const CliResult r = run_cli("run --config /definitely/not/here.conf");
  CHECK(r.exit_code != 0);
  CHECK(r.output.find("/definitely/not/here.conf") != std::string::npos);
  CHECK(r.output.find("error:") != std::string::npos);
}

TEST_CASE("cli: gradcheck negative control exits nonzero") {
  const CliResult r = run_cli("gradcheck --trials 1 --corrupt");
  CHECK(r.exit_code != 0);
  CHECK(r.output.find("cross_entropy") != std::string::npos);
}

TEST_CASE("cli: identical config and seed give byte-identical metrics") {
  const fs::path dir = fs::temp_directory_path() / "fedirm_cli_det";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const fs::path config = dir / "exp.conf";
  {
    std::ofstream os(config);
    os << tiny_config_text(12);
  }

  const CliResult a =
      run_cli("run --config " + config.string() + " --out " + (dir / "a").string());
  const CliResult b =
      run_cli("run --config " + config.string() + " --out " + (dir / "b").string());
  REQUIRE(a.exit_code == 0);
  REQUIRE(b.exit_code == 0);

  const std::string ma = slurp(dir / "a" / "metrics.csv");
  const std::string mb = slurp(dir / "b" / "metrics.csv");
  CHECK(!ma.empty());
  CHECK(ma == mb);

  // The resolved config echo re-runs to the same bytes as well.
  const CliResult c = run_cli("run --config " + (dir / "a" / "config.resolved").string() +
                              " --out " + (dir / "c").string());
  REQUIRE(c.exit_code == 0);
  CHECK(slurp(dir / "c" / "metrics.csv") == ma);
  fs::remove_all(dir);
}

TEST_CASE("cli: dump-relations writes the relation file") {
  const fs::path dir = fs::temp_directory_path() / "fedirm_cli_dump";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const fs::path config = dir / "exp.conf";
  {
    std::ofstream os(config);
    os << tiny_config_text(13);
  }
  const CliResult run = run_cli("run --config " + config.string() + " --out " +
                                (dir / "run").string());
  REQUIRE(run.exit_code == 0);

  const CliResult dump = run_cli(
      "dump-relations --config " + config.string() + " --checkpoint " +
      (dir / "run" / "checkpoints" / "best.bin").string() + " --out " +
      (dir / "dump").string());
  CHECK(dump.exit_code == 0);
  CHECK(fs::exists(dir / "dump" / "relations.csv"));

  std::ifstream is(dir / "dump" / "relations.csv");
  std::string header;
  std::getline(is, header);
  CHECK(header.find("matrix,class,e0") == 0);
  fs::remove_all(dir);
}
