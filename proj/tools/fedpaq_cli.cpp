// fedpaq: run, sweep and inspect FedPAQ simulations.
//
//   fedpaq run    --config run.ini [--out DIR] [--seed N] [--quiet]
//   fedpaq sweep  --config sweep.ini [--out DIR] [--seed N] [--quiet]
//   fedpaq theory --config run.ini
//   fedpaq check  [--seed N]
//
// The output directory defaults to $FEDPAQ_OUT_DIR, then ./fedpaq_out.

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "fedpaq/error.hpp"
#include "fedpaq/harness.hpp"

namespace {

std::filesystem::path default_out_dir() {
  if (const char* env = std::getenv("FEDPAQ_OUT_DIR"); env != nullptr && *env != '\0') {
    return env;
  }
  return "fedpaq_out";
}

void print_final(const fedpaq::ExecuteResult& res, const std::string& label) {
  const auto& recs = res.runs.front().records;
  if (recs.empty()) {
    std::cout << label << ": no rounds\n";
    return;
  }
  const auto& last = recs.back();
  std::cout << label << ": rounds=" << last.round << " iter=" << last.iter << " loss=" << last.train_loss
            << " sim_time_s=" << last.sim_time_s << " -> " << res.metrics_path.string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FedPAQ federated learning simulator"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = default_out_dir().string();
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  bool quiet = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "Run configuration file")->required()->check(CLI::ExistingFile);
    cmd->add_option("--seed", seed, "Override run.seed");
    cmd->add_option("--threads", threads, "Override federation.threads");
  };

  auto* run_cmd = app.add_subcommand("run", "Execute one configuration");
  add_common(run_cmd);
  run_cmd->add_option("--out", out_dir, "Output directory");
  run_cmd->add_flag("--quiet", quiet, "Only report errors");

  auto* sweep_cmd = app.add_subcommand("sweep", "Execute every point of the [sweep] section");
  add_common(sweep_cmd);
  sweep_cmd->add_option("--out", out_dir, "Output directory");
  sweep_cmd->add_flag("--quiet", quiet, "Only report errors");

  auto* theory_cmd = app.add_subcommand("theory", "Print the convergence-bound constants for a configuration");
  add_common(theory_cmd);

  auto* check_cmd = app.add_subcommand("check", "Run the statistical property checks");
  check_cmd->add_option("--seed", seed, "Seed for the checks");
  check_cmd->add_flag("--quiet", quiet, "Only print failures");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*check_cmd) {
      std::ostringstream report;
      const bool ok = fedpaq::run_self_checks(report, seed.value_or(0));
      if (!quiet || !ok) {
        std::cout << report.str();
      }
      return ok ? 0 : 1;
    }

    auto config = fedpaq::parse_config_file(config_path);
    if (seed) {
      config.seed = *seed;
    }
    if (threads) {
      config.threads = *threads;
    }
    fedpaq::validate(config);

    if (*theory_cmd) {
      std::cout << fedpaq::theory_report(config) << "\n";
    } else if (*run_cmd) {
      const auto res = fedpaq::execute(config, out_dir);
      if (!quiet) {
        print_final(res, "run");
      }
    } else if (*sweep_cmd) {
      const auto results = fedpaq::sweep(config, out_dir);
      if (!quiet) {
        for (std::size_t i = 0; i < results.size(); ++i) {
          print_final(results[i], "point " + std::to_string(i));
        }
        std::cout << "index: " << (std::filesystem::path(out_dir) / "index.csv").string() << "\n";
      }
    }
  } catch (const fedpaq::Error& e) {
    std::cerr << "fedpaq: " << e.what() << "\n";
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "fedpaq: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
