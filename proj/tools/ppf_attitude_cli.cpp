// Experiment runner: ppf_attitude run --config cfg.json [overrides]

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "ppf_attitude/ppf_attitude.hpp"

namespace fs = std::filesystem;
using namespace ppf_attitude;

namespace {

// "a.b.c=value"; value is parsed as JSON, falling back to a plain string.
void apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw Error(ErrorCode::ConfigInvalid, "override must look like key.path=value: " + assignment);
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  std::string pointer = "/" + key;
  for (auto& c : pointer) {
    if (c == '.') c = '/';
  }
  j[nlohmann::json::json_pointer(pointer)] = value;
}

int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::EnvelopeViolated:
    case ErrorCode::NearUnstableSet:
      return 2;
    default:
      return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prescribed-performance attitude estimation experiments"};
  app.require_subcommand(0, 1);

  bool print_default = false;
  bool print_discrete = false;
  app.add_flag("--print-default-config", print_default, "print the continuous-time study configuration");
  app.add_flag("--print-discrete-config", print_discrete, "print the discrete-time study configuration");

  auto* run = app.add_subcommand("run", "run an experiment");
  std::string config_path;
  std::optional<std::string> estimator;
  std::optional<std::string> form;
  std::optional<std::uint64_t> seed;
  std::optional<int> runs;
  std::optional<int> threads;
  std::string out_dir = ".";
  bool strict = false;
  bool explore = false;
  std::vector<std::string> overrides;
  run->add_option("--config", config_path, "JSON configuration file")->check(CLI::ExistingFile);
  run->add_option("--estimator", estimator, "semi|direct|both");
  run->add_option("--form", form, "cont|disc|quat");
  run->add_option("--seed", seed, "base seed");
  run->add_option("--out", out_dir, "output directory");
  run->add_option("--runs", runs, "Monte Carlo run count");
  run->add_option("--threads", threads, "worker threads for Monte Carlo");
  auto* strict_flag = run->add_flag("--strict", strict, "abort on envelope breach");
  run->add_flag("--explore", explore, "record breaches and continue")->excludes(strict_flag);
  run->add_option("--set", overrides, "override a config key, e.g. --set ppf.xi0=1.0");

  CLI11_PARSE(app, argc, argv);

  if (print_default || print_discrete) {
    const auto cfg = print_discrete ? ExperimentConfig::reference_discrete() : ExperimentConfig::reference();
    std::cout << config_to_json(cfg).dump(2) << '\n';
    return 0;
  }
  if (!*run) {
    std::cerr << app.help();
    return 1;
  }

  try {
    nlohmann::json j = config_path.empty() ? config_to_json(ExperimentConfig::reference()) : nlohmann::json{};
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw Error(ErrorCode::IoError, "cannot open " + config_path);
      j = nlohmann::json::parse(in, nullptr, false);
      if (j.is_discarded()) throw Error(ErrorCode::ConfigInvalid, config_path + ": not valid JSON");
    }
    if (estimator) j["estimator"] = *estimator;
    if (form) j["form"] = *form;
    if (seed) j["seed"] = *seed;
    if (runs) j["runs"] = *runs;
    if (threads) j["threads"] = *threads;
    if (strict) j["strict"] = true;
    if (explore) j["strict"] = false;
    for (const auto& o : overrides) apply_override(j, o);

    const ExperimentConfig cfg = config_from_json(j);
    cfg.validate();
    fs::create_directories(out_dir);

    if (cfg.runs > 1) {
      const MonteCarloResult mc = run_monte_carlo(cfg, cfg.runs);
      bool all_pass = true;
      for (const auto& e : mc.filters) {
        write_json(ensemble_to_json(e), fs::path(out_dir) / ("ensemble_" + e.tag + ".json"));
        std::printf("%-12s runs=%zu mean=%.4e std=%.4e pass_rate=%.2f\n", e.tag.c_str(), e.runs.size(),
                    e.mean_of_means, e.std_of_means, e.pass_rate);
        all_pass = all_pass && e.pass_rate == 1.0;
      }
      return cfg.strict && !all_pass ? 2 : 0;
    }

    const ExperimentResult result = run_experiment(cfg);
    for (const auto& f : result.filters) {
      write_csv(f.record, fs::path(out_dir) / ("trajectory_" + f.tag + ".csv"));
      write_json(summary_to_json(f.summary), fs::path(out_dir) / ("summary_" + f.tag + ".json"));
      if (f.summary.samples > 0) {
        std::printf("%-12s mean=%.4e std=%.4e", f.tag.c_str(), f.summary.mean, f.summary.std_dev);
      } else {
        std::printf("%-12s mean=n/a std=n/a", f.tag.c_str());
      }
      std::printf(" envelope=%s final=%.4e%s%s\n", f.summary.envelope_pass ? "pass" : "FAIL", f.summary.final_dist,
                  f.summary.error.empty() ? "" : " error: ", f.summary.error.c_str());
    }
    return 0;
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
