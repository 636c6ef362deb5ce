// Command-line driver for the three-stage pipeline: data generation, world
// model pretraining, behavior-prior extraction, planner training, and
// evaluation/ablation reports.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "heat/pipeline.hpp"

namespace fs = std::filesystem;
using heat::RunConfig;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitArtifact = 3;
constexpr int kExitNumerical = 4;

RunConfig load_config(const std::string& path, std::uint64_t seed_override, bool has_seed) {
  RunConfig cfg;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw heat::FormatError("cannot open config: " + path);
    cfg = heat::json::parse(in).get<RunConfig>();
  }
  if (has_seed) cfg.model.seed = seed_override;
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string render_open_loop_table(const heat::json& report) {
  std::string out = "section      l2@1s   l2@2s   l2@3s   l2@avg  coll%avg\n";
  auto add_row = [&out](const std::string& name, const heat::json& r) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-11s %7.3f %7.3f %7.3f %7.3f %9.2f\n", name.c_str(),
                  r["l2"]["1s"].get<double>(), r["l2"]["2s"].get<double>(),
                  r["l2"]["3s"].get<double>(), r["l2"]["avg"].get<double>(),
                  r["collision_pct"]["avg"].get<double>());
    out += buf;
  };
  if (report.contains("open_loop")) {
    for (auto& [key, val] : report["open_loop"].items()) add_row(key, val);
  }
  return out;
}

template <class S>
int dispatch(const std::string& cmd, const RunConfig& cfg, std::uint64_t seed,
             const std::string& dataset, const std::string& checkpoint,
             const std::string& priors, const std::string& out, bool force, bool do_open,
             bool do_closed, bool do_latents, int threads) {
  if (cmd == "gen-data") {
    heat::cmd_gen_data(cfg, seed, out, force);
    heat::Dataset ds = heat::load_dataset(out);
    std::map<std::pair<int, int>, int> counts;
    for (const auto& ep : ds.episodes) counts[{ep.domain_id, ep.behavior}]++;
    for (const auto& [k, v] : counts) {
      std::cout << "domain " << k.first << " behavior "
                << heat::behavior_name(static_cast<heat::Behavior>(k.second)) << ": " << v
                << " episodes\n";
    }
    std::cout << "wrote " << ds.episodes.size() << " episodes to " << out << "\n";
  } else if (cmd == "train-wm") {
    heat::cmd_train_wm<S>(cfg, dataset, out, force, threads);
    std::cout << "wrote world-model checkpoint " << out << "\n";
  } else if (cmd == "build-priors") {
    heat::cmd_build_priors<S>(cfg, dataset, checkpoint, out, force);
    std::cout << "wrote priors " << out << "\n";
  } else if (cmd == "train-policy") {
    heat::cmd_train_policy<S>(cfg, dataset, priors, out, force, threads);
    std::cout << "wrote policy checkpoint " << out << "\n";
  } else if (cmd == "eval") {
    if (!do_open && !do_closed && !do_latents) do_open = true;
    heat::json report =
        heat::cmd_eval<S>(cfg, checkpoint, priors, dataset, do_open, do_closed, do_latents);
    if (!out.empty()) {
      heat::require_fresh_path(out, force);
      write_text(out, report.dump(2) + "\n");
    }
    std::cout << render_open_loop_table(report);
    if (report.contains("closed_loop")) {
      std::cout << "mean mini-PDMS: " << report["closed_loop"]["mean_mini_pdms"].get<double>()
                << "\n";
    }
  } else if (cmd == "ablate") {
    heat::json bundle = heat::cmd_ablate<S>(cfg, dataset, priors, out, force, threads);
    write_text(fs::path(out) / "ablation.json", bundle.dump(2) + "\n");
    for (const auto& row : bundle["rows"]) {
      std::cout << "cltp=" << row["cltp"].get<bool>() << " emar=" << row["emar"].get<bool>()
                << " l2_avg="
                << row["report"]["open_loop"]["overall"]["l2"]["avg"].get<double>() << "\n";
    }
  } else if (cmd == "report") {
    std::ifstream in(checkpoint.empty() ? out : checkpoint);
    if (!in) throw heat::FormatError("cannot open report json");
    heat::json report = heat::json::parse(in);
    std::cout << render_open_loop_table(report);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"heat: trajectory-conditioned world model + behavior-prior planner pipeline"};
  app.require_subcommand(1);

  std::string config_path, dataset, checkpoint, priors, out, precision = "f32";
  std::uint64_t seed = 0;
  bool has_seed = false, force = false;
  bool do_open = false, do_closed = false, do_latents = false;
  int threads = 1;

  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option_function<std::uint64_t>(
      "--seed", [&](std::uint64_t s) { seed = s; has_seed = true; }, "root seed override");
  app.add_option("--out", out, "output path");
  app.add_flag("--force", force, "overwrite existing outputs");
  app.add_option("--precision", precision, "f32 or f64")
      ->check(CLI::IsMember({"f32", "f64"}));
  app.add_option("--threads", threads, "gradient worker threads");

  const char* names[] = {"gen-data", "train-wm", "build-priors", "train-policy",
                         "eval",     "ablate",   "report"};
  for (const char* n : names) {
    CLI::App* sub = app.add_subcommand(n);
    sub->add_option("--dataset", dataset, "dataset directory");
    sub->add_option("--checkpoint", checkpoint, "checkpoint path");
    sub->add_option("--priors", priors, "priors artifact path");
    if (std::string(n) == "eval") {
      sub->add_flag("--open", do_open, "open-loop metrics");
      sub->add_flag("--closed", do_closed, "closed-loop rollouts");
      sub->add_flag("--latents", do_latents, "latent-structure diagnostics");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    RunConfig cfg = load_config(config_path, seed, has_seed);
    std::string cmd = app.get_subcommands().front()->get_name();
    std::uint64_t data_seed = has_seed ? seed : cfg.model.seed;
    if (precision == "f64") {
      return dispatch<double>(cmd, cfg, data_seed, dataset, checkpoint, priors, out, force,
                              do_open, do_closed, do_latents, threads);
    }
    return dispatch<float>(cmd, cfg, data_seed, dataset, checkpoint, priors, out, force, do_open,
                           do_closed, do_latents, threads);
  } catch (const heat::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const heat::InvalidArgument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const heat::FormatError& e) {
    std::cerr << "artifact error: " << e.what() << "\n";
    return kExitArtifact;
  } catch (const heat::ProvenanceError& e) {
    std::cerr << "provenance error: " << e.what() << "\n";
    return kExitArtifact;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitArtifact;
  }
  return kExitOk;
}
