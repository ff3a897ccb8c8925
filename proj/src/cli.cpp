// SPDX-License-Identifier: Apache-2.0
#include "rdte/cli.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>

#include "CLI11.hpp"
#include "rdte/data.hpp"
#include "rdte/errors.hpp"
#include "rdte/gradcheck_suite.hpp"
#include "rdte/metrics.hpp"
#include "rdte/model.hpp"
#include "rdte/train.hpp"

namespace rdte {

namespace {

namespace fs = std::filesystem;

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw ConfigError("cannot write " + path.string());
  f << j.dump(2) << '\n';
  if (!f) throw ConfigError("write failed: " + path.string());
}

void print_report(std::ostream& out, const EvalReport& r) {
  for (const auto& c : r.per_class) {
    out << "class " << c.cls << ": ";
    if (!c.dsc) {
      out << "absent from ground truth\n";
      continue;
    }
    out << "DSC " << fixed(*c.dsc, 4) << "  HD95 " << fixed(*c.hd95, 2) << " px";
    if (c.hd95_sentinel_count) out << " (" << c.hd95_sentinel_count << " empty-prediction sentinels)";
    out << "  over " << c.samples << " samples\n";
  }
  out << "mean DSC " << fixed(r.mean_dsc, 4) << "  mean HD95 " << fixed(r.mean_hd95, 2) << " px  (" << r.samples
      << " samples)\n";
}

EvalReport eval_checkpoint(const fs::path& ckpt, const fs::path& data_dir, std::size_t batch) {
  LoadedCheckpoint loaded = load_checkpoint(ckpt);
  const Dataset data = read_dataset(data_dir);
  check_compatible(loaded.model.config(), data.manifest);
  return evaluate(loaded.model, data.samples, batch);
}

struct TrainOutcome {
  TrainResult result;
  int code = kExitOk;
};

TrainOutcome run_training(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const std::size_t every = std::max<std::size_t>(1, cfg.train.steps / 20);
  const auto t0 = std::chrono::steady_clock::now();
  TrainOutcome o;
  o.result = train(cfg, [&](std::size_t step, double loss) {
    if (step % every == 0 || step == 1 || step == cfg.train.steps) {
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      out << "step " << step << "/" << cfg.train.steps << "  loss " << fixed(loss, 5) << "  " << fixed(s, 1) << "s\n";
    }
  });
  if (o.result.diverged) {
    err << "training diverged: loss non-finite or above 1e4 at step " << o.result.steps_done + 1
        << "; checkpoint of the last sound parameters written to " << checkpoint_file(cfg.out).string() << "\n";
    o.code = kExitDiverged;
    return o;
  }
  out << "loss " << fixed(o.result.first_loss, 5) << " -> " << fixed(o.result.last_loss, 5) << "; wrote "
      << checkpoint_file(cfg.out).string() << " and " << loss_log_file(cfg.out).string() << "\n";
  return o;
}

int cmd_gen(const GenSpec& spec, const fs::path& dir, std::ostream& out) {
  spec.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw ConfigError("cannot create output directory " + dir.string());
  write_dataset(dir, spec, generate(spec));
  out << "wrote " << spec.count << " samples of " << spec.size << "x" << spec.size << " (" << spec.num_classes
      << " classes, seed " << spec.seed << ") to " << dir.string() << "\n";
  return kExitOk;
}

int cmd_train(const fs::path& config, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = RunConfig::load(config);
  fs::create_directories(cfg.out);
  write_json(cfg.out / "run_config.json", cfg.to_json());
  return run_training(cfg, out, err).code;
}

int cmd_eval(const fs::path& ckpt, const fs::path& data, const fs::path& report, std::size_t batch,
             std::ostream& out) {
  const EvalReport r = eval_checkpoint(ckpt, data, batch);
  write_json(report, r.to_json());
  print_report(out, r);
  return kExitOk;
}

int cmd_gradcheck(const std::string& scope, std::optional<double> tol, std::uint64_t seed, std::ostream& out) {
  if (tol && !(*tol > 0)) throw ConfigError("--tol must be positive");
  const auto cases = gradcheck_cases(scope, seed);
  char line[160];
  std::snprintf(line, sizeof line, "%-7s %-28s %-11s %-8s %-8s %-9s %s\n", "scope", "case", "max_rel_err", "checked",
                "excluded", "tol", "result");
  out << line;
  std::size_t failed = 0;
  const auto t0 = std::chrono::steady_clock::now();
  for (const auto& c : cases) {
    const double t = tol.value_or(c.tol);
    const GradcheckReport r = c.run(t, c.eps);
    failed += !r.pass;
    std::snprintf(line, sizeof line, "%-7s %-28s %-11s %-8zu %-8zu %-9s %s\n", c.scope.c_str(), c.name.c_str(),
                  sci(r.max_rel_err).c_str(), r.checked, r.excluded, sci(t).c_str(),
                  !r.valid ? "INVALID" : r.pass ? "PASS" : "FAIL");
    out << line;
  }
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out << cases.size() - failed << "/" << cases.size() << " passed in " << fixed(s, 1) << "s\n";
  return failed ? kExitCheckFailed : kExitOk;
}

int cmd_ablate(const std::string& variant, const fs::path& config, const std::optional<fs::path>& data,
               const std::optional<fs::path>& report, std::ostream& out, std::ostream& err) {
  RunConfig cfg = RunConfig::load(config);
  cfg.model.variant = parse_variant(variant);
  cfg.out = cfg.out / variant;
  fs::create_directories(cfg.out);
  write_json(cfg.out / "run_config.json", cfg.to_json());
  out << "variant " << variant << ": " << Model(cfg.model).parameter_count() << " parameters\n";
  const TrainOutcome o = run_training(cfg, out, err);
  if (o.code != kExitOk) return o.code;
  EvalReport r = eval_checkpoint(checkpoint_file(cfg.out), data.value_or(cfg.data_dir), 4);
  r.variant = variant;
  const fs::path where = report.value_or(cfg.out / "report.json");
  write_json(where, r.to_json());
  print_report(out, r);
  out << "report: " << where.string() << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Stair-convolution / HVDA / EulerFF segmentation network: data, training, evaluation, checks"};
  app.require_subcommand(1);

  GenSpec spec;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen", "Write a synthetic dataset");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--count", spec.count, "Number of samples")->capture_default_str();
  gen->add_option("--size", spec.size, "Image side, a multiple of 32")->capture_default_str();
  gen->add_option("--classes", spec.num_classes, "Classes including background")->capture_default_str();
  gen->add_option("--seed", spec.seed, "Generator seed")->capture_default_str();
  gen->add_option("--noise", spec.noise_sigma, "Gaussian noise sigma")->capture_default_str();

  std::string train_config;
  auto* tr = app.add_subcommand("train", "Train from a JSON run config");
  tr->add_option("--config", train_config, "Run config JSON")->required();

  std::string ckpt, eval_data, report;
  std::size_t batch = 4;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  ev->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  ev->add_option("--data", eval_data, "Dataset directory")->required();
  ev->add_option("--report", report, "Report JSON to write")->required();
  ev->add_option("--batch", batch, "Evaluation batch size")->capture_default_str()->check(CLI::PositiveNumber);

  std::string scope = "all";
  std::optional<double> tol;
  std::uint64_t gc_seed = 0;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gc->add_option("--scope", scope, "tensor, nn, stair, hvda, asbe, euler, model or all")->capture_default_str();
  gc->add_option("--tol", tol, "Relative tolerance for every case (default: each case's own)");
  gc->add_option("--seed", gc_seed, "Seed of the random instances")->capture_default_str();

  std::string variant, ab_config, ab_data, ab_report;
  auto* ab = app.add_subcommand("ablate", "Train and evaluate one model variant");
  ab->add_option("--variant", variant, "full, no_asbe, no_hvda or no_eulerff")
      ->required()
      ->check(CLI::IsMember({"full", "no_asbe", "no_hvda", "no_eulerff"}));
  ab->add_option("--config", ab_config, "Run config JSON (its out directory gets a per-variant subdirectory)")
      ->required();
  ab->add_option("--data", ab_data, "Evaluation dataset (default: the training data)");
  ab->add_option("--report", ab_report, "Report JSON to write (default: <out>/<variant>/report.json)");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(int(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    if (!app.get_subcommands().empty()) err << "run with " << app.get_subcommands()[0]->get_name() << " --help\n";
    else err << "run with --help\n";
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen(spec, gen_out, out);
    if (tr->parsed()) return cmd_train(train_config, out, err);
    if (ev->parsed()) return cmd_eval(ckpt, eval_data, report, batch, out);
    if (gc->parsed()) return cmd_gradcheck(scope, tol, gc_seed, out);
    if (ab->parsed())
      return cmd_ablate(variant, ab_config, ab_data.empty() ? std::nullopt : std::optional<fs::path>(ab_data),
                        ab_report.empty() ? std::nullopt : std::optional<fs::path>(ab_report), out, err);
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitCheckFailed;
  }
  return kExitUsage;
}

}  // namespace rdte
