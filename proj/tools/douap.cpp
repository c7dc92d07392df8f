#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "douap/config.hpp"
#include "douap/dataset_io.hpp"
#include "douap/error.hpp"
#include "douap/eval.hpp"
#include "douap/uap_io.hpp"

using namespace douap;
namespace fs = std::filesystem;

namespace {

struct AttackFlags {
  std::string eps_v = "12/255";
  double alpha = 1.0;
  double beta = 0.1;
  std::size_t epochs = 2;
  std::size_t batch = 64;
  std::string aug = "brightness";
  double brightness_lo = 0.0;
  double brightness_hi = 0.05;
  std::uint64_t seed = 0;
  std::string method = "do-uap";

  CLI::Option* o_eps = nullptr;
  CLI::Option* o_alpha = nullptr;
  CLI::Option* o_beta = nullptr;
  CLI::Option* o_epochs = nullptr;
  CLI::Option* o_batch = nullptr;
  CLI::Option* o_aug = nullptr;
  CLI::Option* o_lo = nullptr;
  CLI::Option* o_hi = nullptr;
  CLI::Option* o_seed = nullptr;

  void add(CLI::App* cmd) {
    o_eps = cmd->add_option("--eps-v", eps_v, "l-inf image budget (number or fraction)")->capture_default_str();
    o_alpha = cmd->add_option("--alpha", alpha, "unimodal loss weight")->capture_default_str();
    o_beta = cmd->add_option("--beta", beta, "step as a fraction of eps-v")->capture_default_str();
    o_epochs = cmd->add_option("--epochs", epochs, "attack epochs")->capture_default_str();
    o_batch = cmd->add_option("--batch", batch, "batch size")->capture_default_str();
    o_aug = cmd->add_option("--aug", aug, "none|brightness|flip|noise|crop|compression")->capture_default_str();
    o_lo = cmd->add_option("--brightness-lo", brightness_lo, "brightness shift lower bound")->capture_default_str();
    o_hi = cmd->add_option("--brightness-hi", brightness_hi, "brightness shift upper bound")->capture_default_str();
    o_seed = cmd->add_option("--seed", seed, "attack seed")->capture_default_str();
  }

  // Explicit flags win over the config file.
  void apply(AttackConfig& c) const {
    if (o_eps->count()) c.eps_v = parse_number(eps_v);
    if (o_alpha->count()) c.alpha = alpha;
    if (o_beta->count()) c.beta = beta;
    if (o_epochs->count()) c.epochs = epochs;
    if (o_batch->count()) c.batch = batch;
    if (o_aug->count()) c.aug.kind = parse_aug_kind(aug);
    if (o_lo->count()) c.aug.brightness_lo = brightness_lo;
    if (o_hi->count()) c.aug.brightness_hi = brightness_hi;
    if (o_seed->count()) c.seed = seed;
    c.validate();
  }

  static double lo_or(double v) { return v; }
};

RunConfig config_or_default(const std::string& path) {
  if (path.empty()) return RunConfig{};
  return load_config(path);
}

AttackMethod parse_method(const std::string& m) {
  if (m == "do-uap") return AttackMethod::kDoUap;
  if (m == "generator") return AttackMethod::kGenerator;
  throw Error(ErrorCode::kInvalidArgument, "--method", fmt::format("'{}' is not do-uap or generator", m));
}

void require_dir_for(const std::string& out) {
  const fs::path parent = fs::absolute(out).parent_path();
  if (!fs::is_directory(parent)) {
    throw Error(ErrorCode::kIo, out, fmt::format("directory {} does not exist", parent.string()));
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Direct-optimization universal adversarial perturbations on a toy dual encoder"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  std::string config_path, data_path, model_path, uap_path, out_path;
  std::vector<std::string> inputs;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic image-caption dataset");
  gen->add_option("--config", config_path, "config file ([data] section)");
  gen->add_option("--out", out_path, "dataset file")->required();

  auto* train_cmd = app.add_subcommand("train", "Train the dual encoder");
  train_cmd->add_option("--config", config_path, "config file ([train] section)");
  train_cmd->add_option("--data", data_path, "dataset file")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", out_path, "checkpoint file")->required();

  AttackFlags attack_flags;
  auto* attack = app.add_subcommand("attack", "Craft a universal image + token perturbation");
  attack->add_option("--config", config_path, "config file ([attack] section)");
  attack->add_option("--data", data_path, "dataset file")->required()->check(CLI::ExistingFile);
  attack->add_option("--model", model_path, "checkpoint file")->required()->check(CLI::ExistingFile);
  attack->add_option("--out", out_path, "UAP artifact (JSON)")->required();
  attack->add_option("--method", attack_flags.method, "do-uap|generator")->capture_default_str();
  attack_flags.add(attack);

  auto* eval_cmd = app.add_subcommand("eval", "Retrieval and attack-success report for a UAP");
  eval_cmd->add_option("--config", config_path, "config file ([eval] section)");
  eval_cmd->add_option("--data", data_path, "dataset file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--model", model_path, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--uap", uap_path, "UAP artifact")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--out", out_path, "report file (JSON)")->required();

  std::string param, values, seeds;
  AttackFlags ablate_flags;
  auto* ablate = app.add_subcommand("ablate", "Sweep one attack parameter over values x seeds");
  ablate->add_option("--config", config_path, "config file ([data] [train] [attack] [sweep])");
  ablate->add_option("--data", data_path, "dataset file (default: generate from [data])")->check(CLI::ExistingFile);
  ablate->add_option("--model", model_path, "checkpoint (default: train from [train])")->check(CLI::ExistingFile);
  ablate->add_option("--param", param, "alpha|beta|eps_v|aug (default: [sweep] param, else alpha)");
  ablate->add_option("--values", values, "comma-separated values (default: 0,0.1,1,10)");
  ablate->add_option("--seeds", seeds, "comma-separated seeds (default: 1,2,3,4,5)");
  ablate->add_option("--method", ablate_flags.method, "do-uap|generator")->capture_default_str();
  ablate->add_option("--out", out_path, "sweep CSV")->required();
  ablate_flags.add(ablate);

  auto* report = app.add_subcommand("report", "Aggregate report JSONs and sweep CSVs into one table");
  report->add_option("--inputs", inputs, "report or sweep files")->required()->check(CLI::ExistingFile);
  report->add_option("--out", out_path, "aggregated CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: usage: %s\n", e.what());
    return 2;
  }

  try {
    if (*gen) {
      const RunConfig cfg = config_or_default(config_path);
      require_dir_for(out_path);
      const Dataset ds = generate_dataset(cfg.data.seed, cfg.data.n_train, cfg.data.n_test);
      save_dataset(ds, out_path);
      fmt::print("wrote {} ({} train, {} test pairs)\n", out_path, ds.train.size(), ds.test.size());
    } else if (*train_cmd) {
      const RunConfig cfg = config_or_default(config_path);
      const Dataset ds = load_dataset(data_path);
      require_dir_for(out_path);
      const TrainResult res = train(DualEncoderParams::init(cfg.train.seed), ds.train, cfg.train);
      const RecallRates r1 = recall_at_k(res.params, ds.test, nullptr, 1);
      save_checkpoint(res.params, out_path);
      fmt::print("wrote {} (final loss {:.4f}, TR@1 {:.3f}, IR@1 {:.3f})\n", out_path, res.epoch_loss.back(), r1.tr,
                 r1.ir);
    } else if (*attack) {
      RunConfig cfg = config_or_default(config_path);
      attack_flags.apply(cfg.attack);
      const AttackMethod method = parse_method(attack_flags.method);
      const Dataset ds = load_dataset(data_path);
      const DualEncoderParams params = load_checkpoint(model_path);
      require_dir_for(out_path);
      const AttackResult res = method == AttackMethod::kDoUap ? do_uap(params, ds.train, cfg.attack)
                                                              : generator_baseline(params, ds.train, cfg.attack);
      save_uap(to_artifact(res), out_path);
      fmt::print("wrote {} ({} iterations, {:.2f}s, token {})\n", out_path, res.iterations, res.wallclock_seconds,
                 *res.uap.delta_t_token);
    } else if (*eval_cmd) {
      const RunConfig cfg = config_or_default(config_path);
      const Dataset ds = load_dataset(data_path);
      const DualEncoderParams params = load_checkpoint(model_path);
      const UapArtifact artifact = load_uap(uap_path);
      require_dir_for(out_path);
      const RetrievalReport rep = evaluate(params, ds, artifact, cfg.eval);
      write_file(out_path, serialize_report(rep));
      fmt::print("wrote {} (ASR@1 TR {} IR {})\n", out_path, rep.asr[0].tr ? fmt::format("{:.3f}", *rep.asr[0].tr) : "null",
                 rep.asr[0].ir ? fmt::format("{:.3f}", *rep.asr[0].ir) : "null");
    } else if (*ablate) {
      RunConfig cfg = config_or_default(config_path);
      ablate_flags.apply(cfg.attack);
      if (!param.empty()) cfg.sweep.param = parse_sweep_param(param);
      if (!values.empty()) cfg.sweep.values = split_list(values);
      if (!seeds.empty()) {
        cfg.sweep.seeds.clear();
        for (const std::string& s : split_list(seeds)) cfg.sweep.seeds.push_back(parse_count(s));
      }
      cfg.sweep.validate();
      const AttackMethod method = parse_method(ablate_flags.method);
      require_dir_for(out_path);
      const Dataset ds = data_path.empty() ? generate_dataset(cfg.data.seed, cfg.data.n_train, cfg.data.n_test)
                                           : load_dataset(data_path);
      const DualEncoderParams params = model_path.empty()
                                           ? train(DualEncoderParams::init(cfg.train.seed), ds.train, cfg.train).params
                                           : load_checkpoint(model_path);
      const SweepTable table = run_sweep(params, ds, cfg.sweep, cfg.attack, method);
      write_file(out_path, table.to_csv());
      fmt::print("wrote {} ({} runs)\n", out_path, table.rows.size());
    } else if (*report) {
      std::vector<NamedInput> named;
      for (const std::string& path : inputs) named.push_back({path, read_file(path)});
      require_dir_for(out_path);
      write_file(out_path, aggregate_table(named));
      fmt::print("wrote {} ({} inputs)\n", out_path, inputs.size());
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: internal: %s\n", e.what());
    return 1;
  }
  return 0;
}
