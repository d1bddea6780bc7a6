// Experiment runner CLI: train / sweep / eval / synth-gen.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "upet/checkpoint.hpp"
#include "upet/runner.hpp"

namespace {

using upet::Json;

std::string default_out_dir() {
  const char* env = std::getenv("UPET_OUT_DIR");
  return env != nullptr ? env : "runs";
}

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir = default_out_dir();
  std::string tag;
};

Json resolve_config(const CommonOpts& o) {
  Json cfg = o.config_path.empty() ? upet::default_config() : upet::load_config(o.config_path);
  for (const std::string& ov : o.overrides) {
    upet::apply_override(cfg, ov);
  }
  if (!o.tag.empty()) {
    cfg["run"]["tag"] = o.tag;
  }
  return cfg;
}

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("-c,--config", o.config_path, "Config file (JSON); a manifest works too");
  cmd->add_option("-s,--set", o.overrides, "Override, e.g. --set loss.tau=5");
  cmd->add_option("-o,--out", o.out_dir, "Output directory (default $UPET_OUT_DIR or ./runs)");
  cmd->add_option("--tag", o.tag, "Run tag recorded in the config");
}

void add_ablation_flags(CLI::App* cmd, CommonOpts& o) {
  cmd->add_flag_callback("--no-selection",
                         [&o] { o.overrides.push_back("selftrain.no_selection=true"); },
                         "Take every pseudo-labeled example (selection off)");
  cmd->add_flag_callback("--no-certainty",
                         [&o] { o.overrides.push_back("uncertainty.alpha=1.0"); },
                         "Weight by confidence only (alpha = 1)");
  cmd->add_flag_callback("--no-confidence",
                         [&o] { o.overrides.push_back("uncertainty.alpha=0.0"); },
                         "Weight by certainty only (alpha = 0)");
  cmd->add_flag_callback("--no-contrastive",
                         [&o] { o.overrides.push_back("loss.lambda=0.0"); },
                         "Disable the contrastive regularizer (lambda = 0)");
}

int fail(const std::exception& e) {
  Json err;
  err["error"] = e.what();
  std::cerr << err.dump() << "\n";
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Uncertainty-aware parameter-efficient self-training experiments"};
  app.require_subcommand(1);

  CommonOpts train_opts;
  std::string train_loss, train_seeds;
  long long train_iterations = -1;
  auto* train = app.add_subcommand("train", "Run the self-training experiment");
  add_common(train, train_opts);
  add_ablation_flags(train, train_opts);
  train->add_option("--loss", train_loss, "Classification loss: ce or phce");
  train->add_option("--seeds", train_seeds, "Comma-separated seed list, e.g. 12,21,42,87,100");
  train->add_option("--iterations", train_iterations, "Self-training iterations");

  CommonOpts sweep_opts;
  std::string grid_inline, grid_file;
  auto* sweep = app.add_subcommand("sweep", "Grid sweep over config keys");
  add_common(sweep, sweep_opts);
  sweep->add_option("--grid", grid_inline, "Inline grid JSON, e.g. {\"uncertainty.alpha\":[0,0.4]}");
  sweep->add_option("--grid-file", grid_file, "Grid JSON file");

  CommonOpts eval_opts;
  std::string eval_checkpoint;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the configured test set");
  add_common(eval, eval_opts);
  eval->add_option("--checkpoint", eval_checkpoint, "Checkpoint file")->required();

  std::string synth_out = default_out_dir();
  std::size_t synth_classes = 4, synth_per_class = 500, synth_dim = 16;
  double synth_sep = 3.0, synth_noise = 0.0;
  std::uint64_t synth_seed = 42;
  auto* synthgen = app.add_subcommand("synth-gen", "Write a synthetic benchmark dataset");
  synthgen->add_option("-o,--out", synth_out, "Output directory");
  synthgen->add_option("--classes", synth_classes);
  synthgen->add_option("--per-class", synth_per_class);
  synthgen->add_option("--dim", synth_dim);
  synthgen->add_option("--sep", synth_sep);
  synthgen->add_option("--noise-rate", synth_noise);
  synthgen->add_option("--seed", synth_seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      if (!train_loss.empty()) {
        train_opts.overrides.push_back("loss.kind=\"" + train_loss + "\"");
      }
      if (train_iterations >= 0) {
        train_opts.overrides.push_back("selftrain.iterations=" +
                                       std::to_string(train_iterations));
      }
      if (!train_seeds.empty()) {
        train_opts.overrides.push_back("run.seeds=[" + train_seeds + "]");
      }
      const Json cfg = resolve_config(train_opts);
      const upet::ExperimentSummary s = upet::run_experiment(cfg, train_opts.out_dir);
      Json out;
      out["mean_student_acc"] = s.mean_student_acc;
      out["std_student_acc"] = s.std_student_acc;
      out["mean_macro_f1"] = s.mean_macro_f1;
      out["mean_teacher_acc0"] = s.mean_teacher_acc0;
      out["trainable_params"] = s.trainable_params;
      out["out_dir"] = train_opts.out_dir;
      std::cout << out.dump(2) << "\n";
    } else if (*sweep) {
      Json grid;
      if (!grid_file.empty()) {
        std::ifstream in(grid_file);
        if (!in) {
          throw upet::IoError("sweep: cannot open " + grid_file);
        }
        in >> grid;
      } else if (!grid_inline.empty()) {
        grid = Json::parse(grid_inline);
      } else {
        throw upet::ConfigError("sweep: provide --grid or --grid-file");
      }
      upet::run_sweep(resolve_config(sweep_opts), grid, sweep_opts.out_dir);
      std::cout << "{\"sweep_csv\":\"" << sweep_opts.out_dir << "/sweep.csv\"}\n";
    } else if (*eval) {
      const Json cfg = resolve_config(eval_opts);
      const upet::Checkpoint ck = upet::load_checkpoint(eval_checkpoint);
      // evaluate against the test portion of the configured dataset
      const std::uint64_t seed = cfg.at("run").at("seeds").at(0).get<std::uint64_t>();
      const upet::DataBundle data = upet::build_dataset(cfg, seed);
      const upet::EvalMetrics m = upet::evaluate(ck.params, ck.pel, data.test);
      Json out;
      out["accuracy"] = m.accuracy;
      out["macro_f1"] = m.macro_f1;
      std::cout << out.dump(2) << "\n";
    } else if (*synthgen) {
      upet::SynthSpec spec;
      spec.classes = synth_classes;
      spec.per_class = synth_per_class;
      spec.dim = synth_dim;
      spec.sep = synth_sep;
      spec.noise_rate = synth_noise;
      spec.seed = synth_seed;
      const upet::SynthData data = upet::synth(spec);
      std::filesystem::create_directories(synth_out);
      auto dump = [](const std::string& path, const std::vector<upet::Example>& rows) {
        std::ofstream out(path);
        if (!out) {
          throw upet::IoError("synth-gen: cannot write " + path);
        }
        for (const upet::Example& e : rows) {
          Json j;
          j["features"] = e.features;
          if (e.gold_label) {
            j["label"] = *e.gold_label;
          }
          out << j.dump() << "\n";
        }
      };
      dump(synth_out + "/train.jsonl", data.train);
      dump(synth_out + "/test.jsonl", data.test);
      Json spec_json;
      spec_json["classes"] = spec.classes;
      spec_json["per_class"] = spec.per_class;
      spec_json["dim"] = spec.dim;
      spec_json["sep"] = spec.sep;
      spec_json["noise_rate"] = spec.noise_rate;
      spec_json["seed"] = spec.seed;
      std::ofstream sj(synth_out + "/synth_spec.json");
      sj << spec_json.dump(2) << "\n";
      std::cout << "{\"out_dir\":\"" << synth_out << "\"}\n";
    }
  } catch (const std::exception& e) {
    return fail(e);
  }
  return 0;
}
