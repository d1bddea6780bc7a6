#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "upet/checkpoint.hpp"
#include "upet/runner.hpp"

using namespace upet;
namespace fs = std::filesystem;

namespace {

// Config small enough that a full experiment finishes in a few seconds.
Json tiny_config() {
  Json cfg = default_config();
  cfg["data"]["synth"] = {{"classes", 3}, {"per_class", 40}, {"dim", 6},
                          {"sep", 8.0},   {"noise_rate", 0.0}};
  cfg["data"]["n_labeled_per_class"] = 4;
  cfg["model"]["hidden_dim"] = 8;
  cfg["uncertainty"]["mc_samples"] = 4;
  cfg["selftrain"]["iterations"] = 2;
  cfg["selftrain"]["teacher_epochs"] = 20;
  cfg["selftrain"]["student_epochs"] = 20;
  cfg["selftrain"]["batch_size"] = 16;
  cfg["run"]["seeds"] = Json::array({42});
  return cfg;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("default config is self-consistent") {
  const Json cfg = default_config();
  CHECK_NOTHROW(selftrain_config_from_json(cfg, 42).validate());
  CHECK_NOTHROW(pel_config_from_json(cfg).validate(64));
  CHECK_NOTHROW(loss_config_from_json(cfg).validate());
  CHECK(cfg["uncertainty"]["alpha"] == 0.4);
  CHECK(cfg["uncertainty"]["mc_samples"] == 10);
  CHECK(cfg["run"]["seeds"] == Json::array({12, 21, 42, 87, 100}));
}

TEST_CASE("apply_override") {
  Json cfg = default_config();
  apply_override(cfg, "loss.tau=5.5");
  CHECK(cfg["loss"]["tau"] == 5.5);
  apply_override(cfg, "selftrain.no_selection=true");
  CHECK(cfg["selftrain"]["no_selection"] == true);
  apply_override(cfg, "loss.kind=ce");
  CHECK(cfg["loss"]["kind"] == "ce");
  apply_override(cfg, "run.seeds=[1,2,3]");
  CHECK(cfg["run"]["seeds"] == Json::array({1, 2, 3}));
  CHECK_THROWS_AS(apply_override(cfg, "nope.key=1"), ConfigError);
  CHECK_THROWS_AS(apply_override(cfg, "loss.unknown=1"), ConfigError);
  CHECK_THROWS_AS(apply_override(cfg, "loss.tau"), ConfigError);
}

TEST_CASE("load_config merges over defaults and rejects unknown keys") {
  TempDir dir("upet_cfg_test");
  {
    std::ofstream out(dir.path / "cfg.json");
    out << R"({"loss": {"tau": 3.0}, "selftrain": {"iterations": 2}})";
  }
  const Json cfg = load_config((dir.path / "cfg.json").string());
  CHECK(cfg["loss"]["tau"] == 3.0);
  CHECK(cfg["loss"]["lambda"] == 0.1);  // default retained
  CHECK(cfg["selftrain"]["iterations"] == 2);

  {
    std::ofstream out(dir.path / "bad.json");
    out << R"({"loss": {"taau": 3.0}})";
  }
  CHECK_THROWS_AS(load_config((dir.path / "bad.json").string()), ConfigError);
  {
    std::ofstream out(dir.path / "garbled.json");
    out << "{{{";
  }
  CHECK_THROWS_AS(load_config((dir.path / "garbled.json").string()), ParseError);
  CHECK_THROWS_AS(load_config((dir.path / "missing.json").string()), IoError);
}

TEST_CASE("metrics_line has a fixed byte layout") {
  IterationMetrics m;
  m.iteration = 1;
  m.teacher_acc = 0.5;
  m.student_acc = 0.75;
  m.macro_f1 = 0.25;
  m.n_selected = 10;
  m.mean_s_cf = 0.5;
  m.mean_s_ct = 1.0;
  m.mean_bald = 0.0;
  m.loss_final = 2.0;
  CHECK(metrics_line(m) ==
        "{\"iteration\":1,\"teacher_acc\":0.5,\"student_acc\":0.75,\"macro_f1\":0.25,"
        "\"n_selected\":10,\"mean_s_cf\":0.5,\"mean_s_ct\":1.0,\"mean_bald\":0.0,"
        "\"loss_final\":2.0}");
}

TEST_CASE("build_dataset synthetic split") {
  const Json cfg = tiny_config();
  const DataBundle b = build_dataset(cfg, 42);
  CHECK(b.labeled.size() == 3 * 4);
  CHECK(b.unlabeled.size() == 3 * 32 - 12);
  CHECK(b.test.size() == 3 * 8);
  // different seeds produce different data
  const DataBundle b2 = build_dataset(cfg, 7);
  CHECK(b.labeled[0].features != b2.labeled[0].features);
}

TEST_CASE("build_dataset from jsonl files") {
  TempDir dir("upet_jsonl_ds");
  {
    std::ofstream tr(dir.path / "train.jsonl");
    for (int i = 0; i < 30; ++i) {
      tr << "{\"text\": \"sample number " << i << " alpha\", \"label\": \""
         << (i % 2 ? "pos" : "neg") << "\"}\n";
    }
    for (int i = 0; i < 10; ++i) {
      tr << "{\"text\": \"unlabeled sample " << i << "\"}\n";
    }
    std::ofstream te(dir.path / "test.jsonl");
    for (int i = 0; i < 10; ++i) {
      te << "{\"text\": \"held out " << i << "\", \"label\": \"" << (i % 2 ? "pos" : "neg")
         << "\"}\n";
    }
  }
  Json cfg = default_config();
  cfg["data"]["source"] = "jsonl";
  cfg["data"]["path"] = (dir.path / "train.jsonl").string();
  cfg["data"]["test_path"] = (dir.path / "test.jsonl").string();
  cfg["data"]["classes"] = 2;
  cfg["data"]["labels"] = Json::array({"neg", "pos"});
  cfg["data"]["feature_dim"] = 64;
  cfg["data"]["n_labeled_per_class"] = 5;
  const DataBundle b = build_dataset(cfg, 42);
  CHECK(b.labeled.size() == 10);
  CHECK(b.unlabeled.size() == 30);  // 20 leftover labeled + 10 unlabeled
  CHECK(b.test.size() == 10);
}

TEST_CASE("run_experiment writes stable artifacts") {
  const Json cfg = tiny_config();
  TempDir a("upet_exp_a"), b("upet_exp_b");
  const ExperimentSummary sa = run_experiment(cfg, a.str());
  const ExperimentSummary sb = run_experiment(cfg, b.str());

  CHECK(fs::exists(a.path / "manifest.json"));
  CHECK(fs::exists(a.path / "summary.csv"));
  CHECK(fs::exists(a.path / "checkpoint.json"));
  CHECK(fs::exists(a.path / "metrics_seed42.jsonl"));

  // metrics are byte-identical across re-runs
  CHECK(slurp(a.path / "metrics_seed42.jsonl") == slurp(b.path / "metrics_seed42.jsonl"));
  CHECK(slurp(a.path / "checkpoint.json") == slurp(b.path / "checkpoint.json"));
  CHECK(sa.mean_student_acc == sb.mean_student_acc);
  CHECK(sa.trainable_params == sb.trainable_params);

  // manifest can be re-run as a config
  const Json re = load_config((a.path / "manifest.json").string());
  CHECK(re == cfg);

  // checkpoint round-trips through eval
  const Checkpoint ck = load_checkpoint((a.path / "checkpoint.json").string());
  const DataBundle data = build_dataset(cfg, 42);
  const EvalMetrics m = evaluate(ck.params, ck.pel, data.test);
  CHECK(m.accuracy == doctest::Approx(sa.seeds[0].final_student_acc).epsilon(1e-12));

  // summary.csv carries wall-clock timing, metrics do not
  CHECK(slurp(a.path / "summary.csv").find("wall_ms") != std::string::npos);
  CHECK(slurp(a.path / "metrics_seed42.jsonl").find("wall_ms") == std::string::npos);
}

TEST_CASE("run_sweep covers the grid and survives bad points") {
  Json cfg = tiny_config();
  cfg["selftrain"]["iterations"] = 1;
  cfg["selftrain"]["teacher_epochs"] = 10;
  cfg["selftrain"]["student_epochs"] = 10;
  TempDir dir("upet_sweep");
  Json grid;
  grid["loss.kind"] = Json::array({"ce", "phce"});
  grid["loss.tau"] = Json::array({5.0, -1.0});  // -1 is invalid, point must fail
  run_sweep(cfg, grid, dir.str());
  const std::string csv = slurp(dir.path / "sweep.csv");
  // 4 points + header
  std::size_t lines = 0;
  for (char c : csv) {
    if (c == '\n') ++lines;
  }
  CHECK(lines == 5);
  CHECK(csv.find("tau") != std::string::npos);
  CHECK(fs::exists(dir.path / "point_0" / "summary.csv"));
}

TEST_CASE("checkpoint round trip") {
  PELConfig pel;
  pel.variant = Variant::Adapter;
  pel.adapter_dim = 3;
  Rng rng(5);
  ModelParams p = init_model(pel, 6, 5, 3, rng);
  TempDir dir("upet_ckpt");
  const std::string path = (dir.path / "ck.json").string();
  save_checkpoint(path, p, pel);
  const Checkpoint ck = load_checkpoint(path);
  CHECK(ck.params.backbone_w == p.backbone_w);
  CHECK(ck.params.adapter_down_w == p.adapter_down_w);
  CHECK(ck.params.feature_dim == 6);
  CHECK(ck.params.num_classes == 3);
  CHECK(ck.pel.variant == Variant::Adapter);
  CHECK(ck.pel.adapter_dim == 3);

  // matching expectation passes, mismatch throws
  CHECK_NOTHROW(load_checkpoint(path, pel));
  PELConfig other = pel;
  other.variant = Variant::Prefix;
  CHECK_THROWS_AS(load_checkpoint(path, other), ConfigError);

  // corruption is detected
  {
    std::ofstream out(path, std::ios::trunc);
    out << "{\"format\": \"upet-checkpoint\"";
  }
  CHECK_THROWS_AS(load_checkpoint(path), IoError);
  CHECK_THROWS_AS(load_checkpoint((dir.path / "missing.json").string()), IoError);
}

TEST_CASE("variant and paradigm names round trip") {
  for (Variant v : {Variant::Full, Variant::Adapter, Variant::Prefix, Variant::Ptuning}) {
    CHECK(variant_from_name(variant_name(v)) == v);
  }
  for (Paradigm p : {Paradigm::Head, Paradigm::Prompt}) {
    CHECK(paradigm_from_name(paradigm_name(p)) == p);
  }
  CHECK_THROWS_AS(variant_from_name("lora"), ConfigError);
  CHECK_THROWS_AS(paradigm_from_name("nope"), ConfigError);
}
