#include "upet/runner.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "upet/checkpoint.hpp"

namespace upet {

namespace fs = std::filesystem;

Json default_config() {
  Json cfg;
  cfg["data"] = {
      {"source", "synthetic"},  // synthetic | jsonl | csv | features
      {"path", ""},
      {"test_path", ""},
      {"classes", 4},
      {"labels", Json::array()},
      {"feature_dim", 4096},
      {"n_labeled_per_class", 16},
      {"synth",
       {{"classes", 4}, {"per_class", 645}, {"dim", 16}, {"sep", 3.0}, {"noise_rate", 0.0}}},
  };
  cfg["model"] = {
      {"variant", "full"},     {"paradigm", "head"},     {"adapter_dim", 8},
      {"prefix_len", 4},       {"pseudo_tokens", 4},     {"hidden_dim", 64},
      {"dropout_rate", 0.1},   {"verbalizer_temp", 1.0},
  };
  cfg["uncertainty"] = {{"mc_samples", 10}, {"alpha", 0.4}, {"mc_rate", 0.1}};
  cfg["loss"] = {{"kind", "phce"},          {"tau", 10.0},           {"lambda", 0.1},
                 {"negatives", 4},          {"g_temperature", 1.0},  {"contrastive_form", "neglog"}};
  cfg["selftrain"] = {
      {"iterations", 5},       {"teacher_epochs", 100}, {"student_epochs", 100},
      {"select_fraction", 0.5},{"select_count", 0},     {"subset_size", 0},
      {"lr", 0.05},            {"weight_decay", 0.0},   {"batch_size", 32},
      {"no_selection", false}, {"selection_mode", "weighted"},
      {"select_sharpness", 8.0},
      {"early_stop", true},    {"workers", 1},          {"pseudo_noise_rate", 0.0},
  };
  cfg["run"] = {{"seeds", Json::array({12, 21, 42, 87, 100})},
                {"tag", "default"},
                {"write_checkpoint", true}};
  return cfg;
}

namespace {

void merge_into(Json& base, const Json& patch, const std::string& where) {
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    if (!base.contains(it.key())) {
      throw ConfigError("config: unknown key '" + where + it.key() + "'");
    }
    if (base[it.key()].is_object() && it.value().is_object()) {
      merge_into(base[it.key()], it.value(), where + it.key() + ".");
    } else {
      base[it.key()] = it.value();
    }
  }
}

std::string iso_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / double(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / double(v.size()));
}

std::string num(double x) { return Json(x).dump(); }

}  // namespace

Json load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("config: cannot open " + path);
  }
  Json file;
  try {
    in >> file;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("config: " + path + ": " + e.what());
  }
  if (file.contains("config") && file.contains("revision")) {
    file = file["config"];  // manifest re-run
  }
  Json cfg = default_config();
  merge_into(cfg, file, "");
  return cfg;
}

void apply_override_value(Json& cfg, const std::string& dotted_key, const Json& value) {
  Json* node = &cfg;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = dotted_key.find('.', start);
    const std::string key = dotted_key.substr(start, dot - start);
    if (!node->contains(key)) {
      throw ConfigError("config: unknown key '" + dotted_key + "'");
    }
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

void apply_override(Json& cfg, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("config: override must look like section.key=value, got '" + assignment +
                      "'");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(raw);
  } catch (const nlohmann::json::exception&) {
    value = raw;  // plain string
  }
  apply_override_value(cfg, key, value);
}

PELConfig pel_config_from_json(const Json& cfg) {
  const Json& m = cfg.at("model");
  PELConfig pel;
  pel.variant = variant_from_name(m.at("variant").get<std::string>());
  pel.paradigm = paradigm_from_name(m.at("paradigm").get<std::string>());
  pel.adapter_dim = m.at("adapter_dim").get<std::size_t>();
  pel.prefix_len = m.at("prefix_len").get<std::size_t>();
  pel.pseudo_token_count = m.at("pseudo_tokens").get<std::size_t>();
  pel.dropout_rate = m.at("dropout_rate").get<double>();
  pel.verbalizer_temp = m.at("verbalizer_temp").get<double>();
  return pel;
}

LossConfig loss_config_from_json(const Json& cfg) {
  const Json& l = cfg.at("loss");
  LossConfig loss;
  const std::string kind = l.at("kind").get<std::string>();
  if (kind == "ce") {
    loss.kind = LossKind::CE;
  } else if (kind == "phce") {
    loss.kind = LossKind::PHCE;
  } else {
    throw ConfigError("config: loss.kind must be ce or phce");
  }
  loss.tau = l.at("tau").get<double>();
  loss.lambda = l.at("lambda").get<double>();
  loss.negatives_per_anchor = l.at("negatives").get<std::size_t>();
  loss.g_temperature = l.at("g_temperature").get<double>();
  const std::string form = l.at("contrastive_form").get<std::string>();
  if (form == "neglog") {
    loss.contrastive_form = ContrastiveForm::NegLog;
  } else if (form == "literal") {
    loss.contrastive_form = ContrastiveForm::LiteralPaper;
  } else {
    throw ConfigError("config: loss.contrastive_form must be neglog or literal");
  }
  return loss;
}

SelfTrainConfig selftrain_config_from_json(const Json& cfg, std::uint64_t seed) {
  const Json& s = cfg.at("selftrain");
  const Json& u = cfg.at("uncertainty");
  SelfTrainConfig st;
  st.iterations = s.at("iterations").get<std::size_t>();
  st.teacher_epochs = s.at("teacher_epochs").get<std::size_t>();
  st.student_epochs = s.at("student_epochs").get<std::size_t>();
  st.alpha = u.at("alpha").get<double>();
  st.mc_samples = u.at("mc_samples").get<std::size_t>();
  st.mc_rate = u.at("mc_rate").get<double>();
  st.loss = loss_config_from_json(cfg);
  st.pel = pel_config_from_json(cfg);
  st.hidden_dim = cfg.at("model").at("hidden_dim").get<std::size_t>();
  st.select_fraction = s.at("select_fraction").get<double>();
  st.select_count = s.at("select_count").get<std::size_t>();
  st.subset_size = s.at("subset_size").get<std::size_t>();
  st.lr = s.at("lr").get<double>();
  st.weight_decay = s.at("weight_decay").get<double>();
  st.batch_size = s.at("batch_size").get<std::size_t>();
  st.seed = seed;
  st.no_selection = s.at("no_selection").get<bool>();
  const std::string mode = s.at("selection_mode").get<std::string>();
  if (mode == "weighted") {
    st.selection_mode = SelectionMode::Weighted;
  } else if (mode == "random") {
    st.selection_mode = SelectionMode::Random;
  } else {
    throw ConfigError("config: selftrain.selection_mode must be weighted or random");
  }
  st.select_sharpness = s.at("select_sharpness").get<double>();
  st.early_stop = s.at("early_stop").get<bool>();
  st.workers = s.at("workers").get<std::size_t>();
  st.pseudo_noise_rate = s.at("pseudo_noise_rate").get<double>();
  return st;
}

DataBundle build_dataset(const Json& cfg, std::uint64_t seed) {
  const Json& d = cfg.at("data");
  const std::string source = d.at("source").get<std::string>();
  const std::size_t n_labeled = d.at("n_labeled_per_class").get<std::size_t>();
  DataBundle b;
  if (source == "synthetic") {
    SynthSpec spec;
    const Json& sj = d.at("synth");
    spec.classes = sj.at("classes").get<std::size_t>();
    spec.per_class = sj.at("per_class").get<std::size_t>();
    spec.dim = sj.at("dim").get<std::size_t>();
    spec.sep = sj.at("sep").get<double>();
    spec.noise_rate = sj.at("noise_rate").get<double>();
    spec.seed = seed;
    SynthData syn = synth(spec);
    b.spec.num_classes = spec.classes;
    b.spec.feature_dim = 2;  // unused for synthetic (features are direct)
    auto [labeled, rest] = few_shot_split(syn.train, n_labeled, spec.classes, seed);
    b.labeled = std::move(labeled);
    b.unlabeled = std::move(rest);
    b.test = std::move(syn.test);
    return b;
  }
  b.spec.num_classes = d.at("classes").get<std::size_t>();
  b.spec.feature_dim = d.at("feature_dim").get<std::size_t>();
  b.spec.label_names = d.at("labels").get<std::vector<std::string>>();
  const std::string path = d.at("path").get<std::string>();
  const std::string test_path = d.at("test_path").get<std::string>();
  std::vector<Example> train, test;
  if (source == "jsonl") {
    train = load_jsonl(path, b.spec);
    test = load_jsonl(test_path, b.spec);
  } else if (source == "csv") {
    train = load_csv(path, b.spec);
    test = load_csv(test_path, b.spec);
  } else if (source == "features") {
    train = load_features_jsonl(path, b.spec);
    test = load_features_jsonl(test_path, b.spec);
  } else {
    throw ConfigError("config: data.source must be synthetic, jsonl, csv or features");
  }
  std::vector<Example> labeled_pool, unlabeled;
  for (Example& e : train) {
    (e.gold_label ? labeled_pool : unlabeled).push_back(std::move(e));
  }
  auto [labeled, rest] = few_shot_split(labeled_pool, n_labeled, b.spec.num_classes, seed);
  b.labeled = std::move(labeled);
  for (Example& e : rest) {
    unlabeled.push_back(std::move(e));
  }
  b.unlabeled = std::move(unlabeled);
  b.test = std::move(test);
  return b;
}

std::string metrics_line(const IterationMetrics& m) {
  Json j;
  j["iteration"] = m.iteration;
  j["teacher_acc"] = m.teacher_acc;
  j["student_acc"] = m.student_acc;
  j["macro_f1"] = m.macro_f1;
  j["n_selected"] = m.n_selected;
  j["mean_s_cf"] = m.mean_s_cf;
  j["mean_s_ct"] = m.mean_s_ct;
  j["mean_bald"] = m.mean_bald;
  j["loss_final"] = m.loss_final;
  return j.dump();
}

ExperimentSummary run_experiment(const Json& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  const std::string started = iso_now();
  const std::vector<std::uint64_t> seeds =
      cfg.at("run").at("seeds").get<std::vector<std::uint64_t>>();
  if (seeds.empty()) {
    throw ConfigError("config: run.seeds must not be empty");
  }

  ExperimentSummary summary;
  RunResult last;
  PELConfig last_pel;
  for (const std::uint64_t seed : seeds) {
    const auto t0 = std::chrono::steady_clock::now();
    DataBundle data = build_dataset(cfg, seed);
    SelfTrainConfig st = selftrain_config_from_json(cfg, seed);
    RunResult res = run(st, data.labeled, data.unlabeled, data.test);
    const auto t1 = std::chrono::steady_clock::now();

    std::ofstream out(out_dir + "/metrics_seed" + std::to_string(seed) + ".jsonl");
    if (!out) {
      throw IoError("run: cannot write metrics for seed " + std::to_string(seed));
    }
    for (const IterationMetrics& m : res.iterations) {
      out << metrics_line(m) << "\n";
    }

    SeedResult sr;
    sr.seed = seed;
    sr.teacher_acc0 = res.initial_teacher_acc;
    if (!res.iterations.empty()) {
      const IterationMetrics& last_it = res.iterations.back();
      sr.final_student_acc = last_it.student_acc;
      sr.final_macro_f1 = last_it.macro_f1;
      sr.final_teacher_acc = last_it.teacher_acc;
      sr.iterations_run = res.iterations.size();
    } else {
      sr.final_student_acc = res.initial_teacher_acc;
      sr.final_macro_f1 = res.initial_teacher_f1;
      sr.final_teacher_acc = res.initial_teacher_acc;
    }
    sr.wall_ms =
        std::chrono::duration_cast<std::chrono::duration<double, std::milli>>(t1 - t0).count();
    summary.seeds.push_back(sr);
    last = std::move(res);
    last_pel = st.pel;
  }

  std::vector<double> accs, f1s, teach;
  for (const SeedResult& s : summary.seeds) {
    accs.push_back(s.final_student_acc);
    f1s.push_back(s.final_macro_f1);
    teach.push_back(s.teacher_acc0);
  }
  summary.mean_student_acc = mean_of(accs);
  summary.std_student_acc = std_of(accs);
  summary.mean_macro_f1 = mean_of(f1s);
  summary.std_macro_f1 = std_of(f1s);
  summary.mean_teacher_acc0 = mean_of(teach);
  summary.trainable_params =
      trainable_param_count(last_pel, last.teacher.feature_dim, last.teacher.hidden_dim,
                            last.teacher.num_classes);

  {
    std::ofstream csv(out_dir + "/summary.csv");
    csv << "seed,teacher_acc0,final_teacher_acc,final_student_acc,final_macro_f1,"
           "iterations_run,wall_ms\n";
    for (const SeedResult& s : summary.seeds) {
      csv << s.seed << "," << num(s.teacher_acc0) << "," << num(s.final_teacher_acc) << ","
          << num(s.final_student_acc) << "," << num(s.final_macro_f1) << "," << s.iterations_run
          << "," << num(s.wall_ms) << "\n";
    }
    csv << "mean," << num(summary.mean_teacher_acc0) << ",," << num(summary.mean_student_acc)
        << "," << num(summary.mean_macro_f1) << ",,\n";
    csv << "std,,," << num(summary.std_student_acc) << "," << num(summary.std_macro_f1)
        << ",,\n";
  }

  if (cfg.at("run").at("write_checkpoint").get<bool>()) {
    save_checkpoint(out_dir + "/checkpoint.json", last.teacher, last_pel);
  }

  Json manifest;
  manifest["revision"] = "upet 0.1.0";
  manifest["started"] = started;
  manifest["finished"] = iso_now();
  manifest["seeds"] = seeds;
  manifest["trainable_params"] = summary.trainable_params;
  manifest["config"] = cfg;
  std::ofstream mf(out_dir + "/manifest.json");
  mf << manifest.dump(2) << "\n";
  return summary;
}

void run_sweep(const Json& base_cfg, const Json& grid, const std::string& out_dir) {
  if (!grid.is_object() || grid.empty()) {
    throw ConfigError("sweep: grid must be a nonempty object of {key: [values]}");
  }
  std::vector<std::string> keys;
  std::vector<std::vector<Json>> values;
  for (auto it = grid.begin(); it != grid.end(); ++it) {
    if (!it.value().is_array() || it.value().empty()) {
      throw ConfigError("sweep: grid entry '" + it.key() + "' must be a nonempty array");
    }
    keys.push_back(it.key());
    values.emplace_back(it.value().begin(), it.value().end());
  }
  fs::create_directories(out_dir);
  std::ofstream csv(out_dir + "/sweep.csv");
  csv << "point,params,mean_student_acc,std_student_acc,mean_macro_f1,trainable_params,error\n";

  std::vector<std::size_t> idx(keys.size(), 0);
  std::size_t point = 0;
  while (true) {
    Json cfg = base_cfg;
    std::string desc;
    for (std::size_t k = 0; k < keys.size(); ++k) {
      apply_override_value(cfg, keys[k], values[k][idx[k]]);
      desc += (k ? ";" : "") + keys[k] + "=" + values[k][idx[k]].dump();
    }
    csv << point << ",\"" << desc << "\",";
    try {
      const ExperimentSummary s =
          run_experiment(cfg, out_dir + "/point_" + std::to_string(point));
      csv << num(s.mean_student_acc) << "," << num(s.std_student_acc) << ","
          << num(s.mean_macro_f1) << "," << s.trainable_params << ",\n";
    } catch (const std::exception& e) {
      std::string msg = e.what();
      for (char& c : msg) {
        if (c == '"' || c == ',' || c == '\n') c = ' ';
      }
      csv << ",,,," << msg << "\n";
    }
    ++point;
    std::size_t k = 0;
    for (; k < keys.size(); ++k) {
      if (++idx[k] < values[k].size()) {
        break;
      }
      idx[k] = 0;
    }
    if (k == keys.size()) {
      break;
    }
  }
}

}  // namespace upet
