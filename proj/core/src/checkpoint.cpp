#include "upet/checkpoint.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

namespace upet {

using nlohmann::json;

namespace {

constexpr int kVersion = 1;

json mat_to_json(const Mat& m) {
  return json{{"rows", m.rows}, {"cols", m.cols}, {"data", m.a}};
}

Mat mat_from_json(const json& j) {
  Mat m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
  m.a = j.at("data").get<Vec>();
  if (m.a.size() != m.rows * m.cols) {
    throw IoError("checkpoint: tensor size does not match its shape");
  }
  return m;
}

json pel_to_json(const PELConfig& pel) {
  return json{{"variant", variant_name(pel.variant)},
              {"paradigm", paradigm_name(pel.paradigm)},
              {"adapter_dim", pel.adapter_dim},
              {"prefix_len", pel.prefix_len},
              {"pseudo_token_count", pel.pseudo_token_count},
              {"dropout_rate", pel.dropout_rate},
              {"verbalizer_temp", pel.verbalizer_temp}};
}

PELConfig pel_from_json(const json& j) {
  PELConfig pel;
  pel.variant = variant_from_name(j.at("variant").get<std::string>());
  pel.paradigm = paradigm_from_name(j.at("paradigm").get<std::string>());
  pel.adapter_dim = j.at("adapter_dim").get<std::size_t>();
  pel.prefix_len = j.at("prefix_len").get<std::size_t>();
  pel.pseudo_token_count = j.at("pseudo_token_count").get<std::size_t>();
  pel.dropout_rate = j.at("dropout_rate").get<double>();
  pel.verbalizer_temp = j.at("verbalizer_temp").get<double>();
  return pel;
}

}  // namespace

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::Full: return "full";
    case Variant::Adapter: return "adapter";
    case Variant::Prefix: return "prefix";
    case Variant::Ptuning: return "ptuning";
  }
  return "full";
}

Variant variant_from_name(const std::string& s) {
  if (s == "full") return Variant::Full;
  if (s == "adapter") return Variant::Adapter;
  if (s == "prefix") return Variant::Prefix;
  if (s == "ptuning") return Variant::Ptuning;
  throw ConfigError("unknown PEL variant '" + s + "'");
}

std::string paradigm_name(Paradigm p) {
  return p == Paradigm::Head ? "head" : "prompt";
}

Paradigm paradigm_from_name(const std::string& s) {
  if (s == "head") return Paradigm::Head;
  if (s == "prompt") return Paradigm::Prompt;
  throw ConfigError("unknown paradigm '" + s + "'");
}

void save_checkpoint(const std::string& path, const ModelParams& p, const PELConfig& pel) {
  json j;
  j["format"] = "upet-checkpoint";
  j["version"] = kVersion;
  j["feature_dim"] = p.feature_dim;
  j["hidden_dim"] = p.hidden_dim;
  j["num_classes"] = p.num_classes;
  j["init_seed"] = p.init_seed;
  j["pel"] = pel_to_json(pel);
  json t;
  t["backbone_w"] = mat_to_json(p.backbone_w);
  t["backbone_b"] = p.backbone_b;
  t["adapter_down_w"] = mat_to_json(p.adapter_down_w);
  t["adapter_down_b"] = p.adapter_down_b;
  t["adapter_up_w"] = mat_to_json(p.adapter_up_w);
  t["adapter_up_b"] = p.adapter_up_b;
  t["prefix"] = mat_to_json(p.prefix);
  t["pseudo_tokens"] = mat_to_json(p.pseudo_tokens);
  t["cls_w"] = mat_to_json(p.cls_w);
  t["cls_b"] = p.cls_b;
  t["label_emb"] = mat_to_json(p.label_emb);
  j["tensors"] = std::move(t);

  std::ofstream out(path);
  if (!out) {
    throw IoError("checkpoint: cannot open " + path + " for writing");
  }
  out << j.dump() << "\n";
  if (!out) {
    throw IoError("checkpoint: write to " + path + " failed");
  }
}

Checkpoint load_checkpoint(const std::string& path, const std::optional<PELConfig>& expected) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("checkpoint: cannot open " + path);
  }
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError("checkpoint: corrupt file " + path + ": " + e.what());
  }
  if (!j.contains("format") || j["format"] != "upet-checkpoint") {
    throw IoError("checkpoint: " + path + " is not a checkpoint file");
  }
  if (j.at("version").get<int>() != kVersion) {
    throw IoError("checkpoint: unsupported version " + j.at("version").dump());
  }
  Checkpoint ck;
  try {
    ck.pel = pel_from_json(j.at("pel"));
    ck.params.feature_dim = j.at("feature_dim").get<std::size_t>();
    ck.params.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    ck.params.num_classes = j.at("num_classes").get<std::size_t>();
    ck.params.init_seed = j.at("init_seed").get<std::uint64_t>();
    const json& t = j.at("tensors");
    ck.params.backbone_w = mat_from_json(t.at("backbone_w"));
    ck.params.backbone_b = t.at("backbone_b").get<Vec>();
    ck.params.adapter_down_w = mat_from_json(t.at("adapter_down_w"));
    ck.params.adapter_down_b = t.at("adapter_down_b").get<Vec>();
    ck.params.adapter_up_w = mat_from_json(t.at("adapter_up_w"));
    ck.params.adapter_up_b = t.at("adapter_up_b").get<Vec>();
    ck.params.prefix = mat_from_json(t.at("prefix"));
    ck.params.pseudo_tokens = mat_from_json(t.at("pseudo_tokens"));
    ck.params.cls_w = mat_from_json(t.at("cls_w"));
    ck.params.cls_b = t.at("cls_b").get<Vec>();
    ck.params.label_emb = mat_from_json(t.at("label_emb"));
  } catch (const json::exception& e) {
    throw IoError("checkpoint: corrupt file " + path + ": " + e.what());
  }
  if (expected) {
    const json a = pel_to_json(*expected);
    const json b = pel_to_json(ck.pel);
    if (a != b) {
      throw ConfigError("checkpoint: stored PEL config does not match the requested one");
    }
  }
  return ck;
}

}  // namespace upet
