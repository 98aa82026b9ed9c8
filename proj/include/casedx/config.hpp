#pragma once

// Run configuration shared by every CLI subcommand. One JSON file holds all
// sections; unknown keys are rejected and the resolved configuration is
// written next to each run's outputs.

#include <filesystem>
#include <fstream>
#include <string>

#include "casedx/trainer.hpp"

namespace casedx {

struct CorpusPaths {
  std::string manifest;        // JSONL manifest; voxel paths resolve against its directory
  std::string knowledge_base;  // JSONL knowledge base (pretrain-knowledge, KE training)
  std::string icd_map;         // optional disorder -> ICD map
};

struct ExplainConfig {
  std::vector<std::string> cases;  // empty: the first `count` test cases with an abnormal label
  std::string target;              // class id; empty: each case's first label
  int count = 4;
  int scan = 0;
  std::optional<int> slice;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string out = "run";
  CorpusPaths corpus;
  SyntheticConfig synthetic;
  ModelConfig model;
  TrainConfig train;
  TextEncoderConfig text_encoder;
  KnowledgeTrainConfig knowledge;
  FinetuneMode finetune_mode = FinetuneMode::multi_image;
  double fraction = 1.0;
  bool bootstrap_enabled = true;
  BootstrapConfig bootstrap;
  std::string split = "test";          // split scored by eval
  std::string checkpoint;              // model consumed by eval, finetune, zeroshot, explain
  std::string knowledge_checkpoint;    // text encoder written by pretrain-knowledge
  std::string mapping;                 // zero-shot mapping file
  std::string predictions;             // eval directory consumed by report
  ExplainConfig explain;

  // Seeds of every stochastic component follow the run seed.
  void propagate_seed() {
    train.seed = seed;
    knowledge.seed = seed;
    bootstrap.seed = seed;
  }

  void validate() const {
    train.validate();
    model.encoder.validate();
    if (!(fraction > 0.0 && fraction <= 1.0)) throw InvalidArgument("fraction must lie in (0, 1]");
    parse_split(split);
    if (text_encoder.embed_dim != model.encoder.embed_dim && model.knowledge)
      throw InvalidArgument("text_encoder.embed_dim must equal model.encoder.embed_dim when knowledge is on");
  }
};

inline json to_json(const RunConfig& c) {
  json explain{{"cases", c.explain.cases}, {"target", c.explain.target}, {"count", c.explain.count}, {"scan", c.explain.scan}};
  explain["slice"] = c.explain.slice ? json(*c.explain.slice) : json(nullptr);
  return {{"seed", c.seed},
          {"out", c.out},
          {"corpus", {{"manifest", c.corpus.manifest}, {"knowledge_base", c.corpus.knowledge_base}, {"icd_map", c.corpus.icd_map}}},
          {"synthetic", to_json(c.synthetic)},
          {"model", to_json(c.model)},
          {"train", to_json(c.train)},
          {"text_encoder", to_json(c.text_encoder)},
          {"knowledge", to_json(c.knowledge)},
          {"finetune", {{"mode", c.finetune_mode == FinetuneMode::single_image ? "single_image" : "multi_image"},
                        {"fraction", c.fraction}}},
          {"metrics", {{"bootstrap", c.bootstrap_enabled}, {"bootstrap_config", to_json(c.bootstrap)}, {"split", c.split}}},
          {"checkpoint", c.checkpoint},
          {"knowledge_checkpoint", c.knowledge_checkpoint},
          {"mapping", c.mapping},
          {"predictions", c.predictions},
          {"explain", explain}};
}

inline void read(StrictReader& r, RunConfig& c) {
  r.get("seed", c.seed)
      .get("out", c.out)
      .object("corpus",
              [&](StrictReader& s) {
                s.get("manifest", c.corpus.manifest).get("knowledge_base", c.corpus.knowledge_base).get("icd_map", c.corpus.icd_map);
              })
      .object("synthetic", [&](StrictReader& s) { read(s, c.synthetic); })
      .object("model", [&](StrictReader& s) { read(s, c.model); })
      .object("train", [&](StrictReader& s) { read(s, c.train); })
      .object("text_encoder", [&](StrictReader& s) { read(s, c.text_encoder); })
      .object("knowledge", [&](StrictReader& s) { read(s, c.knowledge); })
      .object("finetune",
              [&](StrictReader& s) { s.enumeration("mode", c.finetune_mode, parse_finetune_mode).get("fraction", c.fraction); })
      .object("metrics",
              [&](StrictReader& s) {
                s.get("bootstrap", c.bootstrap_enabled)
                    .object("bootstrap_config", [&](StrictReader& b) { read(b, c.bootstrap); })
                    .get("split", c.split);
              })
      .get("checkpoint", c.checkpoint)
      .get("knowledge_checkpoint", c.knowledge_checkpoint)
      .get("mapping", c.mapping)
      .get("predictions", c.predictions)
      .object("explain", [&](StrictReader& s) {
        s.get("cases", c.explain.cases).get("target", c.explain.target).get("count", c.explain.count).get("scan", c.explain.scan);
        if (s.raw().contains("slice") && !s.raw().at("slice").is_null()) c.explain.slice = s.raw().at("slice").get<int>();
        s.ignore("slice");
      });
}

inline RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  {
    StrictReader r(j, "");
    read(r, c);
  }
  c.propagate_seed();
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open config file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw InvalidArgument("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace casedx
