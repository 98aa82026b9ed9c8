#pragma once

// Subcommand implementations behind the casedx executable. Each command
// takes a resolved RunConfig, writes its artifacts under cfg.out and
// snapshots the configuration there as config.json.

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <filesystem>
#include <iostream>
#include <ostream>
#include <string>
#include <vector>

#include "casedx/config.hpp"
#include "casedx/explain.hpp"
#include "casedx/report.hpp"

namespace casedx {

namespace fs = std::filesystem;

// Exclusive lock file inside an output directory, removed on destruction.
class OutputLock {
 public:
  explicit OutputLock(const fs::path& dir) : path_(dir / ".casedx.lock") {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
      if (errno == EEXIST) throw DataError("output directory " + dir.string() + " is locked by another run (" + path_.string() + ")");
      throw DataError("cannot create lock " + path_.string() + ": " + std::strerror(errno));
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] const auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
  }
  ~OutputLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  fs::path path_;
};

// Creates the output directory; an existing non-empty one is refused
// unless force is set.
inline void prepare_output(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw InvalidArgument("output path " + dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir) && !force)
      throw InvalidArgument("output directory " + dir.string() + " is not empty (use --force to overwrite)");
  }
  fs::create_directories(dir);
}

// Resolved configuration without the output path, which is implied by the
// snapshot's location.
inline void write_config_snapshot(const fs::path& dir, const RunConfig& cfg) {
  json j = to_json(cfg);
  j.erase("out");
  write_json(dir / "config.json", j);
}

struct CommandContext {
  bool force = false;
  std::ostream* log = &std::cerr;
};

class OutputSession {
 public:
  OutputSession(const RunConfig& cfg, const CommandContext& ctx) : dir_((prepare_output(cfg.out, ctx.force), cfg.out)), lock_(dir_) {
    write_config_snapshot(dir_, cfg);
  }
  const fs::path& dir() const noexcept { return dir_; }

 private:
  fs::path dir_;
  OutputLock lock_;
};

// ---------------------------------------------------------------- loading

inline Corpus load_run_corpus(const RunConfig& cfg) {
  if (cfg.corpus.manifest.empty()) throw InvalidArgument("corpus.manifest is not set");
  ManifestOptions opt;
  if (!cfg.corpus.icd_map.empty()) opt.icd_map = cfg.corpus.icd_map;
  return load_manifest(cfg.corpus.manifest, opt);
}

inline SplitAssignment run_split(const Corpus& corpus, const RunConfig& cfg) {
  if (auto s = manifest_split(corpus)) return *s;
  return split_corpus(corpus, cfg.seed, cfg.train.level);
}

inline std::map<std::string, std::string> run_display_names(const RunConfig& cfg) {
  if (cfg.corpus.knowledge_base.empty()) return {};
  return display_names(load_knowledge_base(cfg.corpus.knowledge_base));
}

struct LoadedTextEncoder {
  ParamStore<float> params;
  TextEncoder<float> encoder;
};

inline std::unique_ptr<LoadedTextEncoder> load_text_encoder(const fs::path& path) {
  const CheckpointFile ck = read_checkpoint(path);
  if (ck.meta.value("kind", "") != "text_encoder") throw DataError(path.string() + " does not hold a text encoder");
  TextEncoderConfig tc;
  {
    StrictReader r(ck.meta.at("text_encoder"), "text_encoder");
    read(r, tc);
  }
  auto out = std::make_unique<LoadedTextEncoder>();
  load_params(ck, out->params);
  Rng rng(0);
  const std::size_t before = out->params.size();
  out->encoder = TextEncoder<float>::build(out->params, tc, rng);
  if (out->params.size() != before) throw DataError(path.string() + " is missing text encoder parameters");
  return out;
}

inline Model<float> load_run_model(const RunConfig& cfg) {
  if (cfg.checkpoint.empty()) throw InvalidArgument("no model checkpoint given (set checkpoint or pass --checkpoint)");
  return load_model<float>(cfg.checkpoint);
}

inline PredictionSet make_prediction_set(const std::vector<std::vector<double>>& probs, const std::vector<const Case*>& cases,
                                         const LabelSpace& labels) {
  PredictionSet p;
  p.classes = labels.classes;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    CasePrediction cp;
    cp.case_id = cases[i]->id;
    cp.anatomy = cases[i]->anatomy;
    for (double y : labels.targets<double>(*cases[i])) cp.labels.push_back(static_cast<int>(y));
    cp.probs = probs[i];
    p.cases.push_back(std::move(cp));
  }
  return p;
}

inline void log_summary(std::ostream& os, const MetricsReport& rep) {
  for (const auto& s : rep.strata) {
    os << s.name << ": " << s.classes << " classes";
    for (const char* m : {"auc", "ap", "f1", "mcc", "acc"})
      if (auto it = s.macro.find(m); it != s.macro.end()) os << "  " << m << " " << detail::fmt(100.0 * it->second);
    os << '\n';
  }
  for (const auto& n : rep.notes) os << "note: " << n << '\n';
}

// Metrics, ROC series and per-case predictions for one evaluated split.
inline MetricsReport write_evaluation(const fs::path& dir, const Model<float>& model, const std::vector<const Case*>& cases,
                                      const RunConfig& cfg) {
  Preprocessor prep(model.config.encoder.geometry);
  const auto probs = predict(model, cases, prep);
  const MetricsReport rep =
      evaluate_predictions(probs, cases, model.labels, model.thresholds, cfg.bootstrap_enabled ? &cfg.bootstrap : nullptr);
  write_json(dir / "metrics.json", to_json(rep));
  write_json(dir / "roc.json", roc_series_json(rep));
  write_json(dir / "predictions.json", to_json(make_prediction_set(probs, cases, model.labels)));
  return rep;
}

// ---------------------------------------------------------------- commands

inline void cmd_generate(const RunConfig& cfg, const CommandContext& ctx) {
  OutputSession out(cfg, ctx);
  const SyntheticCorpus sc = generate_synthetic(cfg.synthetic, cfg.seed);
  write_synthetic(sc, out.dir());
  std::size_t counts[3] = {0, 0, 0};
  for (Stratum s : sc.corpus.disorders.category) ++counts[static_cast<int>(s)];
  *ctx.log << "generated " << sc.corpus.cases.size() << " cases, " << sc.corpus.disorders.size() << " classes (head "
           << counts[0] << ", medium " << counts[1] << ", tail " << counts[2] << ") in " << out.dir().string() << '\n';
}

inline void cmd_pretrain_knowledge(const RunConfig& cfg, const CommandContext& ctx) {
  if (cfg.corpus.knowledge_base.empty()) throw InvalidArgument("corpus.knowledge_base is not set");
  const KnowledgeBase kb = load_knowledge_base(cfg.corpus.knowledge_base);
  OutputSession out(cfg, ctx);
  ParamStore<float> params;
  Rng rng(derive_seed(cfg.seed, "text_encoder"));
  const auto enc = TextEncoder<float>::build(params, cfg.text_encoder, rng);
  const PretrainResult res = pretrain_knowledge_encoder(knowledge_triples(kb), params, enc, cfg.knowledge);
  for (const auto& w : res.warnings) *ctx.log << "warning: " << w << '\n';
  CheckpointFile ck;
  ck.meta = {{"kind", "text_encoder"}, {"text_encoder", to_json(cfg.text_encoder)}, {"knowledge", to_json(cfg.knowledge)}};
  append_params(ck, params);
  write_checkpoint(out.dir() / "knowledge.ckpt", ck);
  write_json(out.dir() / "knowledge_history.json", {{"epoch_loss", res.epoch_loss}, {"warnings", res.warnings}});
  if (!res.epoch_loss.empty())
    *ctx.log << "knowledge pretraining: " << res.epoch_loss.size() << " epochs, final loss " << res.epoch_loss.back() << '\n';
}

inline json history_json(const std::vector<EpochLog>& h) {
  json out = json::array();
  for (const auto& e : h)
    out.push_back({{"epoch", e.epoch},
                   {"loss", e.loss},
                   {"learning_rate", e.learning_rate},
                   {"val_macro_auc", e.val_macro_auc ? json(*e.val_macro_auc) : json(nullptr)}});
  return out;
}

inline json split_json(const SplitAssignment& s) {
  json j = json::object();
  for (const auto& [id, sp] : s.assignment) j[id] = to_string(sp);
  return j;
}

inline EpochCallback<float> epoch_logger(std::ostream& os) {
  return [&os](const EpochLog& e, const Model<float>&, const AdamW<float>&) {
    os << "epoch " << e.epoch + 1 << " loss " << detail::fmt(e.loss, 4) << " lr " << e.learning_rate;
    if (e.val_macro_auc) os << " val macro auc " << detail::fmt(100.0 * *e.val_macro_auc);
    os << '\n';
  };
}

inline void cmd_train(const RunConfig& cfg, const CommandContext& ctx) {
  const Corpus corpus = load_run_corpus(cfg);
  const SplitAssignment split = run_split(corpus, cfg);
  const auto names = run_display_names(cfg);
  std::optional<Tensor<float>> rows;
  if (cfg.model.knowledge) {
    if (cfg.knowledge_checkpoint.empty())
      throw InvalidArgument("knowledge enhancement needs knowledge_checkpoint (run pretrain-knowledge first)");
    const auto te = load_text_encoder(cfg.knowledge_checkpoint);
    if (te->encoder.config().embed_dim != cfg.model.encoder.embed_dim)
      throw InvalidArgument("text encoder dimension " + std::to_string(te->encoder.config().embed_dim) +
                            " differs from model.encoder.embed_dim " + std::to_string(cfg.model.encoder.embed_dim));
    rows = embed_labels(build_label_space(corpus, cfg.train.level, &split, &names), te->encoder);
  }
  OutputSession out(cfg, ctx);
  write_json(out.dir() / "split.json", split_json(split));
  auto r = train<float>(corpus, split, cfg.model, cfg.train, rows ? &*rows : nullptr, &names, epoch_logger(*ctx.log));
  for (const auto& w : r.fit.warnings) *ctx.log << "warning: " << w << '\n';
  save_model(out.dir() / "model.ckpt", r.model, &r.fit.optimizer, cfg.train.epochs,
             json{{"seed", cfg.seed}, {"manifest", cfg.corpus.manifest}});
  write_json(out.dir() / "history.json", history_json(r.fit.history));
  const MetricsReport rep = write_evaluation(out.dir(), r.model, corpus.in_split(split, Split::test), cfg);
  *ctx.log << "test split:\n";
  log_summary(*ctx.log, rep);
}

inline void cmd_eval(const RunConfig& cfg, const CommandContext& ctx) {
  const Model<float> model = load_run_model(cfg);
  const Corpus corpus = load_run_corpus(cfg);
  const SplitAssignment split = run_split(corpus, cfg);
  require_same_labels(model.labels, build_label_space(corpus, model.labels.level, &split));
  OutputSession out(cfg, ctx);
  const MetricsReport rep = write_evaluation(out.dir(), model, corpus.in_split(split, parse_split(cfg.split)), cfg);
  *ctx.log << cfg.split << " split:\n";
  log_summary(*ctx.log, rep);
}

inline void cmd_finetune(const RunConfig& cfg, const CommandContext& ctx) {
  const Model<float> source = load_run_model(cfg);
  const Corpus external = load_run_corpus(cfg);
  const SplitAssignment split = run_split(external, cfg);
  FinetuneConfig fc;
  fc.mode = cfg.finetune_mode;
  fc.fraction = cfg.fraction;
  fc.train = cfg.train;
  OutputSession out(cfg, ctx);
  auto r = finetune(source, external, split, fc, epoch_logger(*ctx.log));
  for (const auto& w : r.fit.warnings) *ctx.log << "warning: " << w << '\n';
  save_model(out.dir() / "model.ckpt", r.model, &r.fit.optimizer, cfg.train.epochs,
             json{{"seed", cfg.seed}, {"source", cfg.checkpoint}, {"fraction", cfg.fraction}});
  write_json(out.dir() / "history.json", history_json(r.fit.history));
  const MetricsReport rep = write_evaluation(out.dir(), r.model, external.in_split(split, Split::test), cfg);
  *ctx.log << "test split:\n";
  log_summary(*ctx.log, rep);
}

// External labels: an external class is positive for a case listing it
// among its disorders or ICD codes.
inline std::vector<std::vector<int>> external_labels(const std::vector<const Case*>& cases, const std::vector<std::string>& classes) {
  std::vector<std::vector<int>> out;
  for (const Case* c : cases) {
    std::vector<int> row;
    for (const auto& k : classes) {
      const bool hit = std::find(c->disorders.begin(), c->disorders.end(), k) != c->disorders.end() ||
                       std::find(c->icd.begin(), c->icd.end(), k) != c->icd.end();
      row.push_back(hit ? 1 : 0);
    }
    out.push_back(std::move(row));
  }
  return out;
}

inline void cmd_zeroshot(const RunConfig& cfg, const CommandContext& ctx) {
  if (cfg.mapping.empty()) throw InvalidArgument("zeroshot needs a mapping file (--mapping)");
  const ZeroShotMapping mapping = load_zero_shot_mapping(cfg.mapping);
  const Model<float> model = load_run_model(cfg);
  const Corpus external = load_run_corpus(cfg);
  std::vector<const Case*> cases;
  for (const auto& c : external.cases) cases.push_back(&c);
  OutputSession out(cfg, ctx);
  Preprocessor prep(model.config.encoder.geometry);
  const ZeroShotResult res = zero_shot_predict(predict(model, cases, prep), model.labels, model.thresholds, mapping);
  const auto metrics = zero_shot_metrics(res, external_labels(cases, res.classes));
  json classes = json::array();
  double f1 = 0, mcc = 0, acc = 0;
  for (const auto& m : metrics) {
    classes.push_back({{"id", m.class_id},
                       {"members", mapping.at(m.class_id)},
                       {"f1", 100.0 * m.metrics.f1},
                       {"mcc", 100.0 * m.metrics.mcc},
                       {"acc", 100.0 * m.metrics.acc},
                       {"mcc_degenerate", m.metrics.mcc_degenerate}});
    f1 += m.metrics.f1;
    mcc += m.metrics.mcc;
    acc += m.metrics.acc;
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, metrics.size()));
  write_json(out.dir() / "zeroshot.json", {{"units", "percent"},
                                           {"classes", classes},
                                           {"macro", {{"f1", 100.0 * f1 / n}, {"mcc", 100.0 * mcc / n}, {"acc", 100.0 * acc / n}}},
                                           {"cases", cases.size()},
                                           {"note", res.note}});
  *ctx.log << "zero-shot over " << cases.size() << " cases, " << metrics.size() << " external classes: macro f1 "
           << detail::fmt(100.0 * f1 / n) << " mcc " << detail::fmt(100.0 * mcc / n) << " acc " << detail::fmt(100.0 * acc / n)
           << "\nnote: " << res.note << '\n';
}

inline std::string file_token(std::string s) {
  for (char& c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') c = '_';
  return s;
}

inline void cmd_explain(const RunConfig& cfg, const CommandContext& ctx) {
  const Model<float> model = load_run_model(cfg);
  const Corpus corpus = load_run_corpus(cfg);
  std::vector<const Case*> chosen;
  if (!cfg.explain.cases.empty()) {
    for (const auto& id : cfg.explain.cases) {
      const Case* c = corpus.find(id);
      if (!c) throw InvalidArgument("case " + id + " is not in the manifest");
      chosen.push_back(c);
    }
  } else {
    const SplitAssignment split = run_split(corpus, cfg);
    for (const Case* c : corpus.in_split(split, parse_split(cfg.split))) {
      if (static_cast<int>(chosen.size()) >= cfg.explain.count) break;
      if (!c->disorders.empty() && c->disorders[0] != kNormalClass && model.labels.index_of(c->disorders[0]) >= 0) chosen.push_back(c);
    }
  }
  std::map<std::string, std::vector<Plant>> plants;
  const fs::path planted = fs::path(cfg.corpus.manifest).parent_path() / "planted.jsonl";
  if (fs::exists(planted)) plants = load_plants(planted);

  OutputSession out(cfg, ctx);
  fs::create_directories(out.dir() / "saliency");
  Preprocessor prep(model.config.encoder.geometry);
  json entries = json::array();
  for (const Case* c : chosen) {
    const std::string target = cfg.explain.target.empty() ? c->disorders.at(0) : cfg.explain.target;
    const SaliencyMap m = score_cam(model, *c, target, SliceSelector{cfg.explain.scan, cfg.explain.slice}, prep);
    const CanonicalScan& scan = prep.canonical(c->scans.at(cfg.explain.scan));
    const std::size_t plane = scan.values.slice_size();
    const std::vector<float> slice(scan.values.voxels.begin() + static_cast<std::ptrdiff_t>(m.slice * plane),
                                   scan.values.voxels.begin() + static_cast<std::ptrdiff_t>((m.slice + 1) * plane));
    const std::string stem = file_token(c->id + "_" + target);
    write_pgm(out.dir() / "saliency" / (stem + "_heat.pgm"), m.height, m.width, m.heat);
    write_pgm(out.dir() / "saliency" / (stem + "_slice.pgm"), m.height, m.width, slice);
    write_overlay_ppm(out.dir() / "saliency" / (stem + "_overlay.ppm"), m, slice);
    json e{{"case_id", c->id}, {"scan_id", m.scan_id}, {"class_id", target}, {"slice", m.slice}, {"files", stem + "_*"}};
    // Planted boxes are in source pixels; they match canonical pixels when
    // the corpus was generated at the model geometry.
    if (auto it = plants.find(m.scan_id); it != plants.end() && scan.values.height == c->scans[cfg.explain.scan].volume->height &&
                                          scan.values.width == c->scans[cfg.explain.scan].volume->width)
      for (const auto& p : it->second)
        if (p.class_id == target && !p.decoy) e["in_box_mass"] = saliency_mass_in_box(m, p.y0, p.y1, p.x0, p.x1);
    entries.push_back(std::move(e));
    *ctx.log << "saliency " << c->id << " / " << target << " -> " << stem << "_overlay.ppm\n";
  }
  write_json(out.dir() / "saliency.json", entries);
}

// Label space reconstructed from a metrics file (ids, names, strata).
inline LabelSpace label_space_from_metrics(const json& metrics) {
  LabelSpace ls;
  for (const auto& c : metrics.at("classes")) {
    ls.classes.push_back(c.at("id").get<std::string>());
    ls.names.push_back(c.value("name", ls.classes.back()));
    ls.counts.push_back(0);
    const std::string st = c.at("stratum").get<std::string>();
    ls.category.push_back(st == "head" ? Stratum::head : st == "medium" ? Stratum::medium : Stratum::tail);
  }
  return ls;
}

inline void cmd_report(const RunConfig& cfg, const CommandContext& ctx) {
  if (cfg.predictions.empty()) throw InvalidArgument("report needs an evaluation directory (predictions or --input)");
  const fs::path in = cfg.predictions;
  const json metrics = read_json(in / "metrics.json");
  const PredictionSet preds = prediction_set_from_json(read_json(in / "predictions.json"));
  const LabelSpace labels = label_space_from_metrics(metrics);
  if (labels.classes != preds.classes) throw DataError("metrics.json and predictions.json list different classes");
  OutputSession out(cfg, ctx);
  fs::create_directories(out.dir() / "plots");
  std::vector<ClassResult> results;
  for (std::size_t k = 0; k < labels.size(); ++k) {
    ClassScores cs{labels.classes[k], {}, {}};
    for (const auto& c : preds.cases) {
      cs.scores.push_back(c.probs[k]);
      cs.labels.push_back(c.labels[k]);
    }
    const double thr = metrics.at("classes").at(k).at("threshold").get<double>();
    results.push_back(evaluate_class(cs, thr, cfg.bootstrap_enabled ? &cfg.bootstrap : nullptr));
  }
  const MetricsReport rep = stratified_report(std::move(results), labels);
  std::ostringstream md;
  md << "| stratum | classes | AUC | AP | F1 | MCC | ACC | AUC 95% CI |\n|---|---|---|---|---|---|---|---|\n";
  for (const auto& s : rep.strata) {
    md << "| " << s.name << " | " << s.classes;
    for (const char* m : {"auc", "ap", "f1", "mcc", "acc"}) {
      auto it = s.macro.find(m);
      md << " | " << (it == s.macro.end() ? std::string("n/a") : detail::fmt(100.0 * it->second));
    }
    md << " | " << (s.ci_low ? detail::fmt(100.0 * *s.ci_low) + "-" + detail::fmt(100.0 * *s.ci_high) : std::string("n/a"))
       << " |\n";
  }
  for (const auto& n : rep.notes) md << "\n- " << n;
  md << '\n';
  write_text(out.dir() / "summary.md", md.str());
  for (std::size_t k = 0; k < rep.classes.size(); ++k) {
    const ClassResult& r = rep.classes[k];
    const std::string stem = file_token(r.class_id);
    write_text(out.dir() / "plots" / ("roc_" + stem + ".svg"), roc_svg(r));
    const ProbabilityGroups g = probability_groups(preds, k);
    write_text(out.dir() / "plots" / ("probability_" + stem + ".svg"),
               distribution_svg(r.name + (g.anatomy ? " (" + std::string(to_string(*g.anatomy)) + ")" : ""), g));
  }
  *ctx.log << "report: " << rep.classes.size() << " classes, plots in " << (out.dir() / "plots").string() << '\n';
}

}  // namespace casedx
