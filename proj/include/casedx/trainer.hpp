#pragma once

// Case-level model (encoder, fusion, classifier), training loop, threshold
// selection, checkpoints, fine-tuning and zero-shot label transfer.

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "casedx/checkpoint.hpp"
#include "casedx/metrics.hpp"
#include "casedx/optim.hpp"
#include "casedx/serialize.hpp"

namespace casedx {

struct ModelConfig {
  EncoderConfig encoder;
  FusionConfig fusion;
  bool knowledge = false;        // classify with frozen label-text embeddings
  double knowledge_scale = 0.1;  // initial divisor s of the cosine scores
  bool single_image = false;     // no fusion: classify one scan's embedding
};

inline json to_json(const ModelConfig& c) {
  return {{"encoder", to_json(c.encoder)},
          {"fusion", to_json(c.fusion)},
          {"knowledge", c.knowledge},
          {"knowledge_scale", c.knowledge_scale},
          {"single_image", c.single_image}};
}
inline void read(StrictReader& r, ModelConfig& c) {
  r.object("encoder", [&](StrictReader& s) { read(s, c.encoder); })
      .object("fusion", [&](StrictReader& s) { read(s, c.fusion); })
      .get("knowledge", c.knowledge)
      .get("knowledge_scale", c.knowledge_scale)
      .get("single_image", c.single_image);
}

struct TrainConfig {
  int epochs = 100;
  double warmup_epochs = 5;
  double learning_rate = 1e-5;
  int batch_size = 8;
  double weight_decay = 0.01;
  AugmentConfig augment;
  double key_slice_prob = 0.25;
  LabelLevel level = LabelLevel::disorder;
  int validate_every = 1;  // epochs between validation passes; 0 disables them
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1) throw InvalidArgument("train.epochs must be positive");
    if (!(warmup_epochs >= 0) || warmup_epochs >= epochs) throw InvalidArgument("train.warmup_epochs must be below train.epochs");
    if (!(learning_rate > 0)) throw InvalidArgument("train.learning_rate must be positive");
    if (batch_size < 1) throw InvalidArgument("train.batch_size must be positive");
    if (key_slice_prob < 0 || key_slice_prob > 1) throw InvalidArgument("train.key_slice_prob must lie in [0, 1]");
  }
};

inline json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"warmup_epochs", c.warmup_epochs},
          {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"weight_decay", c.weight_decay},
          {"augment", to_json(c.augment)},
          {"key_slice_prob", c.key_slice_prob},
          {"level", to_string(c.level)},
          {"validate_every", c.validate_every}};
}
inline void read(StrictReader& r, TrainConfig& c) {
  r.get("epochs", c.epochs)
      .get("warmup_epochs", c.warmup_epochs)
      .get("learning_rate", c.learning_rate)
      .get("batch_size", c.batch_size)
      .get("weight_decay", c.weight_decay)
      .object("augment", [&](StrictReader& s) { read(s, c.augment); })
      .get("key_slice_prob", c.key_slice_prob)
      .enumeration("level", c.level, parse_level)
      .get("validate_every", c.validate_every);
}

// Sum over classes of binary cross-entropy on probabilities clamped to
// [1e-7, 1 - 1e-7].
inline double bce_loss(const std::vector<double>& p, const std::vector<double>& y) {
  return ag::bce_with_probs(Var<double>::constant(Tensor<double>({static_cast<int>(p.size())}, p)), y).item();
}

// Canonical views of a corpus' scans, cached per scan id.
class Preprocessor {
 public:
  explicit Preprocessor(Geometry geo) : geo_(geo) {}

  const Geometry& geometry() const noexcept { return geo_; }

  const CanonicalScan& canonical(const Scan& s) {
    auto it = cache_.find(s.id);
    if (it == cache_.end()) it = cache_.emplace(s.id, normalize_scan(s, geo_)).first;
    return it->second;
  }

  std::vector<CanonicalScan> eval_view(const Case& c) {
    std::vector<CanonicalScan> out;
    for (const auto& s : c.scans) out.push_back(canonical(s));
    return out;
  }

  // Key-slice substitution, then augmentation, with seeds derived from
  // (seed, case id, epoch).
  std::vector<CanonicalScan> train_view(const Case& c, const TrainConfig& cfg, int epoch) {
    const std::uint64_t epoch_seed = derive_seed(cfg.seed, "epoch", static_cast<std::uint64_t>(epoch));
    const Case sub = key_slice_substitute(c, cfg.key_slice_prob, epoch_seed);
    std::vector<CanonicalScan> out;
    for (std::size_t i = 0; i < sub.scans.size(); ++i) {
      const Scan& s = sub.scans[i];
      CanonicalScan v = s.dims == c.scans[i].dims ? canonical(s) : normalize_scan(s, geo_);
      if (cfg.augment.enabled) v = augment(v, derive_seed(epoch_seed, s.id), cfg.augment);
      out.push_back(std::move(v));
    }
    return out;
  }

 private:
  Geometry geo_;
  std::map<std::string, CanonicalScan> cache_;
};

template <class T>
class Model {
 public:
  struct Output {
    Var<T> probs;   // [1, c]
    Var<T> logits;  // [1, c]; empty for pooled baselines, which pool probabilities
  };

  ModelConfig config;
  LabelSpace labels;
  ParamStore<T> params;
  std::vector<double> thresholds;

  // Fresh model. Knowledge rows [c, d] are required when config.knowledge.
  static Model build(const ModelConfig& cfg, const LabelSpace& labels, std::uint64_t seed,
                     const Tensor<T>* knowledge_rows = nullptr) {
    Model m;
    m.config = cfg;
    m.labels = labels;
    if (cfg.knowledge) {
      if (!knowledge_rows) throw InvalidArgument("knowledge-enhanced classifier needs label embeddings");
      m.params.insert("knowledge.embeddings", *knowledge_rows, false);
    }
    m.bind(seed);
    m.thresholds.assign(labels.size(), 0.5);
    return m;
  }

  // Builds module views over params, creating whatever is missing.
  void bind(std::uint64_t seed) {
    Rng rng(derive_seed(seed, "model_init"));
    const int d = config.encoder.embed_dim;
    const int c = static_cast<int>(labels.size());
    if (c < 1) throw InvalidArgument("label space is empty");
    encoder_ = Encoder<T>::build(params, config.encoder, rng);
    if (uses_fusion()) fusion_ = Fusion<T>::build(params, config.fusion, d, rng);
    if (config.knowledge) {
      if (!params.contains("knowledge.embeddings")) throw InvalidArgument("checkpoint lacks knowledge.embeddings");
      rows_ = params.at("knowledge.embeddings");
      if (rows_.shape() != Shape{c, d})
        throw ShapeError("knowledge.embeddings is " + shape_str(rows_.shape()) + ", expected " + shape_str({c, d}));
      log_scale_ = params.get_or_create("classifier.log_scale", {1}, Init::constant(std::log(config.knowledge_scale)), rng);
      bias_ = params.get_or_create("classifier.bias", {c}, Init::zeros(), rng);
    } else {
      linear_ = nn::Linear<T>::make(params, "classifier.linear", d, c, rng);
    }
  }

  bool uses_fusion() const noexcept { return !config.single_image && config.fusion.mode == FusionMode::learnable; }
  const Encoder<T>& encoder() const noexcept { return encoder_; }

  // [k, d] embeddings -> [k, c] logits.
  Var<T> classify(const Var<T>& v) const {
    if (!config.knowledge) return linear_(v);
    const Var<T> cosine = ag::matmul_nt(ag::l2_normalize_rows(v), rows_);
    return ag::add_row(ag::mul_scalar(cosine, ag::exp(ag::scale(log_scale_, T(-1)))), bias_);
  }

  Output forward(const std::vector<CanonicalScan>& scans, Mode mode, Rng* rng = nullptr) const {
    if (scans.empty()) throw InvalidArgument("forward: case has no scans");
    if (config.single_image) {
      if (scans.size() != 1)
        throw InvalidArgument("single-image model given a case with " + std::to_string(scans.size()) + " scans");
      const Var<T> z = classify(encoder_.encode(scans[0], mode).vector);
      return {ag::sigmoid(z), z};
    }
    const std::vector<int> keep = select_scans(static_cast<int>(scans.size()), config.fusion.max_scans, mode, rng);
    std::vector<VisualEmbedding<T>> emb;
    for (int i : keep) emb.push_back(encoder_.encode(scans[i], mode));
    if (uses_fusion()) {
      const Var<T> z = classify(fusion_(emb));
      return {ag::sigmoid(z), z};
    }
    std::vector<Var<T>> rows;
    for (const auto& e : emb) rows.push_back(e.vector);
    const Var<T> per_scan = ag::sigmoid(classify(ag::concat_rows(rows)));
    if (rng) return {pool_scan_scores(per_scan, config.fusion.mode, *rng), Var<T>()};
    Rng local(derive_seed(0, scans[0].scan_id, 0x9001));
    return {pool_scan_scores(per_scan, config.fusion.mode, local), Var<T>()};
  }

  Var<T> loss(const Output& out, const std::vector<T>& y) const {
    return out.logits ? ag::bce_with_logits(out.logits, y) : ag::bce_with_probs(out.probs, y);
  }

 private:
  Encoder<T> encoder_;
  Fusion<T> fusion_;
  Var<T> rows_, log_scale_, bias_;
  nn::Linear<T> linear_;
};

template <class T>
std::vector<std::vector<double>> predict(const Model<T>& model, const std::vector<const Case*>& cases, Preprocessor& prep) {
  std::vector<std::vector<double>> out;
  out.reserve(cases.size());
  for (const Case* c : cases) {
    const auto p = model.forward(prep.eval_view(*c), Mode::eval).probs;
    out.emplace_back(p.value().storage().begin(), p.value().storage().end());
  }
  return out;
}

inline std::vector<ClassScores> class_scores(const std::vector<std::vector<double>>& probs,
                                             const std::vector<const Case*>& cases, const LabelSpace& labels) {
  std::vector<ClassScores> out(labels.size());
  for (std::size_t k = 0; k < labels.size(); ++k) {
    out[k].class_id = labels.classes[k];
    for (std::size_t i = 0; i < cases.size(); ++i) {
      out[k].scores.push_back(probs[i][k]);
      out[k].labels.push_back(static_cast<int>(labels.targets<double>(*cases[i])[k]));
    }
  }
  return out;
}

inline MetricsReport evaluate_predictions(const std::vector<std::vector<double>>& probs,
                                          const std::vector<const Case*>& cases, const LabelSpace& labels,
                                          const std::vector<double>& thresholds, const BootstrapConfig* boot = nullptr) {
  if (thresholds.size() != labels.size()) throw ShapeError("one threshold per class required");
  const auto scores = class_scores(probs, cases, labels);
  std::vector<ClassResult> results;
  for (std::size_t k = 0; k < scores.size(); ++k) results.push_back(evaluate_class(scores[k], thresholds[k], boot));
  return stratified_report(std::move(results), labels);
}

struct ThresholdSelection {
  std::vector<double> thresholds;
  std::vector<std::string> warnings;
};

inline ThresholdSelection select_thresholds(const std::vector<std::vector<double>>& probs,
                                            const std::vector<const Case*>& cases, const LabelSpace& labels) {
  ThresholdSelection sel;
  for (const auto& cs : class_scores(probs, cases, labels)) {
    const ThresholdChoice t = select_threshold(cs);
    if (t.fallback)
      sel.warnings.push_back("class " + cs.class_id + ": validation lacks a positive or a negative; threshold 0.5");
    sel.thresholds.push_back(t.threshold);
  }
  return sel;
}

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double learning_rate = 0.0;
  std::optional<double> val_macro_auc;
};

template <class T>
struct FitResult {
  std::vector<EpochLog> history;
  std::vector<std::string> warnings;
  AdamW<T> optimizer;
};

template <class T>
using EpochCallback = std::function<void(const EpochLog&, const Model<T>&, const AdamW<T>&)>;

// Trains model in place on the given cases, then selects per-class
// thresholds on the validation cases.
template <class T>
FitResult<T> fit(Model<T>& model, const std::vector<const Case*>& train_cases, const std::vector<const Case*>& val_cases,
                 const TrainConfig& cfg, const EpochCallback<T>& on_epoch = {}) {
  cfg.validate();
  if (train_cases.empty()) throw InvalidArgument("training split is empty");
  FitResult<T> res;
  res.optimizer.weight_decay = cfg.weight_decay;
  const WarmupCosine schedule{cfg.learning_rate, cfg.warmup_epochs, static_cast<double>(cfg.epochs)};
  Preprocessor prep(model.config.encoder.geometry);
  const std::size_t n = train_cases.size();
  const std::size_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffler(derive_seed(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
    shuffler.shuffle(order);
    double total = 0.0;
    double lr = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * cfg.batch_size, hi = std::min(n, lo + cfg.batch_size);
      model.params.zero_grad();
      for (std::size_t i = lo; i < hi; ++i) {
        const Case& c = *train_cases[order[i]];
        Rng rng(derive_seed(cfg.seed, c.id, static_cast<std::uint64_t>(epoch) + 1));
        const auto out = model.forward(prep.train_view(c, cfg, epoch), Mode::train, &rng);
        Var<T> loss = model.loss(out, model.labels.template targets<T>(c));
        if (!std::isfinite(static_cast<double>(loss.item())))
          throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) +
                             " (case " + c.id + ")");
        total += loss.item();
        ag::scale(loss, static_cast<T>(1.0 / static_cast<double>(hi - lo))).backward();
      }
      lr = schedule.at(epoch + static_cast<double>(b + 1) / static_cast<double>(batches));
      res.optimizer.step(model.params, lr);
    }
    EpochLog log{epoch, total / static_cast<double>(n), lr, std::nullopt};
    if (cfg.validate_every > 0 && (epoch + 1) % cfg.validate_every == 0 && !val_cases.empty()) {
      const auto rep = evaluate_predictions(predict(model, val_cases, prep), val_cases, model.labels, model.thresholds);
      log.val_macro_auc = macro_auc(rep);
    }
    res.history.push_back(log);
    if (on_epoch) on_epoch(log, model, res.optimizer);
  }

  if (val_cases.empty()) {
    res.warnings.push_back("no validation cases; thresholds default to 0.5");
    model.thresholds.assign(model.labels.size(), 0.5);
  } else {
    auto sel = select_thresholds(predict(model, val_cases, prep), val_cases, model.labels);
    model.thresholds = std::move(sel.thresholds);
    res.warnings.insert(res.warnings.end(), sel.warnings.begin(), sel.warnings.end());
  }
  return res;
}

template <class T>
struct TrainResult {
  Model<T> model;
  FitResult<T> fit;
};

// Label space from the training portion of the corpus, a fresh model and a
// full training run.
template <class T>
TrainResult<T> train(const Corpus& corpus, const SplitAssignment& split, const ModelConfig& mcfg, const TrainConfig& cfg,
                     const Tensor<T>* knowledge_rows = nullptr,
                     const std::map<std::string, std::string>* display_names = nullptr,
                     const EpochCallback<T>& on_epoch = {}) {
  const LabelSpace labels = build_label_space(corpus, cfg.level, &split, display_names);
  TrainResult<T> r{Model<T>::build(mcfg, labels, cfg.seed, knowledge_rows), {}};
  r.fit = fit(r.model, corpus.in_split(split, Split::train), corpus.in_split(split, Split::val), cfg, on_epoch);
  return r;
}

// ---------------------------------------------------------------- checkpoints

template <class T>
CheckpointFile model_checkpoint(const Model<T>& m, const AdamW<T>* opt = nullptr, int epochs_done = 0, json extra = {}) {
  CheckpointFile ck;
  ck.meta = {{"kind", "model"},
             {"model", to_json(m.config)},
             {"labels", to_json(m.labels)},
             {"thresholds", m.thresholds},
             {"epochs_done", epochs_done},
             {"optimizer_steps", opt ? opt->steps() : 0}};
  if (!extra.is_null()) ck.meta["extra"] = std::move(extra);
  append_params(ck, m.params);
  if (opt)
    for (const auto& [name, mom] : opt->state()) {
      ck.arrays.push_back({"optim.first/" + name, mom.first.shape(),
                           std::vector<float>(mom.first.storage().begin(), mom.first.storage().end()), false});
      ck.arrays.push_back({"optim.second/" + name, mom.second.shape(),
                           std::vector<float>(mom.second.storage().begin(), mom.second.storage().end()), false});
    }
  return ck;
}

template <class T>
void save_model(const std::filesystem::path& path, const Model<T>& m, const AdamW<T>* opt = nullptr, int epochs_done = 0,
                json extra = {}) {
  write_checkpoint(path, model_checkpoint(m, opt, epochs_done, std::move(extra)));
}

template <class T>
Model<T> model_from_checkpoint(const CheckpointFile& ck) {
  if (ck.meta.value("kind", "") != "model") throw DataError("checkpoint does not hold a model");
  Model<T> m;
  StrictReader r(ck.meta.at("model"), "model");
  read(r, m.config);
  m.labels = label_space_from_json(ck.meta.at("labels"));
  m.thresholds = ck.meta.at("thresholds").get<std::vector<double>>();
  for (const auto& a : ck.arrays)
    if (a.name.rfind("optim.", 0) != 0)
      m.params.insert(a.name, Tensor<T>(a.shape, std::vector<T>(a.data.begin(), a.data.end())), a.trainable);
  const std::size_t before = m.params.size();
  m.bind(0);
  if (m.params.size() != before) throw DataError("checkpoint is missing parameters for its model configuration");
  return m;
}

template <class T>
Model<T> load_model(const std::filesystem::path& path) {
  return model_from_checkpoint<T>(read_checkpoint(path));
}

inline void require_same_labels(const LabelSpace& model, const LabelSpace& corpus) {
  if (model.same_classes(corpus)) return;
  auto list = [](const LabelSpace& l) {
    std::string s;
    for (std::size_t i = 0; i < l.size(); ++i) s += (i ? "," : "") + l.classes[i];
    return std::to_string(l.size()) + " classes [" + s + "]";
  };
  throw InvalidArgument("label space mismatch: checkpoint has " + list(model) + ", corpus has " + list(corpus));
}

// ---------------------------------------------------------------- transfer

enum class FinetuneMode { single_image, multi_image };
inline FinetuneMode parse_finetune_mode(std::string_view s) {
  if (s == "single_image") return FinetuneMode::single_image;
  if (s == "multi_image") return FinetuneMode::multi_image;
  throw InvalidArgument("unknown finetune mode \"" + std::string(s) + "\"");
}

// Seeded subset of round(fraction * n) cases (at least one), in input order.
inline std::vector<const Case*> subsample_cases(const std::vector<const Case*>& cases, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw InvalidArgument("fraction must lie in (0, 1]");
  if (cases.empty()) return {};
  std::vector<std::size_t> idx(cases.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return cases[a]->id < cases[b]->id; });
  Rng rng(derive_seed(seed, "fraction"));
  rng.shuffle(idx);
  const std::size_t keep =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(cases.size()))));
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  std::vector<const Case*> out;
  for (std::size_t i : idx) out.push_back(cases[i]);
  return out;
}

struct FinetuneConfig {
  FinetuneMode mode = FinetuneMode::multi_image;
  double fraction = 1.0;
  bool fresh_classifier = true;
  TrainConfig train;
};

// Derived model for an external label space: the encoder (and, in
// multi-image mode, the fusion module) is inherited and a linear classifier
// is trained from scratch.
template <class T>
Model<T> transfer_model(const Model<T>& source, const LabelSpace& target, const FinetuneConfig& cfg) {
  Model<T> m;
  m.config = source.config;
  m.labels = target;
  if (!cfg.fresh_classifier) {
    require_same_labels(source.labels, target);
    m.config.single_image = source.config.single_image || cfg.mode == FinetuneMode::single_image;
    for (const auto& [name, v] : source.params.entries())
      if (!(m.config.single_image && name.rfind("fusion.", 0) == 0)) m.params.insert(name, v.value(), v.requires_grad());
  } else {
    m.config.knowledge = false;
    m.config.single_image = cfg.mode == FinetuneMode::single_image;
    for (const auto& [name, v] : source.params.entries()) {
      const bool keep = name.rfind("encoder.", 0) == 0 || (!m.config.single_image && name.rfind("fusion.", 0) == 0);
      if (keep) m.params.insert(name, v.value(), v.requires_grad());
    }
  }
  m.bind(derive_seed(cfg.train.seed, "transfer"));
  m.thresholds.assign(target.size(), 0.5);
  return m;
}

template <class T>
TrainResult<T> finetune(const Model<T>& source, const Corpus& external, const SplitAssignment& split,
                        const FinetuneConfig& cfg, const EpochCallback<T>& on_epoch = {}) {
  const LabelSpace labels = build_label_space(external, cfg.train.level, &split);
  if (cfg.mode == FinetuneMode::single_image)
    for (const auto& c : external.cases)
      if (c.scans.size() != 1)
        throw InvalidArgument("single_image fine-tuning needs single-scan cases; case " + c.id + " has " +
                              std::to_string(c.scans.size()));
  TrainResult<T> r{transfer_model(source, labels, cfg), {}};
  const auto train_cases = subsample_cases(external.in_split(split, Split::train), cfg.fraction, cfg.train.seed);
  r.fit = fit(r.model, train_cases, external.in_split(split, Split::val), cfg.train, on_epoch);
  return r;
}

struct ZeroShotResult {
  std::vector<std::string> classes;            // external classes, mapping order
  std::vector<std::vector<int>> predictions;   // [case][external class]
  std::string note = "ranking metrics (AUC, AP, Recall@FPR) are undefined after the OR-merge; only F1, MCC and ACC are reported";
};

using ZeroShotMapping = std::map<std::string, std::vector<std::string>>;

inline ZeroShotMapping load_zero_shot_mapping(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingAssetError(path.string());
  try {
    json j;
    in >> j;
    return j.get<ZeroShotMapping>();
  } catch (const json::exception& e) {
    throw ParseError(path.string(), 1, e.what());
  }
}

// External class positive when any mapped internal class reaches its
// internal threshold.
inline ZeroShotResult zero_shot_predict(const std::vector<std::vector<double>>& internal_probs, const LabelSpace& internal,
                                        const std::vector<double>& thresholds, const ZeroShotMapping& mapping) {
  if (thresholds.size() != internal.size()) throw ShapeError("one threshold per internal class required");
  ZeroShotResult r;
  std::vector<std::vector<int>> members;
  for (const auto& [ext, ints] : mapping) {
    if (ints.empty()) throw InvalidArgument("external class " + ext + " has an empty mapping");
    std::vector<int> idx;
    for (const auto& id : ints) {
      const int k = internal.index_of(id);
      if (k < 0) throw InvalidArgument("external class " + ext + " maps to unknown internal class " + id);
      idx.push_back(k);
    }
    r.classes.push_back(ext);
    members.push_back(std::move(idx));
  }
  for (const auto& p : internal_probs) {
    if (p.size() != internal.size()) throw ShapeError("internal probability vector length");
    std::vector<int> row;
    for (const auto& idx : members)
      row.push_back(std::any_of(idx.begin(), idx.end(), [&](int k) { return p[k] >= thresholds[k]; }) ? 1 : 0);
    r.predictions.push_back(std::move(row));
  }
  return r;
}

struct ZeroShotClassMetrics {
  std::string class_id;
  ThresholdedMetrics metrics;
};

// Thresholded metrics of binary predictions against external labels
// ([case][external class], aligned with result.classes).
inline std::vector<ZeroShotClassMetrics> zero_shot_metrics(const ZeroShotResult& r, const std::vector<std::vector<int>>& labels) {
  if (labels.size() != r.predictions.size()) throw ShapeError("zero-shot labels and predictions differ in length");
  std::vector<ZeroShotClassMetrics> out;
  for (std::size_t k = 0; k < r.classes.size(); ++k) {
    ClassScores cs{r.classes[k], {}, {}};
    for (std::size_t i = 0; i < labels.size(); ++i) {
      cs.scores.push_back(r.predictions[i][k]);
      cs.labels.push_back(labels[i].at(k));
    }
    out.push_back({r.classes[k], thresholded_metrics(cs, 0.5)});
  }
  return out;
}

}  // namespace casedx
