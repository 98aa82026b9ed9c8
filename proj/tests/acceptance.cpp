// Acceptance suite: one PASS/FAIL line per criterion.
//
//   casedx_acceptance            run every criterion
//   casedx_acceptance NAME...    run the named criteria only
//
// Exit status is 0 when every selected criterion passes.

#include <chrono>
#include <cstdio>
#include <functional>
#include <set>

#include "support.hpp"

using namespace casedx;
using casedx::testing::check_gradients;
using casedx::testing::random_instance;
using casedx::testing::random_scan;
using casedx::testing::trainable;

namespace {

struct Outcome {
  bool ok = false;
  std::string detail;
};

struct Criterion {
  std::string name;
  double budget_s;
  std::function<Outcome()> run;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

// ------------------------------------------------------------------ oracles

double pairwise_auc(const ClassScores& cs) {
  double num = 0, pairs = 0;
  for (std::size_t i = 0; i < cs.scores.size(); ++i)
    for (std::size_t j = 0; j < cs.scores.size(); ++j)
      if (cs.labels[i] == 1 && cs.labels[j] == 0) {
        pairs += 1;
        num += cs.scores[i] > cs.scores[j] ? 1.0 : cs.scores[i] == cs.scores[j] ? 0.5 : 0.0;
      }
  return num / pairs;
}

Confusion count_at(const ClassScores& cs, double t) {
  Confusion c;
  for (std::size_t i = 0; i < cs.scores.size(); ++i) {
    const bool pred = cs.scores[i] >= t, pos = cs.labels[i] == 1;
    (pred ? (pos ? c.tp : c.fp) : (pos ? c.fn : c.tn))++;
  }
  return c;
}

double step_ap(const ClassScores& cs) {
  std::vector<double> u = cs.scores;
  std::sort(u.begin(), u.end(), std::greater<>());
  u.erase(std::unique(u.begin(), u.end()), u.end());
  double ap = 0, prev = 0;
  for (double t : u) {
    const Confusion c = count_at(cs, t);
    const double recall = static_cast<double>(c.tp) / cs.positives();
    ap += (recall - prev) * static_cast<double>(c.tp) / (c.tp + c.fp);
    prev = recall;
  }
  return ap;
}

double sweep_recall(const ClassScores& cs, double target) {
  double best = 0;
  for (double t : cs.scores) {
    const Confusion c = count_at(cs, t);
    if (static_cast<double>(c.fp) / cs.negatives() <= target) best = std::max(best, static_cast<double>(c.tp) / cs.positives());
  }
  return best;
}

Outcome metric_oracles() {
  Rng rng(20);
  double auc_d = 0, ap_d = 0, thr_d = 0, rec_d = 0;
  for (int i = 0; i < 200; ++i) {
    const ClassScores cs = random_instance(rng);
    auc_d = std::max(auc_d, std::abs(*auc(cs) - pairwise_auc(cs)));
  }
  for (int i = 0; i < 200; ++i) {
    const ClassScores cs = random_instance(rng);
    ap_d = std::max(ap_d, std::abs(*average_precision(cs) - step_ap(cs)));
  }
  for (int i = 0; i < 200; ++i) {
    const ClassScores cs = random_instance(rng);
    const double t = rng.uniform();
    const Confusion c = count_at(cs, t);
    const double tp = c.tp, fp = c.fp, tn = c.tn, fn = c.fn;
    const double den = std::sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn));
    const auto m = thresholded_metrics(cs, t);
    thr_d = std::max({thr_d, std::abs(m.f1 - (tp > 0 ? 2 * tp / (2 * tp + fp + fn) : 0.0)),
                      std::abs(m.mcc - (den > 0 ? (tp * tn - fp * fn) / den : 0.0)), std::abs(m.acc - (tp + tn) / (tp + tn + fp + fn))});
  }
  for (int i = 0; i < 200; ++i) {
    const ClassScores cs = random_instance(rng, 2, 100);
    for (double f : kFprTargets) rec_d = std::max(rec_d, std::abs(*recall_at_fpr(cs, f) - sweep_recall(cs, f)));
  }
  const double worst = std::max({auc_d, ap_d, thr_d, rec_d});
  return {worst < 1e-9, fmt("max|d| auc %.1e ap %.1e f1/mcc/acc %.1e", auc_d, ap_d, thr_d) + fmt(" recall@fpr %.1e", rec_d)};
}

// ------------------------------------------------------- micro configurations

EncoderConfig micro_encoder(EncoderVariant v, Geometry geo) {
  EncoderConfig e;
  e.variant = v;
  e.embed_dim = 16;
  e.geometry = geo;
  e.width = 4;
  e.norm_blocks = {1};
  e.shared_blocks = {1};
  e.norm_groups = 2;
  e.layers = 1;
  e.heads = 2;
  e.ffn_mult = 2;
  e.patch_size = 8;
  e.cube_depth = 2;
  e.patch_hidden = 16;
  return e;
}

ModelConfig micro_model(EncoderVariant v, Geometry geo) {
  ModelConfig m;
  m.encoder = micro_encoder(v, geo);
  m.fusion.layers = 1;
  m.fusion.heads = 2;
  m.fusion.ffn_mult = 2;
  return m;
}

LabelSpace plain_labels(int c) {
  LabelSpace ls;
  for (int k = 0; k < c; ++k) ls.classes.push_back("c" + std::to_string(k));
  ls.names = ls.classes;
  ls.counts.assign(c, 1);
  ls.category.assign(c, Stratum::tail);
  return ls;
}

template <class T>
Tensor<T> unit_rows(int c, int d, Rng& rng) {
  Tensor<T> t({c, d});
  for (int r = 0; r < c; ++r) {
    double n = 0;
    for (int k = 0; k < d; ++k) n += std::pow(t[r * d + k] = static_cast<T>(rng.normal()), 2);
    for (int k = 0; k < d; ++k) t[r * d + k] = static_cast<T>(t[r * d + k] / std::sqrt(n));
  }
  return t;
}

Outcome gradient_checks() {
  double worst = 0;
  std::string where;
  auto note = [&](const casedx::testing::GradientReport& r, const std::string& what) {
    if (r.worst >= worst) worst = r.worst, where = what + ":" + r.where;
  };
  for (EncoderVariant v : {EncoderVariant::resnet, EncoderVariant::vit, EncoderVariant::mix})
    for (Dims dims : {Dims::two_d, Dims::three_d}) {
      ParamStore<double> ps;
      Rng rng(30);
      const auto enc = Encoder<double>::build(ps, micro_encoder(v, {32, 32, 4}), rng);
      Var<double> input = scan_input<double>(random_scan({32, 32, 4}, dims, rng), true);
      auto vars = trainable(ps);
      vars.emplace_back("input", input);
      Tensor<double> r({1, 16});
      for (auto& x : r.storage()) x = rng.normal();
      const Var<double> w = Var<double>::constant(r);
      note(check_gradients(vars, [&] { return ag::sum(ag::mul(enc.encode(input, dims), w)); }, 12),
           std::string(to_string(v)) + "/" + std::string(to_string(dims)));
    }
  {
    ParamStore<double> ps;
    Rng rng(31);
    FusionConfig fc;
    fc.layers = 2;
    fc.heads = 2;
    fc.ffn_mult = 2;
    const auto fuse = Fusion<double>::build(ps, fc, 16, rng);
    std::vector<VisualEmbedding<double>> scans;
    const Modality mods[] = {Modality::ct, Modality::mri, Modality::ct};
    for (int s = 0; s < 3; ++s) {
      Tensor<double> t({1, 16});
      for (auto& x : t.storage()) x = rng.normal();
      scans.push_back({Var<double>::parameter(t), "s" + std::to_string(s), mods[s]});
    }
    auto vars = trainable(ps);
    for (const auto& s : scans) vars.emplace_back(s.scan_id, s.vector);
    Tensor<double> w({1, 16});
    for (auto& x : w.storage()) x = rng.normal();
    const Var<double> wv = Var<double>::constant(w);
    note(check_gradients(vars, [&] { return ag::sum(ag::mul(fuse(scans), wv)); }, 32), "fusion");
  }
  {
    Rng rng(32);
    auto rand = [&](Shape s) {
      Tensor<double> x(std::move(s));
      for (auto& v : x.storage()) v = rng.normal();
      return Var<double>::parameter(std::move(x));
    };
    Var<double> t = rand({1, 8}), p = rand({1, 8}), n = rand({4, 8});
    note(check_gradients({{"target", t}, {"positive", p}, {"negatives", n}},
                         [&] {
                           return contrastive_loss(ag::l2_normalize_rows(t), ag::l2_normalize_rows(p), ag::l2_normalize_rows(n), 0.07);
                         },
                         64),
         "contrastive");
  }
  for (bool ke : {false, true}) {
    Rng rng(33);
    const Geometry geo{16, 16, 2};
    const auto rows = unit_rows<double>(3, 16, rng);
    ModelConfig cfg = micro_model(EncoderVariant::mix, geo);
    cfg.knowledge = ke;
    auto m = Model<double>::build(cfg, plain_labels(3), 1, &rows);
    const std::vector<CanonicalScan> scans = {random_scan(geo, Dims::three_d, rng, Modality::ct, "a"),
                                              random_scan(geo, Dims::two_d, rng, Modality::xray, "b")};
    const std::vector<double> y = {1, 0, 1};
    note(check_gradients(trainable(m.params), [&] { return m.loss(m.forward(scans, Mode::eval), y); }, 12),
         ke ? "model+ke" : "model");
  }
  return {worst < 1e-4, fmt("worst relative error %.2e", worst) + " (" + where + ")"};
}

// ---------------------------------------------------- structural invariants

template <class T>
double max_abs_diff(const std::vector<T>& a, const std::vector<T>& b) {
  if (a.size() != b.size()) return INFINITY;
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, static_cast<double>(std::abs(a[i] - b[i])));
  return d;
}

Outcome structural_invariants() {
  std::vector<std::string> broken;
  Rng rng(40);
  const Geometry geo{32, 32, 4};
  for (EncoderVariant v : {EncoderVariant::resnet, EncoderVariant::vit, EncoderVariant::mix}) {
    ParamStore<float> ps;
    const auto enc = Encoder<float>::build(ps, micro_encoder(v, geo), rng);
    const auto a = random_scan(geo, Dims::three_d, rng, Modality::ct, "a");
    const auto b = random_scan(geo, Dims::two_d, rng, Modality::xray, "b");
    const auto ea = enc.encode(a), eb = enc.encode(b);
    if (ea.vector.shape() != Shape{1, 16} || eb.vector.shape() != Shape{1, 16}) broken.push_back("parity/" + std::string(to_string(v)));
    const auto ab = enc.encode_batch({a, b}), ba = enc.encode_batch({b, a});
    if (max_abs_diff(ab[0].vector.value().storage(), ea.vector.value().storage()) > 0 ||
        max_abs_diff(ab[0].vector.value().storage(), ba[1].vector.value().storage()) > 0 ||
        max_abs_diff(ab[1].vector.value().storage(), eb.vector.value().storage()) > 0)
      broken.push_back("batch/" + std::string(to_string(v)));
  }
  double perm = 0;
  {
    ParamStore<float> ps;
    FusionConfig fc;
    fc.layers = 2;
    fc.heads = 2;
    const auto fuse = Fusion<float>::build(ps, fc, 16, rng);
    std::vector<VisualEmbedding<float>> scans;
    const Modality mods[] = {Modality::ct, Modality::mri, Modality::xray, Modality::ct, Modality::dsa};
    for (int s = 0; s < 5; ++s) {
      Tensor<float> t({1, 16});
      for (auto& x : t.storage()) x = static_cast<float>(rng.normal());
      scans.push_back({Var<float>::constant(t), "s" + std::to_string(s), mods[s]});
    }
    const auto base = fuse(scans).value().storage();
    std::vector<int> order = {0, 1, 2, 3, 4};
    for (int t = 0; t < 20; ++t) {
      rng.shuffle(order);
      std::vector<VisualEmbedding<float>> p;
      for (int i : order) p.push_back(scans[i]);
      perm = std::max(perm, max_abs_diff(fuse(p).value().storage(), base));
    }
    if (!(perm < 1e-5)) broken.push_back("permutation");
  }
  const Geometry small{16, 16, 2};
  for (EncoderVariant v : {EncoderVariant::resnet, EncoderVariant::vit, EncoderVariant::mix})
    for (FusionMode f : {FusionMode::learnable, FusionMode::max, FusionMode::mean, FusionMode::random}) {
      ModelConfig cfg = micro_model(v, small);
      cfg.fusion.mode = f;
      const auto m = Model<float>::build(cfg, plain_labels(3), 2);
      for (float fill : {-1.f, 0.f, 1.f}) {
        std::vector<CanonicalScan> scans = {random_scan(small, Dims::three_d, rng), random_scan(small, Dims::two_d, rng)};
        if (fill >= 0)
          for (auto& s : scans) std::fill(s.values.voxels.begin(), s.values.voxels.end(), fill);
        const auto out = m.forward(scans, Mode::eval);
        for (float p : out.probs.value().storage())
          if (!(p > 0.f && p < 1.f)) broken.push_back("probability-range");
      }
    }
  const double sat = bce_loss({0, 1}, {1, 0});
  const double lz = ag::bce_with_logits(Var<double>::constant(Tensor<double>({1, 2}, {1e4, -1e4})), std::vector<double>{0, 1}).item();
  if (!std::isfinite(sat) || std::abs(lz - 2e4) > 1e-6 || std::abs(bce_loss({0.5}, {1}) - std::log(2.0)) > 1e-12)
    broken.push_back("bce-stability");
  std::string d = fmt("fusion permutation max|d| %.1e", perm);
  for (const auto& b : broken) d += "; broken " + b;
  return {broken.empty(), d};
}

// ---------------------------------------------------------- desk benchmarks

ModelConfig desk_model(const SyntheticConfig& sc) {
  ModelConfig m;
  m.encoder.embed_dim = 64;
  m.encoder.geometry = {sc.height, sc.width, sc.depth};
  m.encoder.width = 8;
  m.encoder.heads = 4;
  m.encoder.patch_size = 8;
  m.encoder.cube_depth = 4;
  m.encoder.patch_hidden = 64;
  m.fusion.heads = 4;
  return m;
}

TrainConfig desk_train(int epochs, std::uint64_t seed) {
  TrainConfig t;
  t.epochs = epochs;
  t.warmup_epochs = 3;
  t.learning_rate = 1e-3;
  t.validate_every = 0;
  t.seed = seed;
  return t;
}

// Trains on a synthetic corpus and returns the test report.
MetricsReport desk_run(const SyntheticConfig& sc, ModelConfig mc, const TrainConfig& tc, std::uint64_t seed) {
  const SyntheticCorpus syn = generate_synthetic(sc, seed);
  const SplitAssignment split = split_corpus(syn.corpus, seed);
  const auto names = display_names(syn.knowledge);
  std::optional<Tensor<float>> rows;
  if (mc.knowledge) {
    ParamStore<float> tp;
    Rng rng(1);
    TextEncoderConfig tec;
    tec.embed_dim = mc.encoder.embed_dim;
    const auto te = TextEncoder<float>::build(tp, tec, rng);
    KnowledgeTrainConfig kc;
    kc.seed = seed;
    pretrain_knowledge_encoder(knowledge_triples(syn.knowledge), tp, te, kc);
    rows = embed_labels(build_label_space(syn.corpus, LabelLevel::disorder, &split, &names), te);
  }
  const auto r = train<float>(syn.corpus, split, mc, tc, rows ? &*rows : nullptr, &names);
  Preprocessor prep(mc.encoder.geometry);
  const auto test = syn.corpus.in_split(split, Split::test);
  return evaluate_predictions(predict(r.model, test, prep), test, r.model.labels, r.model.thresholds);
}

double macro(const MetricsReport& rep, const char* stratum = "all") { return macro_auc(rep, stratum).value_or(NAN); }

SyntheticConfig desk_corpus() {
  SyntheticConfig sc;
  sc.classes = 8;
  sc.cases = 200;
  return sc;
}

Outcome desk_learning() {
  const SyntheticConfig sc = desk_corpus();
  const double a = macro(desk_run(sc, desk_model(sc), desk_train(30, 0), 0));
  return {a >= 0.90, fmt("test macro AUC %.3f (need >= 0.90)", a)};
}

Outcome fusion_trend() {
  SyntheticConfig sc;
  sc.classes = 4;
  sc.conjunction_classes = 4;
  sc.multi_scan_rate = 1.0;
  sc.max_scans = 2;
  sc.decoy_rate = 1.0;
  sc.cases = 500;
  sc.height = sc.width = 16;
  sc.depth = 4;
  sc.pattern_scale = 0.375;
  ModelConfig learn = desk_model(sc), pooled = desk_model(sc);
  pooled.fusion.mode = FusionMode::max;
  const double a = macro(desk_run(sc, learn, desk_train(60, 0), 0));
  const double b = macro(desk_run(sc, pooled, desk_train(60, 0), 0));
  return {a - b >= 0.05, fmt("learnable %.3f vs max pooling %.3f, gap %.3f (need >= 0.05)", a, b, a - b)};
}

// Twenty classes on a steep power law: most tail classes are rare
// recombinations of the regions and shapes the head classes cover.
Outcome knowledge_trend() {
  SyntheticConfig sc;
  sc.classes = 20;
  sc.cases = 500;
  sc.exponent = 1.5;
  sc.height = sc.width = 16;
  sc.depth = 4;
  sc.pattern_scale = 0.375;
  double on = 0, off = 0;
  std::string per;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    ModelConfig ke = desk_model(sc), plain = desk_model(sc);
    ke.knowledge = true;
    const double a = macro(desk_run(sc, ke, desk_train(30, seed), seed), "tail");
    const double b = macro(desk_run(sc, plain, desk_train(30, seed), seed), "tail");
    on += a / 3;
    off += b / 3;
    per += fmt(" [%.0f: %.3f/%.3f]", static_cast<double>(seed), a, b);
  }
  return {on >= off, fmt("tail macro AUC KE on %.3f vs off %.3f", on, off) + per};
}

Outcome variant_trend() {
  const SyntheticConfig sc = desk_corpus();
  double mean[3] = {0, 0, 0};
  const EncoderVariant vs[3] = {EncoderVariant::mix, EncoderVariant::resnet, EncoderVariant::vit};
  for (std::uint64_t seed = 0; seed < 3; ++seed)
    for (int v = 0; v < 3; ++v) {
      ModelConfig mc = desk_model(sc);
      mc.encoder.variant = vs[v];
      mean[v] += macro(desk_run(sc, mc, desk_train(30, seed), seed)) / 3;
    }
  return {mean[0] >= mean[1] && mean[0] >= mean[2], fmt("macro AUC mix %.3f, resnet %.3f, vit %.3f", mean[0], mean[1], mean[2])};
}

// ---------------------------------------------------------------- bootstrap

Outcome bootstrap_properties() {
  Rng rng(50);
  int inside = 0;
  bool deterministic = true;
  for (int i = 0; i < 100; ++i) {
    const ClassScores cs = random_instance(rng, 10, 50);
    const auto b = bootstrap_roc(cs);
    const double p = *auc(cs);
    inside += b && b->repeats_used > 0 && p >= b->ci_low && p <= b->ci_high;
    if (i < 3) {
      const auto again = bootstrap_roc(cs);
      deterministic &= again->ci_low == b->ci_low && again->ci_high == b->ci_high && again->median_auc == b->median_auc &&
                       again->band_tpr_low == b->band_tpr_low;
    }
  }
  ClassScores sep{"separated", {}, {}};
  for (int i = 0; i < 50; ++i) {
    sep.scores.push_back(i);
    sep.labels.push_back(i >= 30);
  }
  const auto s = bootstrap_roc(sep);
  const bool degenerate = s && s->ci_low == 1.0 && s->ci_high == 1.0 && s->median_auc == 1.0;
  return {inside >= 95 && degenerate && deterministic,
          fmt("point AUC inside CI on %.0f/100; separated CI [%.3f, %.3f]", inside, s ? s->ci_low : NAN, s ? s->ci_high : NAN) +
              (deterministic ? "; deterministic" : "; NOT deterministic")};
}

// ---------------------------------------------------------------- zero-shot

Outcome zero_shot_union() {
  Rng rng(60);
  std::size_t mismatches = 0, checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int c = 2 + static_cast<int>(rng.index(7));
    const LabelSpace internal = plain_labels(c);
    std::vector<double> th(c);
    for (double& t : th) t = rng.uniform(0.2, 0.8);
    ZeroShotMapping map;
    const int ext = 1 + static_cast<int>(rng.index(4));
    for (int e = 0; e < ext; ++e) {
      std::vector<std::string> members;
      for (int k = 0; k < c; ++k)
        if (rng.bernoulli(0.4)) members.push_back(internal.classes[k]);
      if (members.empty()) members.push_back(internal.classes[rng.index(c)]);
      map["ext" + std::to_string(e)] = members;
    }
    std::vector<std::vector<double>> probs(10, std::vector<double>(c));
    for (auto& row : probs)
      for (double& p : row) p = rng.uniform();
    const auto r = zero_shot_predict(probs, internal, th, map);
    for (std::size_t i = 0; i < probs.size(); ++i)
      for (std::size_t e = 0; e < r.classes.size(); ++e) {
        // truth table: the external class is on iff some member clears its threshold
        int want = 0;
        for (const auto& id : map.at(r.classes[e])) {
          const int k = internal.index_of(id);
          want |= probs[i][k] >= th[k] ? 1 : 0;
        }
        mismatches += r.predictions[i][e] != want;
        ++checked;
      }
  }
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const int c = 2 + static_cast<int>(rng.index(5));
    const LabelSpace internal = plain_labels(c);
    std::vector<double> th(c);
    for (double& t : th) t = rng.uniform(0.2, 0.8);
    ZeroShotMapping map;
    for (const auto& id : internal.classes) map[id] = {id};
    std::vector<std::vector<double>> probs(40, std::vector<double>(c));
    std::vector<std::vector<int>> labels(40, std::vector<int>(c));
    for (int i = 0; i < 40; ++i)
      for (int k = 0; k < c; ++k) {
        labels[i][k] = rng.bernoulli(0.4);
        probs[i][k] = rng.uniform();
      }
    const auto r = zero_shot_predict(probs, internal, th, map);
    const auto got = zero_shot_metrics(r, labels);
    for (std::size_t e = 0; e < r.classes.size(); ++e) {
      const int k = internal.index_of(r.classes[e]);
      ClassScores cs{r.classes[e], {}, {}};
      for (int i = 0; i < 40; ++i) cs.scores.push_back(probs[i][k]), cs.labels.push_back(labels[i][k]);
      const auto want = thresholded_metrics(cs, th[k]);
      worst = std::max({worst, std::abs(got[e].metrics.f1 - want.f1), std::abs(got[e].metrics.mcc - want.mcc),
                        std::abs(got[e].metrics.acc - want.acc)});
    }
  }
  return {mismatches == 0 && worst == 0.0,
          fmt("%.0f/%.0f truth-table mismatches; singleton metric max|d| %.1e", static_cast<double>(mismatches),
              static_cast<double>(checked), worst)};
}

// ----------------------------------------------------------------- Score-CAM

Outcome score_cam_localization() {
  SyntheticConfig sc;
  sc.cases = 300;
  sc.noise = 0;
  sc.height = sc.width = 48;
  sc.pattern_scale = 0.375;
  ModelConfig mc = desk_model(sc);
  mc.encoder.width = 16;
  mc.encoder.norm_blocks = {1};
  mc.encoder.shared_blocks = {1};
  TrainConfig tc = desk_train(20, 0);
  tc.warmup_epochs = 2;
  const SyntheticCorpus syn = generate_synthetic(sc, 0);
  const auto names = display_names(syn.knowledge);
  const auto r = train<float>(syn.corpus, split_corpus(syn.corpus, 0), mc, tc, nullptr, &names);

  SyntheticConfig clean = sc;
  clean.cases = 40;
  clean.multi_scan_rate = 0;
  clean.normal_fraction = 0;
  clean.conjunction_classes = 0;
  const SyntheticCorpus eval = generate_synthetic(clean, 100);
  Preprocessor prep(mc.encoder.geometry);
  double total = 0;
  int n = 0;
  for (const Case& c : eval.corpus.cases) {
    if (n == 20) break;
    const Plant& p = eval.plants.at(c.scans[0].id).at(0);
    const SaliencyMap m = score_cam(r.model, c, c.disorders.at(0), {}, prep);
    total += saliency_mass_in_box(m, p.y0, p.y1, p.x0, p.x1);
    ++n;
  }
  const double mean = total / n;
  return {mean >= 0.5, fmt("mean in-box saliency mass %.3f over %.0f cases (need >= 0.5)", mean, n)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {"metric-oracles", 30, metric_oracles},
      {"gradient-checks", 300, gradient_checks},
      {"structural-invariants", 60, structural_invariants},
      {"desk-learning", 600, desk_learning},
      {"fusion-trend", 900, fusion_trend},
      {"knowledge-trend", 1200, knowledge_trend},
      {"variant-trend", 1800, variant_trend},
      {"bootstrap-ci", 120, bootstrap_properties},
      {"zero-shot-union", 30, zero_shot_union},
      {"score-cam-localization", 300, score_cam_localization},
  };
  std::set<std::string> only(argv + 1, argv + argc);
  for (const auto& name : only)
    if (std::none_of(all.begin(), all.end(), [&](const Criterion& c) { return c.name == name; })) {
      std::fprintf(stderr, "unknown criterion %s\n", name.c_str());
      return 2;
    }
  int failed = 0;
  for (const auto& c : all) {
    if (!only.empty() && !only.count(c.name)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = s <= c.budget_s;
    const bool ok = o.ok && in_time;
    failed += !ok;
    std::printf("%s %-24s %s; %.1f s of %.0f s%s\n", ok ? "PASS" : "FAIL", c.name.c_str(), o.detail.c_str(), s, c.budget_s,
                in_time ? "" : " (over budget)");
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
