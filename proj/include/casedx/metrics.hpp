#pragma once

// Per-class ranking and thresholded metrics, bootstrap ROC intervals and
// head/medium/tail stratified macro reporting. Metric functions return
// std::nullopt where a metric is undefined for the given labels.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "casedx/corpus.hpp"
#include "casedx/rng.hpp"

namespace casedx {

struct ClassScores {
  std::string class_id;
  std::vector<double> scores;
  std::vector<int> labels;

  std::size_t positives() const { return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1)); }
  std::size_t negatives() const { return labels.size() - positives(); }
  void validate() const {
    if (scores.size() != labels.size()) throw ShapeError("class " + class_id + ": scores and labels differ in length");
  }
};

namespace detail {

// Indices sorted by descending score, grouped into runs of equal scores.
inline std::vector<std::pair<std::size_t, std::size_t>> descending_groups(const std::vector<double>& s,
                                                                          std::vector<std::size_t>& order) {
  order.resize(s.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  std::vector<std::pair<std::size_t, std::size_t>> groups;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i + 1;
    while (j < order.size() && s[order[j]] == s[order[i]]) ++j;
    groups.emplace_back(i, j);
    i = j;
  }
  return groups;
}

inline double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (v[hi] - v[lo]) * (pos - static_cast<double>(lo));
}

}  // namespace detail

// Probability that a random positive outscores a random negative, ties
// counting one half; computed from midranks.
inline std::optional<double> auc(const ClassScores& cs) {
  cs.validate();
  const std::size_t P = cs.positives(), N = cs.negatives();
  if (P == 0 || N == 0) return std::nullopt;
  std::vector<std::size_t> order(cs.scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return cs.scores[a] < cs.scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i + 1;
    while (j < order.size() && cs.scores[order[j]] == cs.scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (cs.labels[order[k]] == 1) rank_sum += midrank;
    i = j;
  }
  const double p = static_cast<double>(P), n = static_cast<double>(N);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

// Step integral of precision over recall, one step per distinct score.
inline std::optional<double> average_precision(const ClassScores& cs) {
  cs.validate();
  const std::size_t P = cs.positives();
  if (P == 0) return std::nullopt;
  std::vector<std::size_t> order;
  const auto groups = detail::descending_groups(cs.scores, order);
  double ap = 0.0, prev_recall = 0.0;
  std::size_t tp = 0, seen = 0;
  for (auto [b, e] : groups) {
    for (std::size_t k = b; k < e; ++k) tp += cs.labels[order[k]] == 1;
    seen = e;
    const double recall = static_cast<double>(tp) / static_cast<double>(P);
    const double precision = static_cast<double>(tp) / static_cast<double>(seen);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

// A case is predicted positive when its score is at least the threshold.
inline Confusion confusion(const ClassScores& cs, double threshold) {
  cs.validate();
  Confusion c;
  for (std::size_t i = 0; i < cs.scores.size(); ++i) {
    const bool pred = cs.scores[i] >= threshold;
    const bool pos = cs.labels[i] == 1;
    if (pred && pos) ++c.tp;
    else if (pred) ++c.fp;
    else if (pos) ++c.fn;
    else ++c.tn;
  }
  return c;
}

struct ThresholdedMetrics {
  double f1 = 0.0;
  double mcc = 0.0;
  double acc = 0.0;
  bool mcc_degenerate = false;  // some confusion-matrix marginal is zero; mcc reported as 0
};

inline ThresholdedMetrics thresholded_metrics(const Confusion& c) {
  ThresholdedMetrics m;
  const double tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp);
  const double tn = static_cast<double>(c.tn), fn = static_cast<double>(c.fn);
  const double f1_den = 2 * tp + fp + fn;
  m.f1 = f1_den > 0 ? 2 * tp / f1_den : 0.0;
  const double total = tp + fp + tn + fn;
  m.acc = total > 0 ? (tp + tn) / total : 0.0;
  const double den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
  if (den == 0.0) {
    m.mcc_degenerate = true;
    m.mcc = 0.0;
  } else {
    m.mcc = (tn * tp - fn * fp) / std::sqrt(den);
  }
  return m;
}

inline ThresholdedMetrics thresholded_metrics(const ClassScores& cs, double threshold) {
  return thresholded_metrics(confusion(cs, threshold));
}

struct RocPoint {
  double fpr, tpr, threshold;
};

// Operating points from "predict nothing" down through every distinct score.
inline std::vector<RocPoint> roc_curve(const ClassScores& cs) {
  cs.validate();
  const double P = static_cast<double>(cs.positives()), N = static_cast<double>(cs.negatives());
  std::vector<std::size_t> order;
  const auto groups = detail::descending_groups(cs.scores, order);
  std::vector<RocPoint> pts{{0.0, 0.0, std::numeric_limits<double>::infinity()}};
  std::size_t tp = 0, fp = 0;
  for (auto [b, e] : groups) {
    for (std::size_t k = b; k < e; ++k) (cs.labels[order[k]] == 1 ? tp : fp)++;
    pts.push_back({N > 0 ? fp / N : 0.0, P > 0 ? tp / P : 0.0, cs.scores[order[b]]});
  }
  return pts;
}

inline double tpr_at_fpr(const std::vector<RocPoint>& roc, double fpr) {
  double best = 0.0;
  for (const auto& p : roc)
    if (p.fpr <= fpr + 1e-12) best = std::max(best, p.tpr);
  return best;
}

// Highest recall among operating points whose false-positive rate does not
// exceed the target.
inline std::optional<double> recall_at_fpr(const ClassScores& cs, double fpr) {
  if (cs.negatives() == 0 || cs.positives() == 0) return std::nullopt;
  return tpr_at_fpr(roc_curve(cs), fpr);
}

inline constexpr std::array<double, 3> kFprTargets = {0.01, 0.05, 0.1};

struct ThresholdChoice {
  double threshold = 0.5;
  double f1 = 0.0;
  bool fallback = false;
};

// Threshold among the observed scores maximizing F1; ties go to the larger
// threshold. Classes lacking either label value fall back to 0.5.
inline ThresholdChoice select_threshold(const ClassScores& cs) {
  cs.validate();
  ThresholdChoice best;
  if (cs.positives() == 0 || cs.negatives() == 0) {
    best.fallback = true;
    best.f1 = thresholded_metrics(cs, 0.5).f1;
    return best;
  }
  std::vector<std::size_t> order;
  const auto groups = detail::descending_groups(cs.scores, order);
  const double P = static_cast<double>(cs.positives());
  std::size_t tp = 0, predicted = 0;
  best.f1 = -1.0;
  for (auto [b, e] : groups) {
    for (std::size_t k = b; k < e; ++k) tp += cs.labels[order[k]] == 1;
    predicted = e;
    const double f1 = 2.0 * static_cast<double>(tp) / (static_cast<double>(predicted) + P);
    if (f1 > best.f1) {  // groups visit thresholds in decreasing order
      best.f1 = f1;
      best.threshold = cs.scores[order[b]];
    }
  }
  return best;
}

struct BootstrapConfig {
  int samples = 1000;
  int repeats = 1000;
  int max_retries = 100;
  int band_points = 51;
  std::uint64_t seed = 0;
};

struct BootstrapResult {
  double median_auc = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  int repeats_used = 0;
  int redraws = 0;
  std::vector<double> band_fpr, band_tpr_median, band_tpr_low, band_tpr_high;
  std::string note;
};

// Resamples cases with replacement; degenerate resamples (one label value)
// are redrawn up to max_retries times each before the repeat is dropped.
inline std::optional<BootstrapResult> bootstrap_roc(const ClassScores& cs, const BootstrapConfig& cfg = {}) {
  cs.validate();
  if (cs.positives() == 0 || cs.negatives() == 0) return std::nullopt;
  Rng rng(derive_seed(cfg.seed, cs.class_id, 0xb007));
  const std::size_t n = cs.scores.size();
  BootstrapResult out;
  std::vector<double> aucs;
  const int bp = std::max(2, cfg.band_points);
  std::vector<std::vector<double>> band(bp);
  ClassScores sample{cs.class_id, std::vector<double>(cfg.samples), std::vector<int>(cfg.samples)};
  int dropped = 0;
  for (int r = 0; r < cfg.repeats; ++r) {
    bool ok = false;
    for (int attempt = 0; attempt <= cfg.max_retries && !ok; ++attempt) {
      if (attempt > 0) ++out.redraws;
      std::size_t pos = 0;
      for (int i = 0; i < cfg.samples; ++i) {
        const std::size_t k = rng.index(n);
        sample.scores[i] = cs.scores[k];
        sample.labels[i] = cs.labels[k];
        pos += cs.labels[k] == 1;
      }
      ok = pos > 0 && pos < static_cast<std::size_t>(cfg.samples);
    }
    if (!ok) {
      ++dropped;
      continue;
    }
    aucs.push_back(*auc(sample));
    const auto roc = roc_curve(sample);
    for (int i = 0; i < bp; ++i) band[i].push_back(tpr_at_fpr(roc, static_cast<double>(i) / (bp - 1)));
  }
  if (aucs.empty()) {
    out.note = "every bootstrap resample was degenerate";
    return out;
  }
  out.repeats_used = static_cast<int>(aucs.size());
  out.median_auc = detail::percentile(aucs, 0.5);
  out.ci_low = detail::percentile(aucs, 0.025);
  out.ci_high = detail::percentile(aucs, 0.975);
  for (int i = 0; i < bp; ++i) {
    out.band_fpr.push_back(static_cast<double>(i) / (bp - 1));
    out.band_tpr_median.push_back(detail::percentile(band[i], 0.5));
    out.band_tpr_low.push_back(detail::percentile(band[i], 0.025));
    out.band_tpr_high.push_back(detail::percentile(band[i], 0.975));
  }
  if (dropped) out.note = std::to_string(dropped) + " degenerate repeats skipped";
  return out;
}

// ---------------------------------------------------------------- reporting

struct ClassResult {
  std::string class_id;
  std::string name;
  Stratum stratum = Stratum::tail;
  std::size_t positives = 0, negatives = 0;
  std::optional<double> auc, ap;
  std::array<std::optional<double>, 3> recall_at_fpr;
  double threshold = 0.5;
  ThresholdedMetrics thresholded;
  std::optional<BootstrapResult> bootstrap;
  std::vector<RocPoint> roc;
};

inline ClassResult evaluate_class(const ClassScores& cs, double threshold, const BootstrapConfig* boot = nullptr) {
  ClassResult r;
  r.class_id = cs.class_id;
  r.positives = cs.positives();
  r.negatives = cs.negatives();
  r.auc = auc(cs);
  r.ap = average_precision(cs);
  for (std::size_t i = 0; i < kFprTargets.size(); ++i) r.recall_at_fpr[i] = recall_at_fpr(cs, kFprTargets[i]);
  r.threshold = threshold;
  r.thresholded = thresholded_metrics(cs, threshold);
  if (boot) r.bootstrap = bootstrap_roc(cs, *boot);
  if (r.auc) r.roc = roc_curve(cs);
  return r;
}

inline constexpr std::array<std::string_view, 8> kMetricNames = {"auc", "ap", "f1", "mcc", "acc",
                                                                 "recall@fpr0.01", "recall@fpr0.05", "recall@fpr0.1"};

inline std::array<std::optional<double>, 8> metric_values(const ClassResult& r) {
  return {r.auc, r.ap, r.thresholded.f1, r.thresholded.mcc, r.thresholded.acc,
          r.recall_at_fpr[0], r.recall_at_fpr[1], r.recall_at_fpr[2]};
}

struct StratumSummary {
  std::string name;
  std::size_t classes = 0;
  std::map<std::string, double> macro;          // metric -> arithmetic mean over defined classes
  std::map<std::string, std::size_t> excluded;  // metric -> classes with the metric undefined
  std::optional<double> median_auc, ci_low, ci_high;
};

struct MetricsReport {
  std::vector<ClassResult> classes;
  std::vector<StratumSummary> strata;  // head, medium, tail, all (empty strata omitted)
  std::vector<std::string> notes;

  const StratumSummary* stratum(std::string_view name) const {
    for (const auto& s : strata)
      if (s.name == name) return &s;
    return nullptr;
  }
};

inline StratumSummary summarize(const std::string& name, const std::vector<const ClassResult*>& members) {
  StratumSummary s;
  s.name = name;
  s.classes = members.size();
  for (std::size_t m = 0; m < kMetricNames.size(); ++m) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const ClassResult* r : members)
      if (auto v = metric_values(*r)[m]) {
        sum += *v;
        ++n;
      }
    const std::string key(kMetricNames[m]);
    s.excluded[key] = members.size() - n;
    if (n) s.macro[key] = sum / static_cast<double>(n);
  }
  double med = 0, lo = 0, hi = 0;
  std::size_t nb = 0;
  for (const ClassResult* r : members)
    if (r->bootstrap && r->bootstrap->repeats_used > 0) {
      med += r->bootstrap->median_auc;
      lo += r->bootstrap->ci_low;
      hi += r->bootstrap->ci_high;
      ++nb;
    }
  if (nb) {
    s.median_auc = med / nb;
    s.ci_low = lo / nb;
    s.ci_high = hi / nb;
  }
  return s;
}

// Assigns strata from the label space and computes macro means per stratum.
inline MetricsReport stratified_report(std::vector<ClassResult> results, const LabelSpace& labels) {
  MetricsReport rep;
  for (auto& r : results) {
    const int i = labels.index_of(r.class_id);
    if (i < 0) throw InvalidArgument("class " + r.class_id + " is not in the label space");
    r.stratum = labels.category[i];
    r.name = labels.names[i];
  }
  rep.classes = std::move(results);
  for (Stratum st : {Stratum::head, Stratum::medium, Stratum::tail}) {
    std::vector<const ClassResult*> members;
    for (const auto& r : rep.classes)
      if (r.stratum == st) members.push_back(&r);
    if (members.empty()) {
      rep.notes.push_back(std::string(to_string(st)) + " stratum is empty and omitted");
      continue;
    }
    rep.strata.push_back(summarize(std::string(to_string(st)), members));
  }
  std::vector<const ClassResult*> all;
  for (const auto& r : rep.classes) all.push_back(&r);
  rep.strata.push_back(summarize("all", all));
  for (const auto& s : rep.strata)
    if (s.excluded.at("auc") > 0)
      rep.notes.push_back(s.name + ": " + std::to_string(s.excluded.at("auc")) +
                          " classes with undefined auc excluded from the macro average");
  return rep;
}

inline std::optional<double> macro_auc(const MetricsReport& rep, std::string_view stratum = "all") {
  const StratumSummary* s = rep.stratum(stratum);
  if (!s) return std::nullopt;
  auto it = s->macro.find("auc");
  if (it == s->macro.end()) return std::nullopt;
  return it->second;
}

}  // namespace casedx
