#include <gtest/gtest.h>

#include "support.hpp"

using namespace casedx;
using casedx::testing::random_instance;

namespace {

double concordance(const ClassScores& cs) {
  double num = 0, pairs = 0;
  for (std::size_t i = 0; i < cs.scores.size(); ++i)
    for (std::size_t j = 0; j < cs.scores.size(); ++j)
      if (cs.labels[i] == 1 && cs.labels[j] == 0) {
        pairs += 1;
        num += cs.scores[i] > cs.scores[j] ? 1.0 : cs.scores[i] == cs.scores[j] ? 0.5 : 0.0;
      }
  return num / pairs;
}

std::vector<double> distinct_desc(const ClassScores& cs) {
  std::vector<double> u = cs.scores;
  std::sort(u.begin(), u.end(), std::greater<>());
  u.erase(std::unique(u.begin(), u.end()), u.end());
  return u;
}

Confusion count(const ClassScores& cs, double t) {
  Confusion c;
  for (std::size_t i = 0; i < cs.scores.size(); ++i) {
    const bool pred = cs.scores[i] >= t, pos = cs.labels[i] == 1;
    (pred ? (pos ? c.tp : c.fp) : (pos ? c.fn : c.tn))++;
  }
  return c;
}

LabelSpace space(std::vector<std::string> ids, std::vector<Stratum> cat) {
  LabelSpace ls;
  ls.names = ids;
  ls.classes = std::move(ids);
  ls.counts.assign(ls.classes.size(), 1);
  ls.category = std::move(cat);
  return ls;
}

}  // namespace

TEST(Auc, Examples) {
  EXPECT_DOUBLE_EQ(*auc({"c", {0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}}), 0.75);
  EXPECT_DOUBLE_EQ(*auc({"c", {0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}}), 1.0);
  EXPECT_DOUBLE_EQ(*auc({"c", {0.1, 0.2, 0.8, 0.9}, {1, 1, 0, 0}}), 0.0);
  EXPECT_FALSE(auc({"c", {0.1, 0.2}, {1, 1}}).has_value());
  EXPECT_THROW(auc({"c", {0.1, 0.2}, {1}}), ShapeError);
}

TEST(Auc, MatchesPairwiseConcordance) {
  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    const ClassScores cs = random_instance(rng);
    EXPECT_NEAR(*auc(cs), concordance(cs), 1e-9);
  }
}

TEST(Auc, InvariantUnderMonotoneTransform) {
  Rng rng(2);
  for (int t = 0; t < 100; ++t) {
    ClassScores cs = random_instance(rng);
    const double a = *auc(cs);
    for (double& s : cs.scores) s = std::exp(3 * s) - 7;
    EXPECT_NEAR(*auc(cs), a, 1e-12);
  }
}

TEST(AveragePrecision, Examples) {
  EXPECT_DOUBLE_EQ(*average_precision({"c", {0.9, 0.3, 0.2, 0.1}, {1, 0, 0, 0}}), 1.0);
  EXPECT_DOUBLE_EQ(*average_precision({"c", {0.9, 0.3, 0.2, 0.1}, {0, 0, 0, 1}}), 0.25);
  EXPECT_DOUBLE_EQ(*average_precision({"c", {0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0}}), 0.5);
  EXPECT_FALSE(average_precision({"c", {0.5, 0.4}, {0, 0}}).has_value());
}

TEST(AveragePrecision, MatchesThresholdSweepAndBounds) {
  Rng rng(3);
  for (int t = 0; t < 200; ++t) {
    const ClassScores cs = random_instance(rng);
    double ref = 0, prev = 0;
    for (double th : distinct_desc(cs)) {
      const Confusion c = count(cs, th);
      const double recall = static_cast<double>(c.tp) / cs.positives();
      ref += (recall - prev) * static_cast<double>(c.tp) / (c.tp + c.fp);
      prev = recall;
    }
    const double ap = *average_precision(cs);
    EXPECT_NEAR(ap, ref, 1e-9);
    // lower bound: every positive ranked below every negative
    const double P = cs.positives(), N = cs.negatives();
    double floor = 0;
    for (int i = 1; i <= P; ++i) floor += i / (N + i) / P;
    EXPECT_GE(ap, floor - 1e-12);
    EXPECT_LE(ap, 1.0 + 1e-12);
  }
}

TEST(Thresholded, Examples) {
  const auto perfect = thresholded_metrics(Confusion{1, 0, 1, 0});
  EXPECT_EQ(perfect.mcc, 1.0);
  EXPECT_EQ(perfect.f1, 1.0);
  EXPECT_EQ(perfect.acc, 1.0);
  EXPECT_FALSE(perfect.mcc_degenerate);

  const auto all_pos = thresholded_metrics({"c", {0.9, 0.9, 0.9, 0.9}, {1, 0, 1, 0}}, 0.5);
  EXPECT_DOUBLE_EQ(all_pos.acc, 0.5);
  EXPECT_DOUBLE_EQ(all_pos.f1, 2.0 / 3.0);
  EXPECT_EQ(all_pos.mcc, 0.0);
  EXPECT_TRUE(all_pos.mcc_degenerate);

  // a score equal to the threshold counts as positive
  EXPECT_EQ(confusion({"c", {0.5}, {1}}, 0.5).tp, 1u);
}

TEST(Thresholded, IndependentPredictionsGiveSmallMcc) {
  Rng rng(4);
  ClassScores cs{"c", {}, {}};
  for (int i = 0; i < 1000; ++i) {
    cs.labels.push_back(i % 2);
    cs.scores.push_back(rng.uniform());
  }
  EXPECT_LT(std::abs(thresholded_metrics(cs, 0.5).mcc), 0.1);
}

TEST(Thresholded, MatchesConfusionMatrixFormulas) {
  Rng rng(5);
  for (int t = 0; t < 200; ++t) {
    const ClassScores cs = random_instance(rng);
    const double th = rng.uniform();
    const Confusion c = count(cs, th);
    const double tp = c.tp, fp = c.fp, tn = c.tn, fn = c.fn;
    const auto m = thresholded_metrics(cs, th);
    EXPECT_NEAR(m.acc, (tp + tn) / (tp + tn + fp + fn), 1e-9);
    EXPECT_NEAR(m.f1, tp > 0 ? 2 * tp / (2 * tp + fp + fn) : 0.0, 1e-9);
    const double den = std::sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn));
    EXPECT_NEAR(m.mcc, den > 0 ? (tp * tn - fp * fn) / den : 0.0, 1e-9);
  }
}

TEST(Thresholded, MccSymmetricUnderLabelSwap) {
  Rng rng(6);
  for (int t = 0; t < 100; ++t) {
    ClassScores cs = random_instance(rng);
    const double th = rng.uniform();
    const double a = thresholded_metrics(cs, th).mcc;
    // flip labels and predictions: score s >= th becomes -s > -th
    Confusion c = count(cs, th);
    std::swap(c.tp, c.tn);
    std::swap(c.fp, c.fn);
    EXPECT_NEAR(thresholded_metrics(c).mcc, a, 1e-12);
  }
}

TEST(RecallAtFpr, Examples) {
  const ClassScores sep{"c", {0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}};
  for (double f : kFprTargets) EXPECT_EQ(*recall_at_fpr(sep, f), 1.0);
  // one negative: any threshold admitting it has FPR 1
  const ClassScores one{"c", {0.9, 0.7, 0.6, 0.3}, {1, 0, 1, 1}};
  EXPECT_NEAR(*recall_at_fpr(one, 0.01), 1.0 / 3.0, 1e-15);
  EXPECT_FALSE(recall_at_fpr({"c", {0.1}, {1}}, 0.05).has_value());
}

TEST(RecallAtFpr, MatchesExhaustiveSweepAndIsMonotone) {
  Rng rng(7);
  for (int t = 0; t < 200; ++t) {
    const ClassScores cs = random_instance(rng, 2, 100);
    std::vector<double> got;
    for (double target : kFprTargets) {
      double best = 0;
      for (double th : cs.scores) {
        const Confusion c = count(cs, th);
        if (static_cast<double>(c.fp) / cs.negatives() <= target) best = std::max(best, static_cast<double>(c.tp) / cs.positives());
      }
      got.push_back(*recall_at_fpr(cs, target));
      EXPECT_NEAR(got.back(), best, 1e-9);
    }
    EXPECT_TRUE(std::is_sorted(got.begin(), got.end()));
  }
}

TEST(Bootstrap, PerfectSeparationGivesDegenerateInterval) {
  ClassScores cs{"c", {}, {}};
  for (int i = 0; i < 40; ++i) {
    cs.scores.push_back(i);
    cs.labels.push_back(i >= 25);
  }
  BootstrapConfig cfg;
  cfg.repeats = 200;
  const auto b = bootstrap_roc(cs, cfg);
  ASSERT_TRUE(b);
  EXPECT_EQ(b->median_auc, 1.0);
  EXPECT_EQ(b->ci_low, 1.0);
  EXPECT_EQ(b->ci_high, 1.0);
}

TEST(Bootstrap, DeterministicAndBracketsPointEstimate) {
  Rng rng(8);
  BootstrapConfig cfg;
  cfg.repeats = 200;
  cfg.samples = 200;
  int inside = 0;
  for (int t = 0; t < 20; ++t) {
    const ClassScores cs = random_instance(rng, 20, 60);
    const auto a = bootstrap_roc(cs, cfg), b = bootstrap_roc(cs, cfg);
    EXPECT_EQ(a->ci_low, b->ci_low);
    EXPECT_EQ(a->ci_high, b->ci_high);
    EXPECT_EQ(a->band_tpr_median, b->band_tpr_median);
    EXPECT_LE(a->ci_low, a->median_auc);
    EXPECT_LE(a->median_auc, a->ci_high);
    for (std::size_t i = 0; i < a->band_fpr.size(); ++i) {
      EXPECT_LE(a->band_tpr_low[i], a->band_tpr_median[i]);
      EXPECT_LE(a->band_tpr_median[i], a->band_tpr_high[i]);
    }
    const double p = *auc(cs);
    inside += p >= a->ci_low && p <= a->ci_high;
  }
  EXPECT_GE(inside, 18);
}

TEST(Bootstrap, SingleLabelIsUndefined) { EXPECT_FALSE(bootstrap_roc({"c", {0.1, 0.2}, {0, 0}})); }

TEST(Stratified, OneClassPerStratum) {
  const LabelSpace ls = space({"h", "m", "t"}, {Stratum::head, Stratum::medium, Stratum::tail});
  std::vector<ClassResult> rs;
  rs.push_back(evaluate_class({"h", {0.1, 0.9, 0.8, 0.2}, {0, 1, 1, 0}}, 0.5));
  rs.push_back(evaluate_class({"m", {0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}}, 0.5));
  rs.push_back(evaluate_class({"t", {0.9, 0.3, 0.2, 0.1}, {0, 0, 0, 1}}, 0.5));
  const auto rep = stratified_report(rs, ls);
  EXPECT_DOUBLE_EQ(*macro_auc(rep, "head"), 1.0);
  EXPECT_DOUBLE_EQ(*macro_auc(rep, "medium"), 0.75);
  EXPECT_DOUBLE_EQ(*macro_auc(rep, "tail"), 0.0);
  EXPECT_DOUBLE_EQ(rep.stratum("medium")->macro.at("ap"), *rs[1].ap);
}

TEST(Stratified, IdenticalClassesGiveThatValue) {
  const LabelSpace ls = space({"a", "b", "c", "d"}, {Stratum::head, Stratum::head, Stratum::tail, Stratum::tail});
  std::vector<ClassResult> rs;
  for (const auto& id : ls.classes) rs.push_back(evaluate_class({id, {0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}}, 0.37));
  const auto rep = stratified_report(rs, ls);
  for (const auto& s : rep.strata)
    for (const auto& [k, v] : s.macro) EXPECT_DOUBLE_EQ(v, metric_values(rs[0])[std::find(kMetricNames.begin(), kMetricNames.end(), k) - kMetricNames.begin()].value());
  EXPECT_EQ(rep.stratum("medium"), nullptr);
  EXPECT_FALSE(rep.notes.empty());
}

TEST(Stratified, HandBuiltThreeClassInstance) {
  const LabelSpace ls = space({"a", "b", "c"}, {Stratum::head, Stratum::head, Stratum::tail});
  std::vector<ClassResult> rs;
  rs.push_back(evaluate_class({"a", {0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}}, 0.5));  // auc .75 f1 2/3 acc .75
  rs.push_back(evaluate_class({"b", {0.2, 0.6, 0.7, 0.9}, {0, 1, 0, 1}}, 0.5));   // auc .75 f1 .8 acc .75
  rs.push_back(evaluate_class({"c", {0.3, 0.6}, {0, 0}}, 0.5));                   // auc undefined, acc .5
  const auto rep = stratified_report(rs, ls);
  const auto* head = rep.stratum("head");
  EXPECT_DOUBLE_EQ(head->macro.at("auc"), 0.75);
  EXPECT_NEAR(head->macro.at("f1"), (2.0 / 3.0 + 0.8) / 2, 1e-15);
  EXPECT_DOUBLE_EQ(head->macro.at("acc"), 0.75);
  const auto* all = rep.stratum("all");
  EXPECT_DOUBLE_EQ(all->macro.at("auc"), 0.75);
  EXPECT_EQ(all->excluded.at("auc"), 1u);
  EXPECT_NEAR(all->macro.at("acc"), (0.75 + 0.75 + 0.5) / 3, 1e-15);
  EXPECT_FALSE(rep.stratum("tail")->macro.count("auc"));
}

TEST(Ranges, HoldOnRandomInstances) {
  Rng rng(9);
  for (int t = 0; t < 200; ++t) {
    const ClassScores cs = random_instance(rng);
    const double a = *auc(cs);
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
    const auto m = thresholded_metrics(cs, rng.uniform());
    EXPECT_GE(m.mcc, -1.0 - 1e-12);
    EXPECT_LE(m.mcc, 1.0 + 1e-12);
    const auto roc = roc_curve(cs);
    EXPECT_EQ(roc.back().fpr, 1.0);
    EXPECT_EQ(roc.back().tpr, 1.0);
  }
}
