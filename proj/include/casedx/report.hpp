#pragma once

// Report artifacts: metrics JSON (percentages), ROC point series, case
// predictions, and SVG plots of ROC curves with bootstrap bands and of
// per-class probability distributions.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "casedx/corpus.hpp"
#include "casedx/metrics.hpp"

namespace casedx {

namespace detail {

inline json optional_percent(const std::optional<double>& v) { return v ? json(100.0 * *v) : json(nullptr); }

inline std::string fmt(double v, int digits = 2) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace detail

// Every metric is written in percent; undefined metrics are null.
inline json to_json(const MetricsReport& rep) {
  json classes = json::array();
  for (const auto& r : rep.classes) {
    json m = json::object();
    const auto vals = metric_values(r);
    for (std::size_t i = 0; i < kMetricNames.size(); ++i) m[std::string(kMetricNames[i])] = detail::optional_percent(vals[i]);
    json c{{"id", r.class_id},        {"name", r.name},           {"stratum", to_string(r.stratum)},
           {"positives", r.positives}, {"negatives", r.negatives}, {"threshold", r.threshold},
           {"mcc_degenerate", r.thresholded.mcc_degenerate},      {"metrics", m}};
    if (r.bootstrap) {
      const auto& b = *r.bootstrap;
      c["bootstrap"] = {{"median_auc", 100.0 * b.median_auc}, {"ci_low", 100.0 * b.ci_low},
                        {"ci_high", 100.0 * b.ci_high},       {"repeats_used", b.repeats_used},
                        {"redraws", b.redraws},               {"note", b.note}};
    }
    classes.push_back(std::move(c));
  }
  json strata = json::array();
  for (const auto& s : rep.strata) {
    json macro = json::object();
    for (const auto& [k, v] : s.macro) macro[k] = 100.0 * v;
    json st{{"name", s.name}, {"classes", s.classes}, {"macro", macro}, {"excluded", s.excluded}};
    if (s.median_auc)
      st["bootstrap"] = {{"median_auc", 100.0 * *s.median_auc}, {"ci_low", 100.0 * *s.ci_low}, {"ci_high", 100.0 * *s.ci_high}};
    strata.push_back(std::move(st));
  }
  return {{"units", "percent"}, {"classes", classes}, {"strata", strata}, {"notes", rep.notes}};
}

// ROC points and bootstrap band per class, as fractions.
inline json roc_series_json(const MetricsReport& rep) {
  json out = json::array();
  for (const auto& r : rep.classes) {
    json c{{"id", r.class_id}, {"fpr", json::array()}, {"tpr", json::array()}, {"threshold", json::array()}};
    for (const auto& p : r.roc) {
      c["fpr"].push_back(p.fpr);
      c["tpr"].push_back(p.tpr);
      c["threshold"].push_back(std::isfinite(p.threshold) ? json(p.threshold) : json(nullptr));
    }
    if (r.auc) c["auc"] = *r.auc;
    if (r.bootstrap && r.bootstrap->repeats_used > 0) {
      const auto& b = *r.bootstrap;
      c["band"] = {{"fpr", b.band_fpr},       {"tpr_median", b.band_tpr_median}, {"tpr_low", b.band_tpr_low},
                   {"tpr_high", b.band_tpr_high}, {"ci_low", b.ci_low},          {"ci_high", b.ci_high}};
    }
    out.push_back(std::move(c));
  }
  return out;
}

struct CasePrediction {
  std::string case_id;
  std::optional<Anatomy> anatomy;
  std::vector<int> labels;     // label-space order
  std::vector<double> probs;
};

struct PredictionSet {
  std::vector<std::string> classes;
  std::vector<CasePrediction> cases;
};

inline json to_json(const PredictionSet& p) {
  json cases = json::array();
  for (const auto& c : p.cases) {
    json j{{"case_id", c.case_id}, {"labels", c.labels}, {"probs", c.probs}};
    if (c.anatomy) j["anatomy"] = to_string(*c.anatomy);
    cases.push_back(std::move(j));
  }
  return {{"classes", p.classes}, {"cases", cases}};
}

inline PredictionSet prediction_set_from_json(const json& j) {
  PredictionSet p;
  p.classes = j.at("classes").get<std::vector<std::string>>();
  for (const auto& c : j.at("cases")) {
    CasePrediction cp;
    cp.case_id = c.at("case_id").get<std::string>();
    if (c.contains("anatomy")) cp.anatomy = parse_anatomy(c.at("anatomy").get<std::string>());
    cp.labels = c.at("labels").get<std::vector<int>>();
    cp.probs = c.at("probs").get<std::vector<double>>();
    if (cp.labels.size() != p.classes.size() || cp.probs.size() != p.classes.size())
      throw DataError("prediction record " + cp.case_id + " does not match the class list");
    p.cases.push_back(std::move(cp));
  }
  return p;
}

// ---------------------------------------------------------------- plots

struct ProbabilityGroups {
  std::vector<double> positive, intra_negative, inter_negative, negative;
  std::optional<Anatomy> anatomy;  // most frequent anatomy among positives
};

// Negatives split by whether they share the class's dominant anatomy. When
// no case carries an anatomy tag every negative lands in `negative`.
inline ProbabilityGroups probability_groups(const PredictionSet& p, std::size_t k) {
  ProbabilityGroups g;
  std::map<Anatomy, int> freq;
  for (const auto& c : p.cases)
    if (c.labels[k] == 1 && c.anatomy) ++freq[*c.anatomy];
  if (!freq.empty())
    g.anatomy = std::max_element(freq.begin(), freq.end(), [](const auto& a, const auto& b) { return a.second < b.second; })->first;
  for (const auto& c : p.cases) {
    const double v = c.probs[k];
    if (c.labels[k] == 1) {
      g.positive.push_back(v);
    } else if (g.anatomy && c.anatomy) {
      (*c.anatomy == *g.anatomy ? g.intra_negative : g.inter_negative).push_back(v);
    } else {
      g.negative.push_back(v);
    }
  }
  return g;
}

namespace detail {

struct Frame {
  double left = 60, top = 40, size = 320;
  double x(double v) const { return left + v * size; }
  double y(double v) const { return top + (1.0 - v) * size; }
};

inline void axes(std::ostringstream& s, const Frame& f, const std::string& xlabel, const std::string& ylabel) {
  s << "<rect x=\"" << f.left << "\" y=\"" << f.top << "\" width=\"" << f.size << "\" height=\"" << f.size
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = i / 4.0;
    s << "<text x=\"" << f.x(v) << "\" y=\"" << f.top + f.size + 16 << "\" font-size=\"11\" text-anchor=\"middle\">"
      << fmt(v, 2) << "</text>\n";
    s << "<text x=\"" << f.left - 6 << "\" y=\"" << f.y(v) + 4 << "\" font-size=\"11\" text-anchor=\"end\">" << fmt(v, 2)
      << "</text>\n";
  }
  s << "<text x=\"" << f.x(0.5) << "\" y=\"" << f.top + f.size + 34 << "\" font-size=\"12\" text-anchor=\"middle\">"
    << xlabel << "</text>\n";
  s << "<text x=\"16\" y=\"" << f.y(0.5) << "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << f.y(0.5)
    << ")\">" << ylabel << "</text>\n";
}

inline std::string header(double w, double h) {
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w << ' '
    << h << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  return s.str();
}

}  // namespace detail

// ROC curve; when a bootstrap band exists it is shaded between the low and
// high TPR percentiles and the AUC CI is printed in the title.
inline std::string roc_svg(const ClassResult& r) {
  const detail::Frame f;
  std::ostringstream s;
  s << detail::header(420, 410);
  std::string title = detail::xml_escape(r.name.empty() ? r.class_id : r.name);
  if (r.auc) title += "  AUC " + detail::fmt(100.0 * *r.auc);
  if (r.bootstrap && r.bootstrap->repeats_used > 0)
    title += " (95% CI " + detail::fmt(100.0 * r.bootstrap->ci_low) + "-" + detail::fmt(100.0 * r.bootstrap->ci_high) + ")";
  s << "<text x=\"210\" y=\"22\" font-size=\"13\" text-anchor=\"middle\">" << title << "</text>\n";
  if (r.bootstrap && r.bootstrap->repeats_used > 0) {
    const auto& b = *r.bootstrap;
    s << "<polygon class=\"ci-band\" fill=\"#1f77b4\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
    for (std::size_t i = 0; i < b.band_fpr.size(); ++i) s << f.x(b.band_fpr[i]) << ',' << f.y(b.band_tpr_high[i]) << ' ';
    for (std::size_t i = b.band_fpr.size(); i-- > 0;) s << f.x(b.band_fpr[i]) << ',' << f.y(b.band_tpr_low[i]) << ' ';
    s << "\"/>\n";
  }
  s << "<line x1=\"" << f.x(0) << "\" y1=\"" << f.y(0) << "\" x2=\"" << f.x(1) << "\" y2=\"" << f.y(1)
    << "\" stroke=\"gray\" stroke-dasharray=\"4 4\"/>\n";
  if (!r.roc.empty()) {
    s << "<polyline class=\"roc\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
    for (const auto& p : r.roc) s << f.x(p.fpr) << ',' << f.y(p.tpr) << ' ';
    s << "\"/>\n";
  } else {
    s << "<text x=\"210\" y=\"200\" font-size=\"12\" text-anchor=\"middle\">ROC undefined (single label value)</text>\n";
  }
  detail::axes(s, f, "False positive rate", "True positive rate");
  s << "</svg>\n";
  return s.str();
}

// Normalized histograms (bins over [0, 1]) of the predicted probability for
// positives and the negative groups.
inline std::string distribution_svg(const std::string& title, const ProbabilityGroups& g, int bins = 20) {
  const detail::Frame f;
  struct Series {
    const std::vector<double>* v;
    const char* label;
    const char* colour;
  };
  const Series series[] = {{&g.positive, "positive", "#d62728"},
                           {&g.intra_negative, "intra-anatomy negative", "#1f77b4"},
                           {&g.inter_negative, "inter-anatomy negative", "#2ca02c"},
                           {&g.negative, "negative", "#7f7f7f"}};
  std::vector<std::vector<double>> hist;
  double peak = 0.0;
  for (const auto& se : series) {
    std::vector<double> h(bins, 0.0);
    for (double v : *se.v) h[std::min(bins - 1, std::max(0, static_cast<int>(v * bins)))] += 1.0;
    for (double& x : h) x = se.v->empty() ? 0.0 : x / static_cast<double>(se.v->size());
    peak = std::max(peak, *std::max_element(h.begin(), h.end()));
    hist.push_back(std::move(h));
  }
  if (peak <= 0.0) peak = 1.0;
  std::ostringstream s;
  s << detail::header(560, 410);
  s << "<text x=\"220\" y=\"22\" font-size=\"13\" text-anchor=\"middle\">" << detail::xml_escape(title) << "</text>\n";
  int row = 0;
  for (std::size_t i = 0; i < hist.size(); ++i) {
    if (series[i].v->empty()) continue;
    s << "<polyline fill=\"none\" stroke=\"" << series[i].colour << "\" stroke-width=\"2\" points=\"";
    for (int b = 0; b < bins; ++b) {
      const double y = f.y(hist[i][b] / peak);
      s << f.x(static_cast<double>(b) / bins) << ',' << y << ' ' << f.x(static_cast<double>(b + 1) / bins) << ',' << y << ' ';
    }
    s << "\"/>\n";
    s << "<rect x=\"392\" y=\"" << 52 + 18 * row << "\" width=\"12\" height=\"3\" fill=\"" << series[i].colour << "\"/>";
    s << "<text x=\"410\" y=\"" << 57 + 18 * row << "\" font-size=\"11\">" << series[i].label << " (n=" << series[i].v->size()
      << ")</text>\n";
    ++row;
  }
  detail::axes(s, f, "Predicted probability", "Fraction of cases (scaled)");
  s << "</svg>\n";
  return s.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed: " + path.string());
}

inline void write_json(const std::filesystem::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

inline json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingAssetError(path.string());
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw ParseError(path.string(), 1, e.what());
  }
}

}  // namespace casedx
