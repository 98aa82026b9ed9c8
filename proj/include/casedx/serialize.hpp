#pragma once

// JSON conversion for component configs. Readers are strict: every key of
// an object must be recognized, and missing keys keep their defaults.

#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "casedx/encoders.hpp"
#include "casedx/fusion.hpp"
#include "casedx/knowledge.hpp"
#include "casedx/metrics.hpp"
#include "casedx/preprocess.hpp"
#include "casedx/synthetic.hpp"

namespace casedx {

class StrictReader {
 public:
  StrictReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw InvalidArgument("config " + where() + " must be an object");
  }
  ~StrictReader() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw InvalidArgument("unknown config key " + key_path(k));
  }
  StrictReader(const StrictReader&) = delete;
  StrictReader& operator=(const StrictReader&) = delete;

  template <class V>
  StrictReader& get(const std::string& key, V& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return *this;
    try {
      out = j_.at(key).get<V>();
    } catch (const json::exception& e) {
      throw InvalidArgument("config " + key_path(key) + ": " + e.what());
    }
    return *this;
  }

  // Nested object handled by a callback receiving its own reader.
  template <class F>
  StrictReader& object(const std::string& key, F&& f) {
    seen_.insert(key);
    if (!j_.contains(key)) return *this;
    StrictReader sub(j_.at(key), key_path(key));
    f(sub);
    return *this;
  }

  template <class E, class Parse>
  StrictReader& enumeration(const std::string& key, E& out, Parse&& parse) {
    seen_.insert(key);
    if (!j_.contains(key)) return *this;
    if (!j_.at(key).is_string()) throw InvalidArgument("config " + key_path(key) + " must be a string");
    out = parse(j_.at(key).get<std::string>());
    return *this;
  }

  void ignore(const std::string& key) { seen_.insert(key); }
  const json& raw() const noexcept { return j_; }

 private:
  std::string where() const { return path_.empty() ? "<root>" : path_; }
  std::string key_path(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }

  json j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline json to_json(const Geometry& g) { return {{"height", g.height}, {"width", g.width}, {"depth", g.depth}}; }
inline void read(StrictReader& r, Geometry& g) { r.get("height", g.height).get("width", g.width).get("depth", g.depth); }

inline json to_json(const EncoderConfig& c) {
  return {{"variant", to_string(c.variant)},
          {"embed_dim", c.embed_dim},
          {"geometry", to_json(c.geometry)},
          {"width", c.width},
          {"norm_blocks", c.norm_blocks},
          {"shared_blocks", c.shared_blocks},
          {"norm_groups", c.norm_groups},
          {"layers", c.layers},
          {"heads", c.heads},
          {"ffn_mult", c.ffn_mult},
          {"patch_size", c.patch_size},
          {"cube_depth", c.cube_depth},
          {"patch_hidden", c.patch_hidden},
          {"slice_positions", c.slice_positions}};
}
inline void read(StrictReader& r, EncoderConfig& c) {
  r.enumeration("variant", c.variant, parse_variant)
      .get("embed_dim", c.embed_dim)
      .object("geometry", [&](StrictReader& s) { read(s, c.geometry); })
      .get("width", c.width)
      .get("norm_blocks", c.norm_blocks)
      .get("shared_blocks", c.shared_blocks)
      .get("norm_groups", c.norm_groups)
      .get("layers", c.layers)
      .get("heads", c.heads)
      .get("ffn_mult", c.ffn_mult)
      .get("patch_size", c.patch_size)
      .get("cube_depth", c.cube_depth)
      .get("patch_hidden", c.patch_hidden)
      .get("slice_positions", c.slice_positions);
}

inline json to_json(const FusionConfig& c) {
  return {{"mode", to_string(c.mode)}, {"layers", c.layers}, {"heads", c.heads}, {"ffn_mult", c.ffn_mult},
          {"max_scans", c.max_scans}};
}
inline void read(StrictReader& r, FusionConfig& c) {
  r.enumeration("mode", c.mode, parse_fusion_mode)
      .get("layers", c.layers)
      .get("heads", c.heads)
      .get("ffn_mult", c.ffn_mult)
      .get("max_scans", c.max_scans);
}

inline json to_json(const TextEncoderConfig& c) {
  return {{"buckets", c.buckets}, {"token_dim", c.token_dim}, {"embed_dim", c.embed_dim}};
}
inline void read(StrictReader& r, TextEncoderConfig& c) {
  r.get("buckets", c.buckets).get("token_dim", c.token_dim).get("embed_dim", c.embed_dim);
}

inline json to_json(const KnowledgeTrainConfig& c) {
  return {{"epochs", c.epochs},     {"batch_size", c.batch_size}, {"learning_rate", c.learning_rate},
          {"temperature", c.temperature}, {"negatives", c.negatives}, {"negatives_only", c.negatives_only}};
}
inline void read(StrictReader& r, KnowledgeTrainConfig& c) {
  r.get("epochs", c.epochs)
      .get("batch_size", c.batch_size)
      .get("learning_rate", c.learning_rate)
      .get("temperature", c.temperature)
      .get("negatives", c.negatives)
      .get("negatives_only", c.negatives_only);
}

inline json to_json(const AugmentConfig& c) {
  return {{"enabled", c.enabled},
          {"probability", c.probability},
          {"noise_sigma_min", c.noise_sigma_min},
          {"noise_sigma_max", c.noise_sigma_max},
          {"gamma_min", c.gamma_min},
          {"gamma_max", c.gamma_max},
          {"max_rotation_deg", c.max_rotation_deg},
          {"max_translation", c.max_translation},
          {"elastic_alpha", c.elastic_alpha},
          {"elastic_grid", c.elastic_grid}};
}
inline void read(StrictReader& r, AugmentConfig& c) {
  r.get("enabled", c.enabled)
      .get("probability", c.probability)
      .get("noise_sigma_min", c.noise_sigma_min)
      .get("noise_sigma_max", c.noise_sigma_max)
      .get("gamma_min", c.gamma_min)
      .get("gamma_max", c.gamma_max)
      .get("max_rotation_deg", c.max_rotation_deg)
      .get("max_translation", c.max_translation)
      .get("elastic_alpha", c.elastic_alpha)
      .get("elastic_grid", c.elastic_grid);
}

inline json to_json(const BootstrapConfig& c) {
  return {{"samples", c.samples}, {"repeats", c.repeats}, {"max_retries", c.max_retries}, {"band_points", c.band_points}};
}
inline void read(StrictReader& r, BootstrapConfig& c) {
  r.get("samples", c.samples).get("repeats", c.repeats).get("max_retries", c.max_retries).get("band_points", c.band_points);
}

inline json to_json(const SyntheticConfig& c) {
  return {{"classes", c.classes},
          {"cases", c.cases},
          {"exponent", c.exponent},
          {"normal_fraction", c.normal_fraction},
          {"multi_scan_rate", c.multi_scan_rate},
          {"max_scans", c.max_scans},
          {"conjunction_classes", c.conjunction_classes},
          {"decoy_rate", c.decoy_rate},
          {"three_d_rate", c.three_d_rate},
          {"height", c.height},
          {"width", c.width},
          {"depth", c.depth},
          {"background", c.background},
          {"amplitude", c.amplitude},
          {"noise", c.noise},
          {"pattern_scale", c.pattern_scale},
          {"jitter", c.jitter}};
}
inline void read(StrictReader& r, SyntheticConfig& c) {
  r.get("classes", c.classes)
      .get("cases", c.cases)
      .get("exponent", c.exponent)
      .get("normal_fraction", c.normal_fraction)
      .get("multi_scan_rate", c.multi_scan_rate)
      .get("max_scans", c.max_scans)
      .get("conjunction_classes", c.conjunction_classes)
      .get("decoy_rate", c.decoy_rate)
      .get("three_d_rate", c.three_d_rate)
      .get("height", c.height)
      .get("width", c.width)
      .get("depth", c.depth)
      .get("background", c.background)
      .get("amplitude", c.amplitude)
      .get("noise", c.noise)
      .get("pattern_scale", c.pattern_scale)
      .get("jitter", c.jitter);
}

inline json to_json(const LabelSpace& ls) {
  json j{{"level", to_string(ls.level)}, {"classes", json::array()}};
  for (std::size_t i = 0; i < ls.size(); ++i)
    j["classes"].push_back(
        {{"id", ls.classes[i]}, {"name", ls.names[i]}, {"count", ls.counts[i]}, {"category", to_string(ls.category[i])}});
  return j;
}
inline LabelSpace label_space_from_json(const json& j) {
  LabelSpace ls;
  ls.level = parse_level(j.at("level").get<std::string>());
  for (const auto& c : j.at("classes")) {
    ls.classes.push_back(c.at("id").get<std::string>());
    ls.names.push_back(c.at("name").get<std::string>());
    ls.counts.push_back(c.at("count").get<int>());
    const std::string cat = c.at("category").get<std::string>();
    ls.category.push_back(cat == "head" ? Stratum::head : cat == "medium" ? Stratum::medium : Stratum::tail);
  }
  return ls;
}

}  // namespace casedx
