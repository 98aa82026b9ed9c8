#pragma once

// Planted-signal corpus generator.
//
// Every abnormal class is a (family, shape) pair: the family fixes where the
// pattern sits, the shape fixes what it looks like. Class order enumerates
// pairs so that the most frequent classes cover every family and shape and
// the rare ones are recombinations, which the generated knowledge base
// describes with the same words. Conjunction classes split their pattern
// into left and right halves placed in two different scans of a case; single
// halves also appear as decoys in negative cases.

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "casedx/corpus.hpp"
#include "casedx/knowledge.hpp"

namespace casedx {

struct SyntheticConfig {
  int classes = 8;
  int cases = 600;
  double exponent = 1.0;
  double normal_fraction = 0.1;
  double multi_scan_rate = 0.3;
  int max_scans = 4;
  int conjunction_classes = 0;
  double decoy_rate = 0.5;
  double three_d_rate = 0.5;
  int height = 32;
  int width = 32;
  int depth = 8;
  double background = 0.2;
  double amplitude = 0.6;
  double noise = 0.1;
  double pattern_scale = 0.25;  // pattern side as a fraction of the image side
  double jitter = 0.04;         // maximum centre offset as a fraction of the image side

  void validate() const;
};

inline constexpr std::array<std::string_view, 5> kFamilyIds = {"upper_left", "upper_right", "lower_left", "lower_right",
                                                               "central"};
inline constexpr std::array<std::string_view, 5> kFamilyWords = {"upper left", "upper right", "lower left", "lower right",
                                                                 "central"};
inline constexpr std::array<std::array<double, 2>, 5> kFamilyCentres = {
    {{0.25, 0.25}, {0.25, 0.75}, {0.75, 0.25}, {0.75, 0.75}, {0.5, 0.5}}};
inline constexpr std::array<std::string_view, 4> kShapeIds = {"nodule", "ring", "cross", "stripe"};
inline constexpr std::array<std::string_view, 4> kShapeWords = {"solid nodule", "ring lesion", "cross lesion",
                                                                "stripe lesion"};
inline constexpr std::array<std::string_view, 4> kShapeDescriptions = {
    "a filled bright square", "a hollow bright square outline", "a bright plus sign", "a bright diagonal line"};
inline constexpr int kMaxSyntheticClasses = static_cast<int>(kFamilyIds.size() * kShapeIds.size());

inline void SyntheticConfig::validate() const {
  if (classes < 1 || classes > kMaxSyntheticClasses)
    throw InvalidArgument("synthetic classes must lie in [1, " + std::to_string(kMaxSyntheticClasses) + "]");
  if (cases < 1) throw InvalidArgument("synthetic cases must be positive");
  if (normal_fraction < 0 || normal_fraction >= 1) throw InvalidArgument("normal_fraction must lie in [0, 1)");
  if (multi_scan_rate < 0 || multi_scan_rate > 1) throw InvalidArgument("multi_scan_rate must lie in [0, 1]");
  if (max_scans < 1) throw InvalidArgument("max_scans must be positive");
  if (conjunction_classes < 0 || conjunction_classes > classes)
    throw InvalidArgument("conjunction_classes must lie in [0, classes]");
  if (conjunction_classes > 0 && (multi_scan_rate <= 0 || max_scans < 2))
    throw InvalidArgument("conjunction classes need multi-scan cases (multi_scan_rate > 0 and max_scans >= 2)");
  if (height < 8 || width < 8 || depth < 1) throw InvalidArgument("synthetic geometry too small");
  if (noise < 0) throw InvalidArgument("noise must be non-negative");
}

enum class PatternHalf { full, left, right };

struct Plant {
  std::string class_id;
  PatternHalf half = PatternHalf::full;
  bool decoy = false;
  int z0 = 0, z1 = 1, y0 = 0, y1 = 0, x0 = 0, x1 = 0;  // half-open box
};

struct SyntheticClass {
  std::string id;
  int family = 0;
  int shape = 0;
  bool conjunction = false;
};

struct SyntheticCorpus {
  Corpus corpus;
  KnowledgeBase knowledge;
  std::vector<SyntheticClass> classes;  // abnormal classes in frequency order
  std::map<std::string, std::vector<Plant>> plants;  // scan id -> planted patterns
};

// (family, shape) pairs enumerated by diagonals so that the first
// max(F, S) classes cover every family and every shape.
inline std::vector<std::pair<int, int>> class_pairs(int count) {
  const int F = static_cast<int>(kFamilyIds.size()), S = static_cast<int>(kShapeIds.size());
  std::vector<std::pair<int, int>> out;
  for (int round = 0; round < S && static_cast<int>(out.size()) < count; ++round)
    for (int f = 0; f < F && static_cast<int>(out.size()) < count; ++f) out.emplace_back(f, (f + round) % S);
  return out;
}

inline std::string synthetic_class_id(int family, int shape) {
  return std::string(kFamilyIds[family]) + "_" + std::string(kShapeIds[shape]);
}

// Binary mask of a shape on an s x s grid.
inline std::vector<std::uint8_t> pattern_mask(int shape, int s) {
  std::vector<std::uint8_t> m(static_cast<std::size_t>(s) * s, 0);
  const int t = std::max(1, s / 4);
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) {
      bool on = false;
      switch (shape) {
        case 0:
          on = true;
          break;
        case 1:
          on = y < t || y >= s - t || x < t || x >= s - t;
          break;
        case 2:
          on = std::abs(2 * y - (s - 1)) < t || std::abs(2 * x - (s - 1)) < t;
          break;
        default:
          on = std::abs(y - x) < (t + 1) / 2 + 1;
          break;
      }
      m[static_cast<std::size_t>(y) * s + x] = on;
    }
  return m;
}

// Per-class case counts: largest-remainder rounding of a power law, which
// keeps the histogram non-increasing.
inline std::vector<int> power_law_counts(int classes, int total, double exponent) {
  std::vector<double> w(classes);
  double sum = 0.0;
  for (int k = 0; k < classes; ++k) sum += w[k] = std::pow(k + 1.0, -exponent);
  std::vector<int> counts(classes);
  std::vector<std::pair<double, int>> rem;
  int assigned = 0;
  for (int k = 0; k < classes; ++k) {
    const double exact = total * w[k] / sum;
    counts[k] = static_cast<int>(std::floor(exact));
    assigned += counts[k];
    rem.emplace_back(exact - counts[k], k);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (int i = 0; assigned < total; ++i, ++assigned) ++counts[rem[i % classes].second];
  return counts;
}

inline KnowledgeBase synthetic_knowledge(const std::vector<SyntheticClass>& classes, bool with_normal) {
  KnowledgeBase kb;
  std::set<int> families;
  for (const auto& c : classes) families.insert(c.family);
  for (int f : families) {
    const std::string w(kFamilyWords[f]);
    kb.push_back({"region_" + std::string(kFamilyIds[f]), w + " region finding", {w + " abnormality"}, std::nullopt,
                  "an abnormality located in the " + w + " region"});
  }
  for (const auto& c : classes) {
    const std::string fw(kFamilyWords[c.family]), sw(kShapeWords[c.shape]);
    KnowledgeEntry e;
    e.class_id = c.id;
    e.name = fw + " " + sw;
    e.synonyms = {sw + " of the " + fw + " region", fw + " " + std::string(kShapeIds[c.shape])};
    e.parent_id = "region_" + std::string(kFamilyIds[c.family]);
    e.description = std::string(kShapeDescriptions[c.shape]) + " in the " + fw + " region";
    kb.push_back(std::move(e));
  }
  if (with_normal)
    kb.push_back({std::string(kNormalClass), "normal", {"no finding", "unremarkable study"}, std::nullopt,
                  "no abnormality in any region"});
  return kb;
}

namespace detail {

inline constexpr std::array<Modality, 3> kVolumeModalities = {Modality::ct, Modality::mri, Modality::nuclear_medicine};
inline constexpr std::array<Modality, 6> kImageModalities = {Modality::xray,        Modality::ultrasound,
                                                             Modality::fluoroscopy, Modality::mammography,
                                                             Modality::dsa,         Modality::barium_enema};

inline Plant stamp(Volume& v, const SyntheticClass& cls, PatternHalf half, const SyntheticConfig& cfg, Rng& rng,
                   int& key_slice) {
  const int s = std::max(4, static_cast<int>(std::lround(cfg.pattern_scale * std::min(v.height, v.width))));
  const auto& c = kFamilyCentres[cls.family];
  const double jy = rng.uniform(-cfg.jitter, cfg.jitter), jx = rng.uniform(-cfg.jitter, cfg.jitter);
  const int cy = static_cast<int>(std::lround((c[0] + jy) * v.height));
  const int cx = static_cast<int>(std::lround((c[1] + jx) * v.width));
  const int y0 = std::clamp(cy - s / 2, 0, v.height - s);
  const int x0 = std::clamp(cx - s / 2, 0, v.width - s);
  int z0 = 0, z1 = 1;
  if (v.depth > 1) {
    const int thick = std::max(1, static_cast<int>(std::lround(0.25 * v.depth)));
    z0 = static_cast<int>(rng.index(static_cast<std::size_t>(v.depth - thick + 1)));
    z1 = z0 + thick;
  }
  key_slice = (z0 + z1 - 1) / 2;
  const std::vector<std::uint8_t> m = pattern_mask(cls.shape, s);
  const int xa = half == PatternHalf::right ? s / 2 : 0;
  const int xb = half == PatternHalf::left ? s / 2 : s;
  for (int z = z0; z < z1; ++z)
    for (int y = 0; y < s; ++y)
      for (int x = xa; x < xb; ++x)
        if (m[static_cast<std::size_t>(y) * s + x]) v.at(z, y0 + y, x0 + x) += static_cast<float>(cfg.amplitude);
  return {cls.id, half, false, z0, z1, y0, y0 + s, x0 + xa, x0 + xb};
}

}  // namespace detail

// Deterministic in (config, seed). Volumes stay in memory; scan paths point
// to scans/<scan_id>.npy for write_synthetic.
inline SyntheticCorpus generate_synthetic(const SyntheticConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, "synthetic"));
  SyntheticCorpus out;
  const auto pairs = class_pairs(cfg.classes);
  for (int k = 0; k < cfg.classes; ++k)
    out.classes.push_back({synthetic_class_id(pairs[k].first, pairs[k].second), pairs[k].first, pairs[k].second,
                           k < cfg.conjunction_classes});

  const int normals = static_cast<int>(std::lround(cfg.normal_fraction * cfg.cases));
  const std::vector<int> counts = power_law_counts(cfg.classes, cfg.cases - normals, cfg.exponent);
  std::vector<int> label(cfg.cases, -1);  // -1 normal
  {
    int pos = 0;
    for (int k = 0; k < cfg.classes; ++k)
      for (int i = 0; i < counts[k]; ++i) label[pos++] = k;
    rng.shuffle(label);
  }

  // Multi-scan slots: conjunction cases first, then a random subset of the rest.
  const int multi = static_cast<int>(std::lround(cfg.multi_scan_rate * cfg.cases));
  std::vector<bool> is_multi(cfg.cases, false);
  int conj_cases = 0;
  for (int i = 0; i < cfg.cases; ++i)
    if (label[i] >= 0 && out.classes[label[i]].conjunction) {
      is_multi[i] = true;
      ++conj_cases;
    }
  if (conj_cases > multi)
    throw InvalidArgument("infeasible synthetic config: " + std::to_string(conj_cases) +
                          " conjunction cases exceed the " + std::to_string(multi) + " multi-scan cases");
  {
    std::vector<int> rest;
    for (int i = 0; i < cfg.cases; ++i)
      if (!is_multi[i]) rest.push_back(i);
    rng.shuffle(rest);
    for (int i = 0; i < multi - conj_cases; ++i) is_multi[rest[i]] = true;
  }

  std::vector<int> conj_ids;
  for (int k = 0; k < cfg.conjunction_classes; ++k) conj_ids.push_back(k);
  const int width = static_cast<int>(std::to_string(cfg.cases - 1).size());

  for (int i = 0; i < cfg.cases; ++i) {
    std::string num = std::to_string(i);
    num.insert(0, static_cast<std::size_t>(width) - num.size(), '0');
    Case c;
    c.id = "case" + num;
    const int S = is_multi[i] ? 2 + static_cast<int>(rng.index(static_cast<std::size_t>(cfg.max_scans - 1))) : 1;
    std::vector<Volume> vols;
    for (int s = 0; s < S; ++s) {
      Scan sc;
      sc.id = c.id + "_s" + std::to_string(s);
      sc.dims = rng.bernoulli(cfg.three_d_rate) ? Dims::three_d : Dims::two_d;
      sc.modality = sc.dims == Dims::three_d ? detail::kVolumeModalities[rng.index(detail::kVolumeModalities.size())]
                                             : detail::kImageModalities[rng.index(detail::kImageModalities.size())];
      sc.path = "scans/" + sc.id + ".npy";
      Volume v(sc.dims == Dims::three_d ? cfg.depth : 1, cfg.height, cfg.width, static_cast<float>(cfg.background));
      if (cfg.noise > 0)
        for (float& x : v.voxels) x += static_cast<float>(rng.normal(0.0, cfg.noise));
      vols.push_back(std::move(v));
      c.scans.push_back(std::move(sc));
    }

    std::vector<bool> used(S, false);
    std::vector<std::set<int>> families(S);  // occupied regions per scan
    auto place = [&](int s, const SyntheticClass& cls, PatternHalf half, bool decoy) {
      int key = 0;
      Plant p = detail::stamp(vols[s], cls, half, cfg, rng, key);
      p.decoy = decoy;
      if (c.scans[s].dims == Dims::three_d && !used[s]) c.scans[s].key_slice = key;
      used[s] = true;
      families[s].insert(cls.family);
      out.plants[c.scans[s].id].push_back(p);
    };

    if (label[i] >= 0) {
      const SyntheticClass& cls = out.classes[label[i]];
      c.disorders = {cls.id};
      c.anatomy = static_cast<Anatomy>(cls.family % 7);
      if (cls.conjunction) {
        const int a = static_cast<int>(rng.index(S));
        int b = static_cast<int>(rng.index(S - 1));
        if (b >= a) ++b;
        place(a, cls, PatternHalf::left, false);
        place(b, cls, PatternHalf::right, false);
      } else {
        place(static_cast<int>(rng.index(S)), cls, PatternHalf::full, false);
      }
    } else {
      c.disorders = {std::string(kNormalClass)};
      c.anatomy = static_cast<Anatomy>(rng.index(7));
    }
    // Decoys: one half of a conjunction class the case does not have, in a
    // scan whose region for that class is still empty.
    if (S > 1)
      for (const int k : conj_ids) {
        if (k == label[i] || !rng.bernoulli(cfg.decoy_rate)) continue;
        const PatternHalf half = rng.bernoulli(0.5) ? PatternHalf::left : PatternHalf::right;
        std::vector<int> open;
        for (int s = 0; s < S; ++s)
          if (!families[s].count(out.classes[k].family)) open.push_back(s);
        if (!open.empty()) place(open[rng.index(open.size())], out.classes[k], half, true);
      }

    for (int s = 0; s < S; ++s) c.scans[s].volume = std::make_shared<const Volume>(std::move(vols[s]));
    c.icd = c.disorders[0] == kNormalClass ? c.disorders
                                           : std::vector<std::string>{"R" + std::to_string(out.classes[label[i]].family)};
    out.corpus.cases.push_back(std::move(c));
  }

  for (const auto& cls : out.classes) out.corpus.icd_map[cls.id] = "R" + std::to_string(cls.family);
  out.knowledge = synthetic_knowledge(out.classes, normals > 0);
  const auto names = display_names(out.knowledge);
  out.corpus.disorders = build_label_space(out.corpus, LabelLevel::disorder, nullptr, &names);
  out.corpus.icd = build_label_space(out.corpus, LabelLevel::icd);
  return out;
}

inline json plant_to_json(const std::string& scan_id, const Plant& p) {
  static constexpr std::array<std::string_view, 3> halves = {"full", "left", "right"};
  return {{"scan_id", scan_id}, {"class_id", p.class_id}, {"half", halves[static_cast<int>(p.half)]},
          {"decoy", p.decoy},   {"box", {p.z0, p.z1, p.y0, p.y1, p.x0, p.x1}}};
}

// Writes manifest.jsonl, scans/*.npy, knowledge_base.jsonl, icd_map.json and
// planted.jsonl (ground-truth pattern boxes) under dir.
inline void write_synthetic(const SyntheticCorpus& sc, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "scans");
  for (const auto& c : sc.corpus.cases)
    for (const auto& s : c.scans) write_volume(dir / s.path, *s.volume, s.dims);
  write_manifest(dir / "manifest.jsonl", sc.corpus.cases);
  write_knowledge_base(dir / "knowledge_base.jsonl", sc.knowledge);
  {
    std::ofstream out(dir / "icd_map.json");
    out << json(sc.corpus.icd_map).dump(2) << '\n';
  }
  std::ofstream out(dir / "planted.jsonl");
  for (const auto& [scan, plants] : sc.plants)
    for (const auto& p : plants) out << plant_to_json(scan, p).dump() << '\n';
}

inline std::map<std::string, std::vector<Plant>> load_plants(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingAssetError(path.string());
  std::map<std::string, std::vector<Plant>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json r = json::parse(line);
      Plant p;
      p.class_id = r.at("class_id").get<std::string>();
      const std::string h = r.at("half").get<std::string>();
      p.half = h == "left" ? PatternHalf::left : h == "right" ? PatternHalf::right : PatternHalf::full;
      p.decoy = r.at("decoy").get<bool>();
      const auto b = r.at("box").get<std::vector<int>>();
      if (b.size() != 6) throw ParseError(path.string(), lineno, "box needs six entries");
      p.z0 = b[0], p.z1 = b[1], p.y0 = b[2], p.y1 = b[3], p.x0 = b[4], p.x1 = b[5];
      out[r.at("scan_id").get<std::string>()].push_back(p);
    } catch (const json::exception& e) {
      throw ParseError(path.string(), lineno, e.what());
    }
  }
  return out;
}

}  // namespace casedx
