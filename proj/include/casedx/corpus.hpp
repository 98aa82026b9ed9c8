#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "casedx/error.hpp"
#include "casedx/npy.hpp"
#include "casedx/rng.hpp"

namespace casedx {

using json = nlohmann::json;

enum class Modality { ct, mri, xray, ultrasound, fluoroscopy, nuclear_medicine, mammography, dsa, barium_enema };
inline constexpr int kModalityCount = 9;
inline constexpr std::array<std::string_view, kModalityCount> kModalityNames = {
    "CT", "MRI", "X-ray", "Ultrasound", "Fluoroscopy", "NuclearMedicine", "Mammography", "DSA", "BariumEnema"};

inline std::string_view to_string(Modality m) { return kModalityNames[static_cast<int>(m)]; }
inline Modality parse_modality(std::string_view s) {
  for (int i = 0; i < kModalityCount; ++i)
    if (kModalityNames[i] == s) return static_cast<Modality>(i);
  throw InvalidArgument("unknown modality \"" + std::string(s) + "\"");
}

enum class Dims { two_d, three_d };
inline std::string_view to_string(Dims d) { return d == Dims::two_d ? "2D" : "3D"; }
inline Dims parse_dims(std::string_view s) {
  if (s == "2D") return Dims::two_d;
  if (s == "3D") return Dims::three_d;
  throw InvalidArgument("unknown dims \"" + std::string(s) + "\"");
}

enum class Anatomy { head_neck, spine, chest, breast, abdomen_pelvis, upper_limb, lower_limb };
inline constexpr std::array<std::string_view, 7> kAnatomyNames = {"head_neck",      "spine",      "chest",     "breast",
                                                                  "abdomen_pelvis", "upper_limb", "lower_limb"};
inline std::string_view to_string(Anatomy a) { return kAnatomyNames[static_cast<int>(a)]; }
inline Anatomy parse_anatomy(std::string_view s) {
  for (std::size_t i = 0; i < kAnatomyNames.size(); ++i)
    if (kAnatomyNames[i] == s) return static_cast<Anatomy>(i);
  throw InvalidArgument("unknown anatomy \"" + std::string(s) + "\"");
}

enum class Split { train, val, test };
inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    default:
      return "test";
  }
}
inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw InvalidArgument("unknown split \"" + std::string(s) + "\"");
}

// Intensities stored slice-major: voxels[(z * height + y) * width + x].
struct Volume {
  int depth = 1, height = 0, width = 0;
  std::vector<float> voxels;

  Volume() = default;
  Volume(int d, int h, int w, float fill = 0.f)
      : depth(d), height(h), width(w), voxels(static_cast<std::size_t>(d) * h * w, fill) {}

  std::size_t slice_size() const { return static_cast<std::size_t>(height) * width; }
  float& at(int z, int y, int x) { return voxels[(static_cast<std::size_t>(z) * height + y) * width + x]; }
  float at(int z, int y, int x) const { return voxels[(static_cast<std::size_t>(z) * height + y) * width + x]; }

  Volume slice(int z) const {
    Volume s(1, height, width);
    std::copy_n(voxels.begin() + static_cast<std::ptrdiff_t>(z * slice_size()), slice_size(), s.voxels.begin());
    return s;
  }
};

struct Scan {
  std::string id;
  Modality modality = Modality::ct;
  Dims dims = Dims::three_d;
  std::string path;  // relative to the manifest directory
  std::optional<int> key_slice;
  std::shared_ptr<const Volume> volume;
};

struct Case {
  std::string id;
  std::vector<Scan> scans;
  std::vector<std::string> disorders;
  std::vector<std::string> icd;
  std::optional<Anatomy> anatomy;
  std::optional<Split> split;

  const std::vector<std::string>& labels(bool icd_level) const { return icd_level ? icd : disorders; }
};

inline constexpr std::string_view kNormalClass = "normal";

enum class LabelLevel { disorder, icd };
inline LabelLevel parse_level(std::string_view s) {
  if (s == "disorder") return LabelLevel::disorder;
  if (s == "icd") return LabelLevel::icd;
  throw InvalidArgument("label level must be 'disorder' or 'icd', got \"" + std::string(s) + "\"");
}
inline std::string_view to_string(LabelLevel l) { return l == LabelLevel::disorder ? "disorder" : "icd"; }

enum class Stratum { head, medium, tail };
inline std::string_view to_string(Stratum s) {
  return s == Stratum::head ? "head" : s == Stratum::medium ? "medium" : "tail";
}

inline constexpr int kHeadMinCount = 100;
inline constexpr int kMediumMinCount = 30;

inline Stratum categorize(int training_count, bool is_normal) {
  if (is_normal || training_count >= kHeadMinCount) return Stratum::head;
  if (training_count >= kMediumMinCount) return Stratum::medium;
  return Stratum::tail;
}

struct LabelSpace {
  LabelLevel level = LabelLevel::disorder;
  std::vector<std::string> classes;
  std::vector<std::string> names;
  std::vector<int> counts;
  std::vector<Stratum> category;

  std::size_t size() const noexcept { return classes.size(); }
  int index_of(std::string_view id) const {
    auto it = std::find(classes.begin(), classes.end(), id);
    return it == classes.end() ? -1 : static_cast<int>(it - classes.begin());
  }
  // Multi-hot target vector for one case.
  template <class T>
  std::vector<T> targets(const Case& c) const {
    std::vector<T> y(size(), T(0));
    for (const auto& l : c.labels(level == LabelLevel::icd)) {
      const int i = index_of(l);
      if (i >= 0) y[i] = T(1);
    }
    return y;
  }
  bool same_classes(const LabelSpace& o) const { return classes == o.classes; }
};

struct SplitAssignment {
  std::map<std::string, Split> assignment;
  std::uint64_t seed = 0;

  Split of(const std::string& case_id) const {
    auto it = assignment.find(case_id);
    if (it == assignment.end()) throw InvalidArgument("case " + case_id + " has no split assignment");
    return it->second;
  }
  std::size_t count(Split s) const {
    return static_cast<std::size_t>(std::count_if(assignment.begin(), assignment.end(), [s](const auto& kv) { return kv.second == s; }));
  }
};

struct Corpus {
  std::vector<Case> cases;
  LabelSpace disorders;
  LabelSpace icd;
  std::map<std::string, std::string> icd_map;  // disorder id -> icd code
  std::vector<std::string> warnings;

  const LabelSpace& labels(LabelLevel l) const { return l == LabelLevel::icd ? icd : disorders; }
  const Case* find(std::string_view id) const {
    for (const auto& c : cases)
      if (c.id == id) return &c;
    return nullptr;
  }
  std::vector<const Case*> in_split(const SplitAssignment& s, Split which) const {
    std::vector<const Case*> out;
    for (const auto& c : cases)
      if (s.of(c.id) == which) out.push_back(&c);
    return out;
  }
};

// Counts positives over the training portion when a split is supplied,
// otherwise over every case. Class order is lexicographic by id.
inline LabelSpace build_label_space(const Corpus& corpus, LabelLevel level, const SplitAssignment* split = nullptr,
                                    const std::map<std::string, std::string>* display_names = nullptr) {
  if (corpus.cases.empty()) throw InvalidArgument("cannot build a label space from an empty corpus");
  std::map<std::string, int> counts;
  for (const auto& c : corpus.cases) {
    const bool counted = !split || split->of(c.id) == Split::train;
    for (const auto& l : c.labels(level == LabelLevel::icd)) counts[l] += counted ? 1 : 0;
  }
  LabelSpace ls;
  ls.level = level;
  for (const auto& [id, n] : counts) {
    ls.classes.push_back(id);
    std::string name = id;
    if (display_names)
      if (auto it = display_names->find(id); it != display_names->end()) name = it->second;
    ls.names.push_back(name);
    ls.counts.push_back(n);
    ls.category.push_back(categorize(n, id == kNormalClass));
  }
  return ls;
}

inline LabelSpace build_label_space(const Corpus& corpus, std::string_view level, const SplitAssignment* split = nullptr) {
  return build_label_space(corpus, parse_level(level), split);
}

// ---------------------------------------------------------------- manifest I/O

inline Volume volume_from_npy(const npy::Array& a, Dims dims, const std::string& where) {
  if (a.data.empty()) throw DataError(where + ": empty voxel array");
  if (dims == Dims::two_d) {
    if (a.shape.size() != 2) throw DataError(where + ": 2D scan needs an (H, W) array");
    Volume v(1, a.shape[0], a.shape[1]);
    v.voxels = a.data;
    return v;
  }
  if (a.shape.size() != 3) throw DataError(where + ": 3D scan needs an (H, W, D) array");
  const int H = a.shape[0], W = a.shape[1], D = a.shape[2];
  Volume v(D, H, W);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int z = 0; z < D; ++z) v.at(z, y, x) = a.data[(static_cast<std::size_t>(y) * W + x) * D + z];
  return v;
}

inline void write_volume(const std::filesystem::path& path, const Volume& v, Dims dims) {
  if (dims == Dims::two_d) {
    npy::write(path, {v.height, v.width}, v.voxels);
    return;
  }
  std::vector<float> hwd(v.voxels.size());
  for (int y = 0; y < v.height; ++y)
    for (int x = 0; x < v.width; ++x)
      for (int z = 0; z < v.depth; ++z) hwd[(static_cast<std::size_t>(y) * v.width + x) * v.depth + z] = v.at(z, y, x);
  npy::write(path, {v.height, v.width, v.depth}, hwd);
}

inline std::map<std::string, std::string> load_icd_map(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingAssetError(path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError(path.string(), 1, e.what());
  }
  return j.get<std::map<std::string, std::string>>();
}

struct ManifestOptions {
  bool load_voxels = true;
  std::optional<std::filesystem::path> icd_map;
};

inline Case parse_case_record(const json& r, const std::string& source, std::size_t line) {
  auto fail = [&](const std::string& msg) -> ParseError { return ParseError(source, line, msg); };
  if (!r.is_object()) throw fail("record is not an object");
  static const std::set<std::string> known = {"case_id", "scans", "disorders", "icd", "anatomy", "split"};
  for (const auto& [k, v] : r.items())
    if (!known.count(k)) throw fail("unknown field \"" + k + "\"");
  Case c;
  try {
    c.id = r.at("case_id").get<std::string>();
    for (const auto& s : r.at("scans")) {
      Scan sc;
      sc.id = s.at("scan_id").get<std::string>();
      sc.modality = parse_modality(s.at("modality").get<std::string>());
      sc.dims = parse_dims(s.at("dims").get<std::string>());
      sc.path = s.at("path").get<std::string>();
      if (s.contains("key_slice") && !s["key_slice"].is_null()) sc.key_slice = s["key_slice"].get<int>();
      if (sc.key_slice && sc.dims != Dims::three_d) throw fail("scan " + sc.id + ": key_slice on a 2D scan");
      c.scans.push_back(std::move(sc));
    }
    c.disorders = r.at("disorders").get<std::vector<std::string>>();
    if (r.contains("icd")) c.icd = r["icd"].get<std::vector<std::string>>();
    if (r.contains("anatomy") && !r["anatomy"].is_null()) c.anatomy = parse_anatomy(r["anatomy"].get<std::string>());
    if (r.contains("split") && !r["split"].is_null()) c.split = parse_split(r["split"].get<std::string>());
  } catch (const InvalidArgument& e) {
    throw fail(e.what());
  } catch (const json::exception& e) {
    throw fail(e.what());
  }
  if (c.scans.empty()) throw fail("case " + c.id + " has no scans");
  if (c.disorders.empty()) throw fail("case " + c.id + " has no disorder labels");
  return c;
}

inline json case_to_json(const Case& c) {
  json r;
  r["case_id"] = c.id;
  r["scans"] = json::array();
  for (const auto& s : c.scans) {
    json js{{"scan_id", s.id}, {"modality", to_string(s.modality)}, {"dims", to_string(s.dims)}, {"path", s.path}};
    if (s.key_slice) js["key_slice"] = *s.key_slice;
    r["scans"].push_back(js);
  }
  r["disorders"] = c.disorders;
  r["icd"] = c.icd;
  if (c.anatomy) r["anatomy"] = to_string(*c.anatomy);
  if (c.split) r["split"] = to_string(*c.split);
  return r;
}

inline void write_manifest(const std::filesystem::path& path, const std::vector<Case>& cases) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& c : cases) out << case_to_json(c).dump() << '\n';
}

inline Corpus load_manifest(const std::filesystem::path& path, const ManifestOptions& opt = {}) {
  std::ifstream in(path);
  if (!in) throw MissingAssetError(path.string());
  const std::filesystem::path root = path.parent_path();
  const std::string source = path.string();
  Corpus corpus;
  if (opt.icd_map) corpus.icd_map = load_icd_map(*opt.icd_map);

  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json r;
    try {
      r = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(source, lineno, std::string("malformed record: ") + e.what());
    }
    Case c = parse_case_record(r, source, lineno);
    if (!seen.insert(c.id).second) throw ParseError(source, lineno, "duplicate case_id \"" + c.id + "\"");

    if (!corpus.icd_map.empty()) {
      std::set<std::string> derivable{std::string(kNormalClass)};
      bool unmapped = false;
      for (const auto& d : c.disorders) {
        if (d == kNormalClass) continue;
        if (auto it = corpus.icd_map.find(d); it != corpus.icd_map.end())
          derivable.insert(it->second);
        else
          unmapped = true;
      }
      if (!r.contains("icd")) {
        if (unmapped) {
          corpus.warnings.push_back("case " + c.id + ": unmapped disorder; icd labels left empty");
        } else {
          for (const auto& d : c.disorders)
            c.icd.push_back(d == kNormalClass ? std::string(kNormalClass) : corpus.icd_map.at(d));
          std::sort(c.icd.begin(), c.icd.end());
          c.icd.erase(std::unique(c.icd.begin(), c.icd.end()), c.icd.end());
        }
      } else {
        for (const auto& code : c.icd)
          if (!derivable.count(code))
            throw ParseError(source, lineno, "icd label " + code + " is not derivable from the case's disorders");
      }
    }

    for (auto& s : c.scans) {
      const std::filesystem::path vp = root / s.path;
      if (!std::filesystem::exists(vp)) throw MissingAssetError(vp.string());
      if (!opt.load_voxels) continue;
      const std::string where = source + ":" + std::to_string(lineno) + " scan " + s.id;
      Volume v = volume_from_npy(npy::read(vp), s.dims, where);
      if (s.key_slice && (*s.key_slice < 0 || *s.key_slice >= v.depth))
        throw ParseError(source, lineno, "scan " + s.id + ": key_slice out of range");
      s.volume = std::make_shared<const Volume>(std::move(v));
    }
    corpus.cases.push_back(std::move(c));
  }
  if (corpus.cases.empty()) throw DataError(source + ": manifest has no records");

  const bool all_preassigned =
      std::all_of(corpus.cases.begin(), corpus.cases.end(), [](const Case& c) { return c.split.has_value(); });
  SplitAssignment pre;
  if (all_preassigned)
    for (const auto& c : corpus.cases) pre.assignment[c.id] = *c.split;
  corpus.disorders = build_label_space(corpus, LabelLevel::disorder, all_preassigned ? &pre : nullptr);
  const bool any_icd = std::any_of(corpus.cases.begin(), corpus.cases.end(), [](const Case& c) { return !c.icd.empty(); });
  if (any_icd) corpus.icd = build_label_space(corpus, LabelLevel::icd, all_preassigned ? &pre : nullptr);
  else corpus.icd.level = LabelLevel::icd;
  return corpus;
}

// Pre-assigned split carried by the manifest, when every record has one.
inline std::optional<SplitAssignment> manifest_split(const Corpus& corpus) {
  SplitAssignment s;
  for (const auto& c : corpus.cases) {
    if (!c.split) return std::nullopt;
    s.assignment[c.id] = *c.split;
  }
  return s;
}

// ---------------------------------------------------------------- splitting

struct SplitTargets {
  std::size_t train, val, test;
};

inline SplitTargets split_targets(std::size_t n) {
  const std::size_t test = static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(n)));
  const std::size_t val = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n)));
  return {n - test - val, val, test};
}

// Random 7:1:2 partition. Before filling buckets at random, every class with
// at least two positive cases is given one training and one test positive
// (rarest classes first) while bucket capacity allows.
inline SplitAssignment split_corpus(const Corpus& corpus, std::uint64_t seed, LabelLevel level = LabelLevel::disorder) {
  const std::size_t n = corpus.cases.size();
  if (n < 10) throw InvalidArgument("corpus too small to split: " + std::to_string(n) + " cases (need at least 10)");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return corpus.cases[a].id < corpus.cases[b].id; });
  Rng rng(derive_seed(seed, "split"));
  rng.shuffle(order);

  const SplitTargets target = split_targets(n);
  std::vector<int> bucket(n, -1);  // 0 train, 1 val, 2 test
  std::size_t filled[3] = {0, 0, 0};
  const std::size_t cap[3] = {target.train, target.val, target.test};

  std::map<std::string, std::vector<std::size_t>> positives;
  for (std::size_t pos = 0; pos < n; ++pos)
    for (const auto& l : corpus.cases[order[pos]].labels(level == LabelLevel::icd)) positives[l].push_back(pos);
  std::vector<std::pair<std::string, std::vector<std::size_t>>> classes(positives.begin(), positives.end());
  std::stable_sort(classes.begin(), classes.end(), [](const auto& a, const auto& b) { return a.second.size() < b.second.size(); });

  for (const auto& [cls, members] : classes) {
    if (members.size() < 2) continue;
    for (int side : {0, 2}) {
      const bool present = std::any_of(members.begin(), members.end(), [&](std::size_t p) { return bucket[p] == side; });
      if (present || filled[side] >= cap[side]) continue;
      for (std::size_t p : members)
        if (bucket[p] < 0) {
          bucket[p] = side;
          ++filled[side];
          break;
        }
    }
  }
  for (std::size_t pos = 0; pos < n; ++pos) {
    if (bucket[pos] >= 0) continue;
    for (int side : {2, 1, 0})
      if (filled[side] < cap[side]) {
        bucket[pos] = side;
        ++filled[side];
        break;
      }
  }
  SplitAssignment out;
  out.seed = seed;
  constexpr Split kinds[3] = {Split::train, Split::val, Split::test};
  for (std::size_t pos = 0; pos < n; ++pos) out.assignment[corpus.cases[order[pos]].id] = kinds[bucket[pos]];
  return out;
}

}  // namespace casedx
