#pragma once

// Knowledge encoder: a bag-of-subwords text encoder trained contrastively on
// synonym, hierarchy and description pairs, whose class-name embeddings act
// as a frozen classifier.

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "casedx/corpus.hpp"
#include "casedx/optim.hpp"

namespace casedx {

enum class Relation { synonym, hierarchy, description };
inline std::string_view to_string(Relation r) {
  return r == Relation::synonym ? "synonym" : r == Relation::hierarchy ? "hierarchy" : "description";
}

struct KnowledgeTriple {
  std::string anchor;
  std::string positive;
  Relation relation = Relation::synonym;
};

struct KnowledgeEntry {
  std::string class_id;
  std::string name;
  std::vector<std::string> synonyms;
  std::optional<std::string> parent_id;
  std::optional<std::string> description;
};

using KnowledgeBase = std::vector<KnowledgeEntry>;

inline KnowledgeBase load_knowledge_base(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingAssetError(path.string());
  KnowledgeBase kb;
  std::string line;
  std::size_t lineno = 0;
  std::set<std::string> ids;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json r = json::parse(line);
      for (const auto& [k, v] : r.items())
        if (k != "class_id" && k != "name" && k != "synonyms" && k != "parent_id" && k != "description")
          throw ParseError(path.string(), lineno, "unknown field \"" + k + "\"");
      KnowledgeEntry e;
      e.class_id = r.at("class_id").get<std::string>();
      e.name = r.at("name").get<std::string>();
      if (r.contains("synonyms")) e.synonyms = r["synonyms"].get<std::vector<std::string>>();
      if (r.contains("parent_id") && !r["parent_id"].is_null()) e.parent_id = r["parent_id"].get<std::string>();
      if (r.contains("description") && !r["description"].is_null()) e.description = r["description"].get<std::string>();
      if (!ids.insert(e.class_id).second) throw ParseError(path.string(), lineno, "duplicate class_id \"" + e.class_id + "\"");
      kb.push_back(std::move(e));
    } catch (const json::exception& ex) {
      throw ParseError(path.string(), lineno, ex.what());
    }
  }
  return kb;
}

inline void write_knowledge_base(const std::filesystem::path& path, const KnowledgeBase& kb) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& e : kb) {
    json r{{"class_id", e.class_id}, {"name", e.name}, {"synonyms", e.synonyms}};
    if (e.parent_id) r["parent_id"] = *e.parent_id;
    if (e.description) r["description"] = *e.description;
    out << r.dump() << '\n';
  }
}

inline std::map<std::string, std::string> display_names(const KnowledgeBase& kb) {
  std::map<std::string, std::string> m;
  for (const auto& e : kb) m[e.class_id] = e.name;
  return m;
}

// Synonym, parent-name and description pairs for every entry.
inline std::vector<KnowledgeTriple> knowledge_triples(const KnowledgeBase& kb) {
  std::map<std::string, const KnowledgeEntry*> by_id;
  for (const auto& e : kb) by_id[e.class_id] = &e;
  std::vector<KnowledgeTriple> out;
  for (const auto& e : kb) {
    for (const auto& s : e.synonyms) out.push_back({e.name, s, Relation::synonym});
    if (e.parent_id)
      if (auto it = by_id.find(*e.parent_id); it != by_id.end()) out.push_back({e.name, it->second->name, Relation::hierarchy});
    if (e.description) out.push_back({e.name, *e.description, Relation::description});
  }
  return out;
}

struct TextEncoderConfig {
  int buckets = 4096;
  int token_dim = 64;
  int embed_dim = 256;
};

// Word and character-trigram features hashed into a fixed table, averaged,
// then linearly projected and L2-normalized.
template <class T>
class TextEncoder {
 public:
  static TextEncoder build(ParamStore<T>& ps, const TextEncoderConfig& cfg, Rng& rng) {
    TextEncoder e;
    e.cfg_ = cfg;
    e.table_ = ps.get_or_create("knowledge.encoder.table", {cfg.buckets, cfg.token_dim}, Init::normal(1.0), rng);
    e.project_ = nn::Linear<T>::make(ps, "knowledge.encoder.project", cfg.token_dim, cfg.embed_dim, rng);
    return e;
  }

  const TextEncoderConfig& config() const noexcept { return cfg_; }

  std::vector<int> features(const std::string& text) const {
    std::vector<std::string> words;
    std::string cur;
    for (char ch : text) {
      if (std::isalnum(static_cast<unsigned char>(ch))) {
        cur += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
      } else if (!cur.empty()) {
        words.push_back(std::move(cur));
        cur.clear();
      }
    }
    if (!cur.empty()) words.push_back(cur);
    std::vector<int> ids;
    for (const auto& w : words) {
      ids.push_back(bucket("w:" + w));
      const std::string padded = "<" + w + ">";
      for (std::size_t i = 0; i + 3 <= padded.size(); ++i) ids.push_back(bucket("g:" + padded.substr(i, 3)));
    }
    if (ids.empty()) ids.push_back(bucket("<empty>"));
    return ids;
  }

  // [1, embed_dim], unit norm.
  Var<T> encode(const std::string& text) const {
    const std::vector<int> ids = features(text);
    const Var<T> bag = ag::reshape(ag::mean_axis(ag::index_rows(table_, ids), 0), {1, cfg_.token_dim});
    return ag::l2_normalize_rows(project_(bag));
  }

 private:
  int bucket(const std::string& key) const { return static_cast<int>(hash_string(key) % static_cast<std::uint64_t>(cfg_.buckets)); }

  TextEncoderConfig cfg_;
  Var<T> table_;
  nn::Linear<T> project_;
};

// Contrastive loss on score vectors: f_tar . f_pos / tau against
// f_tar . f_neg / tau. The default denominator includes the positive term;
// negatives_only restricts it to the negatives.
template <class T>
Var<T> contrastive_loss(const Var<T>& target, const Var<T>& positive, const Var<T>& negatives, double tau,
                        bool negatives_only = false) {
  if (!(tau > 0.0)) throw InvalidArgument("contrastive_loss: temperature must be positive");
  if (negatives.shape()[0] < 1) throw InvalidArgument("contrastive_loss: at least one negative required");
  for (const Var<T>* v : {&target, &positive, &negatives}) {
    const int d = v->shape().back();
    for (std::size_t r = 0; r < v->size() / d; ++r) {
      T n = 0;
      for (int c = 0; c < d; ++c) n += v->value()[r * d + c] * v->value()[r * d + c];
      if (n == T(0)) throw InvalidArgument("contrastive_loss: zero vector input");
    }
  }
  const Var<T> candidates = ag::concat_rows(std::vector<Var<T>>{positive, negatives});
  const Var<T> scores = ag::scale(ag::matmul_nt(target, candidates), static_cast<T>(1.0 / tau));
  return ag::contrastive_nll(scores, !negatives_only);
}

inline double contrastive_loss(const std::vector<double>& target, const std::vector<double>& positive,
                               const std::vector<std::vector<double>>& negatives, double tau, bool negatives_only = false) {
  const int d = static_cast<int>(target.size());
  if (positive.size() != target.size()) throw ShapeError("contrastive_loss: positive length");
  std::vector<double> flat;
  for (const auto& n : negatives) {
    if (static_cast<int>(n.size()) != d) throw ShapeError("contrastive_loss: negative length");
    flat.insert(flat.end(), n.begin(), n.end());
  }
  if (negatives.empty()) throw InvalidArgument("contrastive_loss: at least one negative required");
  return contrastive_loss(Var<double>::constant(Tensor<double>({1, d}, target)),
                          Var<double>::constant(Tensor<double>({1, d}, positive)),
                          Var<double>::constant(Tensor<double>({static_cast<int>(negatives.size()), d}, flat)), tau,
                          negatives_only)
      .item();
}

struct KnowledgeTrainConfig {
  int epochs = 30;
  int batch_size = 16;
  double learning_rate = 5e-3;
  double temperature = 0.07;
  int negatives = 32;
  bool negatives_only = false;
  std::uint64_t seed = 0;
};

struct PretrainResult {
  std::vector<double> epoch_loss;
  std::vector<std::string> warnings;
};

// Fine-tunes the encoder in place. Negatives for a pair are positives of
// other anchors under the same relation, so texts are always compared with
// texts of the same format.
template <class T>
PretrainResult pretrain_knowledge_encoder(const std::vector<KnowledgeTriple>& triples, ParamStore<T>& params,
                                          const TextEncoder<T>& encoder, const KnowledgeTrainConfig& cfg) {
  if (triples.empty()) throw InvalidArgument("pretrain_knowledge_encoder: no knowledge triples");
  std::set<std::string> anchors;
  for (const auto& t : triples) anchors.insert(t.anchor);
  if (anchors.size() < 2) throw InvalidArgument("pretrain_knowledge_encoder: need at least two distinct anchors");

  PretrainResult result;
  std::vector<std::vector<std::string>> pools(triples.size());
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < triples.size(); ++i) {
    std::set<std::string> pool;
    for (const auto& o : triples)
      if (o.relation == triples[i].relation && o.anchor != triples[i].anchor && o.positive != triples[i].positive)
        pool.insert(o.positive);
    if (pool.empty()) {
      result.warnings.push_back("no " + std::string(to_string(triples[i].relation)) + " negatives for anchor \"" +
                                triples[i].anchor + "\"; pair skipped");
      continue;
    }
    pools[i].assign(pool.begin(), pool.end());
    usable.push_back(i);
  }
  if (usable.empty()) return result;

  Rng rng(derive_seed(cfg.seed, "knowledge_pretrain"));
  AdamW<T> opt;
  opt.weight_decay = 0.0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(usable);
    double total = 0.0;
    for (std::size_t start = 0; start < usable.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(usable.size(), start + static_cast<std::size_t>(cfg.batch_size));
      params.zero_grad();
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t i = usable[b];
        std::vector<std::string> pool = pools[i];
        rng.shuffle(pool);
        if (static_cast<int>(pool.size()) > cfg.negatives) pool.resize(cfg.negatives);
        std::vector<Var<T>> negs;
        for (const auto& text : pool) negs.push_back(encoder.encode(text));
        Var<T> loss = contrastive_loss(encoder.encode(triples[i].anchor), encoder.encode(triples[i].positive),
                                       ag::concat_rows(negs), cfg.temperature, cfg.negatives_only);
        loss = ag::scale(loss, static_cast<T>(1.0 / static_cast<double>(end - start)));
        total += loss.item() * static_cast<double>(end - start);
        loss.backward();
      }
      opt.step(params, cfg.learning_rate);
    }
    result.epoch_loss.push_back(total / static_cast<double>(usable.size()));
  }
  return result;
}

// Row-normalized class-name embeddings [c, d] in label-space order.
template <class T>
Tensor<T> embed_labels(const LabelSpace& labels, const TextEncoder<T>& encoder) {
  const int d = encoder.config().embed_dim;
  Tensor<T> out({static_cast<int>(labels.size()), d});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const Var<T> row = encoder.encode(labels.names[i]);
    std::copy_n(row.value().data(), d, out.data() + i * d);
  }
  return out;
}

}  // namespace casedx
