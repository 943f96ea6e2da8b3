#pragma once

// Sensory words: the characters of all sensors at one axis and one window
// offset, tagged with the axis. Sequences become bags of word ids.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "senselda/codebook.hpp"
#include "senselda/dataset.hpp"
#include "senselda/error.hpp"

namespace senselda {

using WordId = std::uint32_t;

struct SensoryWord {
  Axis axis{};
  std::vector<std::pair<Sensor, std::size_t>> characters;  // canonical sensor order

  bool operator==(const SensoryWord&) const = default;
};

/// "<axis>:<sensor>=<idx>|<sensor>=<idx>", e.g. "x:acc=3|gyro=17".
inline std::string render(const SensoryWord& w) {
  std::string out(axis_name(w.axis));
  out += ':';
  for (std::size_t i = 0; i < w.characters.size(); ++i) {
    if (i) out += '|';
    out += sensor_name(w.characters[i].first);
    out += '=';
    out += std::to_string(w.characters[i].second);
  }
  return out;
}

inline SensoryWord parse_word(std::string_view token) {
  const auto colon = token.find(':');
  if (colon == std::string_view::npos) throw DataError("malformed sensory word '" + std::string(token) + "'");
  try {
    SensoryWord w;
    w.axis = parse_axis(token.substr(0, colon));
    for (const auto& part : split(token.substr(colon + 1), '|')) {
      const auto eq = part.find('=');
      if (eq == std::string::npos) throw DataError("malformed sensory word '" + std::string(token) + "'");
      w.characters.emplace_back(parse_sensor(part.substr(0, eq)),
                                parse_number<std::size_t>(part.substr(eq + 1), "character"));
    }
    return w;
  } catch (const ConfigError&) {
    throw DataError("malformed sensory word '" + std::string(token) + "'");
  }
}

class Vocabulary {
 public:
  std::size_t size() const { return tokens_.size(); }
  bool empty() const { return tokens_.empty(); }

  std::optional<WordId> find(const std::string& token) const {
    const auto it = ids_.find(token);
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }

  /// Id of `token`, appending it if new.
  WordId intern(const std::string& token) {
    const auto [it, inserted] = ids_.try_emplace(token, static_cast<WordId>(tokens_.size()));
    if (inserted) tokens_.push_back(token);
    return it->second;
  }

  const std::string& token(WordId id) const { return tokens_.at(id); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// Order-sensitive 64-bit digest, used to pair models with vocabularies.
  std::uint64_t digest() const {
    std::uint64_t h = fnv1a64("vocab");
    for (const auto& t : tokens_) h = mix64(h ^ fnv1a64(t));
    return h;
  }

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, WordId> ids_;
};

struct BowDocument {
  std::vector<WordId> tokens;
  std::size_t source = 0;  // index of the sequence in its dataset
  std::optional<ActivityLabel> label;
  std::size_t oov_count = 0;  // words with no id in a frozen vocabulary

  bool operator==(const BowDocument&) const = default;
};

struct BowCorpus {
  std::vector<BowDocument> documents;
  Vocabulary vocabulary;
  std::vector<std::string> removed;  // words stripped by remove_top_words, most frequent first

  std::size_t size() const { return documents.size(); }

  std::size_t total_tokens() const {
    std::size_t n = 0;
    for (const auto& d : documents) n += d.tokens.size();
    return n;
  }

  std::size_t oov_tokens() const {
    std::size_t n = 0;
    for (const auto& d : documents) n += d.oov_count;
    return n;
  }

  std::vector<std::optional<ActivityLabel>> labels() const {
    std::vector<std::optional<ActivityLabel>> out;
    for (const auto& d : documents) out.push_back(d.label);
    return out;
  }
};

/// One word per (axis, window offset), axes in X, Y, Z order.
inline std::vector<SensoryWord> compose_words(const DataSequence& seq, const CodebookSet& codebooks) {
  std::vector<ChannelKey> keys;
  for (const auto& [key, _] : seq.channels) keys.push_back(key);
  if (keys != codebooks.channels()) throw DataError("composition error: sequence channels do not match codebooks");
  const std::size_t windows = window_count(seq.length(), codebooks.window);

  std::vector<SensoryWord> words;
  words.reserve(windows * 3);
  for (Axis axis : kAxes) {
    std::vector<ChannelKey> on_axis;
    for (const auto& key : keys)
      if (key.axis == axis) on_axis.push_back(key);
    if (on_axis.empty()) continue;
    for (std::size_t i = 0; i < windows; ++i) {
      SensoryWord w{axis, {}};
      const std::size_t off = i * codebooks.window.stride;
      for (const auto& key : on_axis) {
        const auto series = std::span<const double>(seq.channel(key)).subspan(off, codebooks.window.size);
        w.characters.emplace_back(key.sensor, assign_character(codebooks.at(key), series));
      }
      words.push_back(std::move(w));
    }
  }
  return words;
}

/// Without `frozen`, builds a training corpus and its vocabulary (ids in
/// first-occurrence order). With `frozen`, unseen words are tallied per
/// document in oov_count and left out of the token list.
inline BowCorpus build_corpus(const MultiSensorDataset& ds, const CodebookSet& codebooks,
                              const Vocabulary* frozen = nullptr) {
  BowCorpus corpus;
  if (frozen) corpus.vocabulary = *frozen;
  corpus.documents.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    BowDocument doc;
    doc.source = i;
    doc.label = ds.sequences[i].label;
    for (const auto& w : compose_words(ds.sequences[i], codebooks)) {
      const auto token = render(w);
      if (frozen) {
        if (const auto id = corpus.vocabulary.find(token)) doc.tokens.push_back(*id);
        else ++doc.oov_count;
      } else {
        doc.tokens.push_back(corpus.vocabulary.intern(token));
      }
    }
    corpus.documents.push_back(std::move(doc));
  }
  return corpus;
}

/// (word id, count) sorted by count descending, ties by id. Zero counts omitted.
inline std::vector<std::pair<WordId, std::size_t>> word_frequencies(const BowCorpus& corpus) {
  std::vector<std::size_t> counts(corpus.vocabulary.size(), 0);
  for (const auto& d : corpus.documents)
    for (WordId w : d.tokens) ++counts.at(w);
  std::vector<std::pair<WordId, std::size_t>> out;
  for (std::size_t w = 0; w < counts.size(); ++w)
    if (counts[w] > 0) out.emplace_back(static_cast<WordId>(w), counts[w]);
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  return out;
}

/// Re-expresses `corpus` over `target` (matching tokens by their rendered
/// form). Tokens missing from `target` are dropped.
inline BowCorpus restrict_to_vocabulary(const BowCorpus& corpus, const Vocabulary& target) {
  std::vector<std::optional<WordId>> remap(corpus.vocabulary.size());
  for (std::size_t w = 0; w < remap.size(); ++w) remap[w] = target.find(corpus.vocabulary.token(static_cast<WordId>(w)));
  BowCorpus out;
  out.vocabulary = target;
  out.removed = corpus.removed;
  out.documents.reserve(corpus.size());
  for (const auto& d : corpus.documents) {
    BowDocument nd{{}, d.source, d.label, d.oov_count};
    for (WordId w : d.tokens)
      if (remap[w]) nd.tokens.push_back(*remap[w]);
    out.documents.push_back(std::move(nd));
  }
  return out;
}

/// Strips the n most frequent words; surviving ids are re-indexed in their
/// original relative order. The input is not modified.
inline BowCorpus remove_top_words(const BowCorpus& corpus, std::size_t n) {
  if (n > corpus.vocabulary.size())
    throw DataError("remove_top_words: n = " + std::to_string(n) + " exceeds vocabulary size " +
                    std::to_string(corpus.vocabulary.size()));
  const auto freq = word_frequencies(corpus);
  std::vector<bool> drop(corpus.vocabulary.size(), false);
  std::vector<std::string> removed = corpus.removed;
  // Words with zero count rank after every observed word, by id.
  std::size_t dropped = 0;
  for (std::size_t i = 0; i < freq.size() && dropped < n; ++i, ++dropped) {
    drop[freq[i].first] = true;
    removed.push_back(corpus.vocabulary.token(freq[i].first));
  }
  for (std::size_t w = 0; w < drop.size() && dropped < n; ++w)
    if (!drop[w]) {
      drop[w] = true;
      removed.push_back(corpus.vocabulary.token(static_cast<WordId>(w)));
      ++dropped;
    }
  Vocabulary kept;
  for (std::size_t w = 0; w < drop.size(); ++w)
    if (!drop[w]) kept.intern(corpus.vocabulary.token(static_cast<WordId>(w)));
  auto out = restrict_to_vocabulary(corpus, kept);
  out.removed = std::move(removed);
  return out;
}

// ---------------------------------------------------------------------------
// Interchange files

inline nlohmann::json to_json(const Vocabulary& vocab) {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t i = 0; i < vocab.size(); ++i) j[vocab.token(static_cast<WordId>(i))] = i;
  return j;
}

inline Vocabulary vocabulary_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw DataError("vocabulary json must be an object");
  std::vector<std::string> by_id(j.size());
  std::vector<bool> seen(j.size(), false);
  for (const auto& [token, id_json] : j.items()) {
    if (!id_json.is_number_unsigned()) throw DataError("vocabulary id for '" + token + "' is not an unsigned integer");
    const auto id = id_json.get<std::size_t>();
    if (id >= by_id.size() || seen[id]) throw DataError("vocabulary ids must be contiguous from 0");
    by_id[id] = token;
    seen[id] = true;
  }
  Vocabulary v;
  for (const auto& t : by_id) v.intern(t);
  return v;
}

/// One document per line, tokens in rendered form separated by spaces.
inline void write_corpus_documents(const BowCorpus& corpus, std::ostream& out) {
  for (const auto& d : corpus.documents) {
    for (std::size_t i = 0; i < d.tokens.size(); ++i) {
      if (i) out << ' ';
      out << corpus.vocabulary.token(d.tokens[i]);
    }
    out << '\n';
  }
}

/// Reads documents written by write_corpus_documents against `vocab`; unknown
/// tokens count as OOV.
inline BowCorpus read_corpus_documents(std::istream& in, const Vocabulary& vocab) {
  BowCorpus corpus;
  corpus.vocabulary = vocab;
  std::string line;
  while (std::getline(in, line)) {
    BowDocument d;
    d.source = corpus.documents.size();
    for (const auto& tok : split(trim(line), ' ')) {
      if (tok.empty()) continue;
      if (const auto id = vocab.find(tok)) d.tokens.push_back(*id);
      else ++d.oov_count;
    }
    corpus.documents.push_back(std::move(d));
  }
  return corpus;
}

}  // namespace senselda
