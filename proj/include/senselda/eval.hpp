#pragma once

// Extrinsic evaluation: each document goes to its most probable topic,
// topics are matched to ground-truth classes, and precision / recall / F1
// are computed per class and macro-averaged.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "senselda/dataset.hpp"
#include "senselda/error.hpp"
#include "senselda/lda.hpp"
#include "senselda/sensory_words.hpp"

namespace senselda {

/// argmax per row, ties to the lowest topic index.
inline std::size_t argmax(const std::vector<double>& row) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < row.size(); ++k)
    if (row[k] > row[best]) best = k;
  return best;
}

inline std::vector<std::size_t> assign_classes(const Theta& theta) {
  std::vector<std::size_t> out;
  out.reserve(theta.size());
  for (const auto& row : theta) out.push_back(argmax(row));
  return out;
}

/// Topic x class counts.
struct ContingencyMatrix {
  std::size_t topics = 0;
  std::size_t classes = 0;
  std::vector<std::size_t> counts;

  ContingencyMatrix() = default;
  ContingencyMatrix(std::size_t k, std::size_t c) : topics(k), classes(c), counts(k * c, 0) {}

  std::size_t& at(std::size_t topic, std::size_t cls) { return counts[topic * classes + cls]; }
  std::size_t at(std::size_t topic, std::size_t cls) const { return counts[topic * classes + cls]; }

  std::size_t total() const {
    std::size_t n = 0;
    for (auto c : counts) n += c;
    return n;
  }
};

inline ContingencyMatrix build_contingency(const std::vector<std::size_t>& topics, const std::vector<int>& labels,
                                           std::size_t num_topics, std::size_t num_classes) {
  if (topics.size() != labels.size()) throw DataError("shape error: predictions and labels differ in length");
  ContingencyMatrix cm(num_topics, num_classes);
  for (std::size_t i = 0; i < topics.size(); ++i) {
    if (topics[i] >= num_topics || labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes)
      throw DataError("shape error: topic or label out of range at document " + std::to_string(i));
    ++cm.at(topics[i], static_cast<std::size_t>(labels[i]));
  }
  return cm;
}

struct TopicClassMapping {
  std::vector<std::size_t> topic_to_class;

  std::size_t operator[](std::size_t topic) const { return topic_to_class.at(topic); }

  bool is_bijection(std::size_t classes) const {
    if (topic_to_class.size() != classes) return false;
    std::vector<bool> seen(classes, false);
    for (auto c : topic_to_class) {
      if (c >= classes || seen[c]) return false;
      seen[c] = true;
    }
    return true;
  }

  bool operator==(const TopicClassMapping&) const = default;
};

/// Repeatedly binds the largest remaining cell (ties: lower topic, then lower
/// class) and removes its row and column.
inline TopicClassMapping map_topics_greedy(const ContingencyMatrix& cm) {
  if (cm.topics != cm.classes)
    throw DataError("mapping error: " + std::to_string(cm.topics) + " topics vs " + std::to_string(cm.classes) +
                    " classes");
  const std::size_t n = cm.topics;
  TopicClassMapping m;
  m.topic_to_class.assign(n, 0);
  std::vector<bool> row_used(n, false), col_used(n, false);
  for (std::size_t step = 0; step < n; ++step) {
    std::size_t best_t = n, best_c = n;
    for (std::size_t t = 0; t < n; ++t) {
      if (row_used[t]) continue;
      for (std::size_t c = 0; c < n; ++c) {
        if (col_used[c]) continue;
        if (best_t == n || cm.at(t, c) > cm.at(best_t, best_c)) {
          best_t = t;
          best_c = c;
        }
      }
    }
    m.topic_to_class[best_t] = best_c;
    row_used[best_t] = true;
    col_used[best_c] = true;
  }
  return m;
}

/// Maximum-weight bijection (Hungarian algorithm, O(n^3)).
inline TopicClassMapping map_topics_optimal(const ContingencyMatrix& cm) {
  if (cm.topics != cm.classes)
    throw DataError("mapping error: " + std::to_string(cm.topics) + " topics vs " + std::to_string(cm.classes) +
                    " classes");
  const std::size_t n = cm.topics;
  std::size_t max_cell = 0;
  for (auto c : cm.counts) max_cell = std::max(max_cell, c);
  // Minimize cost = max_cell - count; 1-based potentials.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<bool> used(n + 1);
  auto cost = [&](std::size_t i, std::size_t j) {
    return static_cast<double>(max_cell) - static_cast<double>(cm.at(i - 1, j - 1));
  };
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  TopicClassMapping m;
  m.topic_to_class.assign(n, 0);
  for (std::size_t j = 1; j <= n; ++j) m.topic_to_class[p[j] - 1] = j - 1;
  return m;
}

enum class MappingMode { Greedy, Optimal };

inline MappingMode parse_mapping_mode(std::string_view s) {
  if (s == "greedy") return MappingMode::Greedy;
  if (s == "optimal") return MappingMode::Optimal;
  throw ConfigError("mapping must be 'greedy' or 'optimal'");
}

constexpr std::string_view mapping_mode_name(MappingMode m) { return m == MappingMode::Greedy ? "greedy" : "optimal"; }

inline TopicClassMapping map_topics(const ContingencyMatrix& cm, MappingMode mode = MappingMode::Greedy) {
  return mode == MappingMode::Greedy ? map_topics_greedy(cm) : map_topics_optimal(cm);
}

/// Fraction of documents whose topic maps onto their class.
inline double mapped_accuracy(const ContingencyMatrix& cm, const TopicClassMapping& m) {
  const auto total = cm.total();
  if (total == 0) return 0.0;
  std::size_t hit = 0;
  for (std::size_t t = 0; t < cm.topics; ++t) hit += cm.at(t, m[t]);
  return static_cast<double>(hit) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------

struct CorpusStats {
  std::size_t documents = 0;  // D
  std::size_t tokens = 0;     // N
  std::size_t mean_length = 0;  // B = round(N / D)
  std::size_t vocabulary = 0;   // V
  std::size_t topics = 0;       // K

  bool operator==(const CorpusStats&) const = default;
};

inline CorpusStats corpus_statistics(const BowCorpus& corpus, std::size_t topics) {
  CorpusStats s;
  s.documents = corpus.size();
  s.tokens = corpus.total_tokens();
  s.mean_length = s.documents
                      ? static_cast<std::size_t>(std::llround(static_cast<double>(s.tokens) / static_cast<double>(s.documents)))
                      : 0;
  s.vocabulary = corpus.vocabulary.size();
  s.topics = topics;
  return s;
}

struct ClassScores {
  std::string name;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

struct EvalReport {
  std::vector<ClassScores> per_class;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  double accuracy = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // actual x predicted class
  TopicClassMapping mapping;
  std::optional<CorpusStats> stats;

  const ClassScores& scores(std::string_view name) const {
    for (const auto& c : per_class)
      if (c.name == name) return c;
    throw DataError("no class named '" + std::string(name) + "'");
  }
};

inline double f1_score(double precision, double recall) {
  return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

/// `topics[i]` is the predicted topic of document i, `labels[i]` its class id.
/// Classes are reported in the order of `classes`.
inline EvalReport compute_report(const std::vector<std::size_t>& topics, const std::vector<int>& labels,
                                 const TopicClassMapping& mapping, const std::vector<ActivityLabel>& classes,
                                 std::optional<CorpusStats> stats = std::nullopt) {
  if (topics.size() != labels.size()) throw DataError("shape error: predictions and labels differ in length");
  const std::size_t C = classes.size();
  if (!mapping.is_bijection(C)) throw DataError("shape error: topic mapping is not a bijection onto the classes");

  EvalReport r;
  r.mapping = mapping;
  r.stats = stats;
  r.confusion.assign(C, std::vector<std::size_t>(C, 0));
  for (std::size_t i = 0; i < topics.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= C || topics[i] >= C)
      throw DataError("shape error: topic or label out of range at document " + std::to_string(i));
    ++r.confusion[static_cast<std::size_t>(labels[i])][mapping[topics[i]]];
  }

  std::size_t correct = 0;
  for (std::size_t c = 0; c < C; ++c) {
    std::size_t tp = r.confusion[c][c], row = 0, col = 0;
    for (std::size_t j = 0; j < C; ++j) {
      row += r.confusion[c][j];
      col += r.confusion[j][c];
    }
    correct += tp;
    ClassScores s;
    s.name = classes[c].name;
    s.support = row;
    s.precision = col ? static_cast<double>(tp) / static_cast<double>(col) : 0.0;
    s.recall = row ? static_cast<double>(tp) / static_cast<double>(row) : 0.0;
    s.f1 = f1_score(s.precision, s.recall);
    r.macro_precision += s.precision;
    r.macro_recall += s.recall;
    r.macro_f1 += s.f1;
    r.per_class.push_back(std::move(s));
  }
  if (C) {
    r.macro_precision /= static_cast<double>(C);
    r.macro_recall /= static_cast<double>(C);
    r.macro_f1 /= static_cast<double>(C);
  }
  r.accuracy = topics.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(topics.size());
  return r;
}

/// Class ids of labeled documents; throws if any document is unlabeled.
inline std::vector<int> label_ids(const BowCorpus& corpus) {
  std::vector<int> out;
  out.reserve(corpus.size());
  for (const auto& d : corpus.documents) {
    if (!d.label) throw DataError("document " + std::to_string(d.source) + " has no label");
    out.push_back(d.label->id);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Export

inline nlohmann::json to_json(const CorpusStats& s) {
  return {{"D", s.documents}, {"N", s.tokens}, {"B", s.mean_length}, {"V", s.vocabulary}, {"K", s.topics}};
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  auto& pc = j["per_class"] = nlohmann::json::array();
  for (const auto& c : r.per_class)
    pc.push_back({{"class", c.name}, {"precision", c.precision}, {"recall", c.recall}, {"f1", c.f1}, {"support", c.support}});
  j["macro"] = {{"precision", r.macro_precision}, {"recall", r.macro_recall}, {"f1", r.macro_f1}};
  j["accuracy"] = r.accuracy;
  j["confusion"] = r.confusion;
  j["topic_to_class"] = r.mapping.topic_to_class;
  if (r.stats) j["corpus_stats"] = to_json(*r.stats);
  return j;
}

inline EvalReport eval_report_from_json(const nlohmann::json& j) {
  try {
    EvalReport r;
    for (const auto& c : j.at("per_class"))
      r.per_class.push_back({c.at("class").get<std::string>(), c.at("precision").get<double>(),
                             c.at("recall").get<double>(), c.at("f1").get<double>(), c.at("support").get<std::size_t>()});
    r.macro_precision = j.at("macro").at("precision").get<double>();
    r.macro_recall = j.at("macro").at("recall").get<double>();
    r.macro_f1 = j.at("macro").at("f1").get<double>();
    r.accuracy = j.at("accuracy").get<double>();
    r.confusion = j.at("confusion").get<std::vector<std::vector<std::size_t>>>();
    r.mapping.topic_to_class = j.at("topic_to_class").get<std::vector<std::size_t>>();
    if (j.contains("corpus_stats")) {
      const auto& s = j.at("corpus_stats");
      r.stats = CorpusStats{s.at("D").get<std::size_t>(), s.at("N").get<std::size_t>(), s.at("B").get<std::size_t>(),
                            s.at("V").get<std::size_t>(), s.at("K").get<std::size_t>()};
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed report json: ") + e.what());
  }
}

inline void write_confusion_csv(const EvalReport& r, std::ostream& out) {
  out << "actual";
  for (const auto& c : r.per_class) out << ',' << c.name;
  out << '\n';
  for (std::size_t i = 0; i < r.per_class.size(); ++i) {
    out << r.per_class[i].name;
    for (auto v : r.confusion[i]) out << ',' << v;
    out << '\n';
  }
}

/// doc_id, true_label, predicted_class, theta_0..theta_{K-1}. The predicted
/// class is the mapped class name when a mapping is available, else the topic.
inline void write_theta_csv(const Theta& theta, const BowCorpus& corpus, const TopicClassMapping* mapping,
                            const std::vector<ActivityLabel>& classes, std::ostream& out) {
  const std::size_t K = theta.empty() ? 0 : theta.front().size();
  out << "doc_id,true_label,predicted_class";
  for (std::size_t k = 0; k < K; ++k) out << ",theta_" << k;
  out << '\n';
  for (std::size_t d = 0; d < theta.size(); ++d) {
    const auto& doc = corpus.documents[d];
    out << doc.source << ',' << (doc.label ? doc.label->name : std::string()) << ',';
    const auto topic = argmax(theta[d]);
    if (mapping && topic < mapping->topic_to_class.size() && (*mapping)[topic] < classes.size())
      out << classes[(*mapping)[topic]].name;
    else
      out << "topic" << topic;
    for (double x : theta[d]) out << ',' << format_double(x);
    out << '\n';
  }
}

}  // namespace senselda
