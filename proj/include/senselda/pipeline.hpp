#pragma once

// End-to-end runs: dataset -> codebooks -> corpus -> LDA -> evaluation, plus
// the artifact bundle on disk, the (p, v) sweep and the frequent-word
// ablation. The CLI is a thin layer over this header.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "senselda/codebook.hpp"
#include "senselda/dataset.hpp"
#include "senselda/error.hpp"
#include "senselda/eval.hpp"
#include "senselda/kvfile.hpp"
#include "senselda/lda.hpp"
#include "senselda/sensory_words.hpp"

namespace senselda {

namespace fs = std::filesystem;

struct RunConfig {
  std::string data;  // UCI-HAR root directory or synthetic config file
  std::size_t p = 30;
  std::size_t v = 29;
  std::size_t topics = 0;        // 0: number of ground-truth classes
  std::optional<double> alpha;   // unset: 50 / K
  double beta = 0.01;
  std::size_t iterations = 1000;
  std::size_t burn_in = 500;
  std::size_t sample_lag = 0;
  std::uint64_t seed = 1;
  MappingMode mapping = MappingMode::Greedy;
  bool remap_on_test = false;
  bool fit_hyperparams = false;
  std::size_t kmeans_max_iterations = 300;
  double kmeans_tolerance = 1e-6;
  std::size_t restarts = 1;
  std::string out = "out";

  WindowConfig window() const { return WindowConfig::half_overlap(p); }
  KMeansConfig kmeans() const { return {kmeans_max_iterations, kmeans_tolerance, restarts}; }
  SamplerConfig sampler() const { return {iterations, burn_in, sample_lag}; }

  std::uint64_t codebook_seed() const { return derive_seed(seed, "codebooks"); }
  std::uint64_t lda_seed() const { return derive_seed(seed, "lda"); }
  std::uint64_t fold_in_seed() const { return derive_seed(seed, "fold-in"); }
  std::uint64_t fit_seed() const { return derive_seed(seed, "fit"); }

  LdaHyperparams hyperparams(std::size_t k) const {
    auto hp = LdaHyperparams::defaults(k);
    if (alpha) hp.alpha = *alpha;
    hp.beta = beta;
    return hp;
  }

  void validate() const {
    if (p < 2) throw ConfigError("p must be >= 2");
    if (v < 2) throw ConfigError("v must be >= 2");
    if (alpha && !(*alpha > 0.0)) throw ConfigError("alpha must be positive");
    if (!(beta > 0.0)) throw ConfigError("beta must be positive");
    sampler().validate();
    if (restarts < 1) throw ConfigError("restarts must be >= 1");
    if (kmeans_max_iterations < 1) throw ConfigError("kmeans_max_iterations must be >= 1");
  }

  KeyValues to_kv() const {
    return {{"data", data},
            {"p", std::to_string(p)},
            {"v", std::to_string(v)},
            {"k", topics ? std::to_string(topics) : "auto"},
            {"alpha", alpha ? format_double(*alpha) : "auto"},
            {"beta", format_double(beta)},
            {"iters", std::to_string(iterations)},
            {"burn_in", std::to_string(burn_in)},
            {"sample_lag", std::to_string(sample_lag)},
            {"seed", std::to_string(seed)},
            {"mapping", std::string(mapping_mode_name(mapping))},
            {"remap_on_test", remap_on_test ? "true" : "false"},
            {"fit_hyperparams", fit_hyperparams ? "true" : "false"},
            {"kmeans_max_iter", std::to_string(kmeans_max_iterations)},
            {"kmeans_tol", format_double(kmeans_tolerance)},
            {"restarts", std::to_string(restarts)},
            {"out", out}};
  }

  /// Applies every recognised key of `kv` on top of the current values.
  void merge(const KeyValues& kv) {
    auto flag = [](const std::string& key, const std::string& value) {
      if (value == "true" || value == "1") return true;
      if (value == "false" || value == "0") return false;
      throw ConfigError("invalid boolean for '" + key + "': '" + value + "'");
    };
    for (const auto& [key, value] : kv) {
      if (key == "data") data = value;
      else if (key == "p") p = parse_number<std::size_t>(value, key);
      else if (key == "v") v = parse_number<std::size_t>(value, key);
      else if (key == "k") topics = value == "auto" ? 0 : parse_number<std::size_t>(value, key);
      else if (key == "alpha") alpha = value == "auto" ? std::nullopt : std::optional(parse_number<double>(value, key));
      else if (key == "beta") beta = parse_number<double>(value, key);
      else if (key == "iters") iterations = parse_number<std::size_t>(value, key);
      else if (key == "burn_in") burn_in = parse_number<std::size_t>(value, key);
      else if (key == "sample_lag") sample_lag = parse_number<std::size_t>(value, key);
      else if (key == "seed") seed = parse_number<std::uint64_t>(value, key);
      else if (key == "mapping") mapping = parse_mapping_mode(value);
      else if (key == "remap_on_test") remap_on_test = flag(key, value);
      else if (key == "fit_hyperparams") fit_hyperparams = flag(key, value);
      else if (key == "kmeans_max_iter") kmeans_max_iterations = parse_number<std::size_t>(value, key);
      else if (key == "kmeans_tol") kmeans_tolerance = parse_number<double>(value, key);
      else if (key == "restarts") restarts = parse_number<std::size_t>(value, key);
      else if (key == "out") out = value;
      else throw ConfigError("unknown config key '" + key + "'");
    }
  }

  static RunConfig from_kv(const KeyValues& kv) {
    RunConfig c;
    c.merge(kv);
    return c;
  }
};

// ---------------------------------------------------------------------------
// Stages

[[noreturn]] inline void rethrow_in_stage(std::string_view stage, const Error& e) {
  const std::string msg = std::string(stage) + ": " + e.what();
  switch (e.kind()) {
    case ErrorKind::Config: throw ConfigError(msg);
    case ErrorKind::Data: throw DataError(msg);
    case ErrorKind::Invariant: break;
  }
  throw InvariantError(msg);
}

/// Runs `f`, prefixing any library error with the stage name.
template <class F>
auto in_stage(std::string_view stage, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    rethrow_in_stage(stage, e);
  }
}

// ---------------------------------------------------------------------------
// Data sources

/// A directory is read as the UCI-HAR layout; a file is a synthetic config
/// whose test split uses a seed derived from the configured one.
inline MultiSensorDataset load_dataset(const std::string& source, Split split) {
  if (source.empty()) throw ConfigError("no data source given (--data)");
  const fs::path path(source);
  if (fs::is_directory(path)) return load_ucihar(path, split);
  if (fs::is_regular_file(path)) {
    const auto cfg = synthetic_config_from_kv(read_kv_file(path));
    const auto seed = split == Split::Train ? cfg.seed : derive_seed(cfg.seed, "test-split");
    return generate_synthetic(cfg, seed);
  }
  throw DataError("data source not found: " + source);
}

// ---------------------------------------------------------------------------
// Model fitting and scoring

struct LdaStage {
  LdaModel model;
  Theta chain_theta;  // estimates from the Gibbs chain itself
  Theta theta;        // fold-in estimates, the basis of reports
  std::optional<TopicClassMapping> mapping;
  std::optional<EvalReport> report;
  std::optional<FitResult> fit;
};

inline std::size_t resolve_topics(const RunConfig& cfg, const std::vector<ActivityLabel>& classes) {
  if (cfg.topics) return cfg.topics;
  if (classes.empty()) throw ConfigError("k = auto needs labeled training data");
  return classes.size();
}

inline EvalReport score(const Theta& theta, const BowCorpus& corpus, const TopicClassMapping& mapping,
                        const std::vector<ActivityLabel>& classes, std::size_t topics) {
  return compute_report(assign_classes(theta), label_ids(corpus), mapping, classes, corpus_statistics(corpus, topics));
}

inline TopicClassMapping fit_mapping(const Theta& theta, const BowCorpus& corpus, std::size_t topics,
                                     std::size_t classes, MappingMode mode) {
  return map_topics(build_contingency(assign_classes(theta), label_ids(corpus), topics, classes), mode);
}

inline bool corpus_labeled(const BowCorpus& corpus) {
  return !corpus.documents.empty() &&
         std::all_of(corpus.documents.begin(), corpus.documents.end(), [](const auto& d) { return d.label.has_value(); });
}

/// Trains LDA on `corpus`, folds the training documents back in, and when the
/// corpus is labeled fits the topic->class mapping on it.
inline LdaStage fit_lda(const BowCorpus& corpus, const std::vector<ActivityLabel>& classes, const RunConfig& cfg) {
  const std::size_t K = resolve_topics(cfg, classes);
  auto hp = cfg.hyperparams(K);
  LdaStage st;
  if (cfg.fit_hyperparams) {
    st.fit = fit_hyperparams(corpus, K, cfg.fit_seed());
    hp = st.fit->hyper;
  }
  auto tr = train(corpus, hp, cfg.sampler(), cfg.lda_seed());
  st.model = std::move(tr.model);
  st.chain_theta = std::move(tr.theta);
  st.theta = fold_in_corpus(st.model, corpus, cfg.sampler(), cfg.fold_in_seed()).theta;
  if (corpus_labeled(corpus) && !classes.empty() && K == classes.size()) {
    st.mapping = fit_mapping(st.theta, corpus, K, classes.size(), cfg.mapping);
    st.report = score(st.theta, corpus, *st.mapping, classes, K);
  }
  return st;
}

struct ApplyResult {
  Theta theta;
  std::size_t empty_documents = 0;
  std::optional<EvalReport> report;    // mapping frozen from training (or remapped with remap_on_test)
  std::optional<EvalReport> remapped;  // mapping refitted on this split, for comparison
};

inline ApplyResult apply_model(const LdaModel& model, const BowCorpus& corpus,
                               const std::optional<TopicClassMapping>& train_mapping,
                               const std::vector<ActivityLabel>& classes, const RunConfig& cfg) {
  ApplyResult r;
  auto fi = fold_in_corpus(model, corpus, cfg.sampler(), cfg.fold_in_seed());
  r.theta = std::move(fi.theta);
  r.empty_documents = fi.empty_documents;
  const std::size_t K = model.topics();
  if (corpus_labeled(corpus) && !classes.empty() && K == classes.size()) {
    const auto remap = fit_mapping(r.theta, corpus, K, classes.size(), cfg.mapping);
    r.remapped = score(r.theta, corpus, remap, classes, K);
    if (cfg.remap_on_test || !train_mapping) r.report = r.remapped;
    else r.report = score(r.theta, corpus, *train_mapping, classes, K);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Bundle

struct Bundle {
  RunConfig config;
  CodebookSet codebooks;
  Vocabulary vocabulary;
  LdaModel model;
  std::vector<ActivityLabel> classes;
  std::optional<TopicClassMapping> mapping;
  std::optional<EvalReport> report;
};

inline void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

inline nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

inline void write_run_log(const fs::path& dir, const RunConfig& cfg, const std::string& command,
                          const std::vector<std::string>& notes = {}) {
  std::ofstream out(dir / "run.log");
  out << "# senselda " << command << " -- resolved configuration; usable as --config\n";
  out << "# derived seeds: codebooks=" << cfg.codebook_seed() << " lda=" << cfg.lda_seed()
      << " fold_in=" << cfg.fold_in_seed() << " fit=" << cfg.fit_seed() << '\n';
  for (const auto& n : notes) out << "# " << n << '\n';
  write_kv(out, cfg.to_kv());
}

inline nlohmann::json report_json(const EvalReport& r, const std::vector<ActivityLabel>& classes) {
  auto j = to_json(r);
  auto& names = j["classes"] = nlohmann::json::array();
  for (const auto& c : classes) names.push_back(c.name);
  return j;
}

inline std::vector<ActivityLabel> classes_from_names(const std::vector<std::string>& names) {
  std::vector<ActivityLabel> out;
  for (std::size_t i = 0; i < names.size(); ++i) out.push_back({static_cast<int>(i), names[i]});
  return out;
}

inline void write_bundle(const fs::path& dir, const Bundle& b) {
  fs::create_directories(dir);
  write_json(dir / "codebooks.json", to_json(b.codebooks));
  write_json(dir / "vocab.json", to_json(b.vocabulary));
  auto model = to_json(b.model);
  auto& names = model["classes"] = nlohmann::json::array();
  for (const auto& c : b.classes) names.push_back(c.name);
  if (b.mapping) model["topic_to_class"] = b.mapping->topic_to_class;
  write_json(dir / "model.json", model);
  if (b.report) {
    write_json(dir / "report.json", report_json(*b.report, b.classes));
    std::ofstream csv(dir / "confusion.csv");
    write_confusion_csv(*b.report, csv);
  }
}

inline Bundle read_bundle(const fs::path& dir) {
  Bundle b;
  if (!fs::is_directory(dir)) throw DataError("bundle directory not found: " + dir.string());
  if (fs::exists(dir / "run.log")) b.config = RunConfig::from_kv(read_kv_file(dir / "run.log"));
  b.codebooks = codebooks_from_json(read_json(dir / "codebooks.json"));
  b.vocabulary = vocabulary_from_json(read_json(dir / "vocab.json"));
  const auto mj = read_json(dir / "model.json");
  b.model = lda_model_from_json(mj);
  if (b.model.vocab_digest != b.vocabulary.digest() || b.model.vocab_size != b.vocabulary.size())
    throw DataError("bundle model does not match its vocabulary");
  if (mj.contains("classes")) b.classes = classes_from_names(mj.at("classes").get<std::vector<std::string>>());
  if (mj.contains("topic_to_class"))
    b.mapping = TopicClassMapping{mj.at("topic_to_class").get<std::vector<std::size_t>>()};
  if (fs::exists(dir / "report.json")) b.report = eval_report_from_json(read_json(dir / "report.json"));
  return b;
}

// ---------------------------------------------------------------------------
// Commands

struct TrainOutcome {
  Bundle bundle;
  BowCorpus corpus;
  LdaStage lda;
};

/// Runs the training pipeline on the train split of cfg.data.
inline TrainOutcome run_train(const RunConfig& cfg, const MultiSensorDataset& train_data) {
  cfg.validate();
  TrainOutcome o;
  o.bundle.config = cfg;
  o.bundle.classes = train_data.classes;
  o.bundle.codebooks = in_stage("codebook", [&] {
    return train_codebooks(train_data, cfg.window(), cfg.v, cfg.kmeans(), cfg.codebook_seed());
  });
  o.corpus = in_stage("sensory_words", [&] { return build_corpus(train_data, o.bundle.codebooks); });
  o.bundle.vocabulary = o.corpus.vocabulary;
  o.lda = in_stage("lda", [&] { return fit_lda(o.corpus, train_data.classes, cfg); });
  o.bundle.model = o.lda.model;
  o.bundle.mapping = o.lda.mapping;
  o.bundle.report = o.lda.report;
  return o;
}

inline void write_train_outputs(const fs::path& dir, const TrainOutcome& o) {
  write_bundle(dir, o.bundle);
  std::ofstream theta(dir / "theta.csv");
  write_theta_csv(o.lda.theta, o.corpus, o.lda.mapping ? &*o.lda.mapping : nullptr, o.bundle.classes, theta);
  std::vector<std::string> notes;
  notes.push_back("topics=" + std::to_string(o.lda.model.topics()) + " alpha=" + format_double(o.lda.model.hyper.alpha) +
                  " beta=" + format_double(o.lda.model.hyper.beta));
  if (o.lda.fit) notes.push_back("hyperparameters fitted in " + std::to_string(o.lda.fit->rounds) + " rounds");
  auto cfg = o.bundle.config;
  cfg.out = dir.string();
  write_run_log(dir, cfg, "train", notes);
}

struct ApplyOutcome {
  BowCorpus corpus;
  ApplyResult result;
};

inline ApplyOutcome run_apply(const Bundle& b, const MultiSensorDataset& data, const RunConfig& cfg) {
  if (data.channel_keys != b.codebooks.channels())
    throw DataError("compatibility error: data channels do not match the bundle's codebooks");
  ApplyOutcome o;
  o.corpus = in_stage("sensory_words", [&] { return build_corpus(data, b.codebooks, &b.vocabulary); });
  o.result = in_stage("lda", [&] {
    return apply_model(b.model, o.corpus, b.mapping, b.classes.empty() ? data.classes : b.classes, cfg);
  });
  return o;
}

inline void write_apply_outputs(const fs::path& dir, const Bundle& b, const ApplyOutcome& o, const RunConfig& cfg) {
  fs::create_directories(dir);
  const auto& classes = b.classes;
  const TopicClassMapping* mapping = o.result.report ? &o.result.report->mapping : (b.mapping ? &*b.mapping : nullptr);
  {
    std::ofstream theta(dir / "theta.csv");
    write_theta_csv(o.result.theta, o.corpus, mapping, classes, theta);
  }
  if (o.result.report) {
    auto j = report_json(*o.result.report, classes);
    j["mapping_mode"] = cfg.remap_on_test ? "remapped-on-split" : "frozen-from-training";
    if (o.result.remapped) j["remapped"] = report_json(*o.result.remapped, classes);
    j["oov_tokens"] = o.corpus.oov_tokens();
    j["empty_documents"] = o.result.empty_documents;
    write_json(dir / "report.json", j);
    std::ofstream csv(dir / "confusion.csv");
    write_confusion_csv(*o.result.report, csv);
  }
  auto logged = cfg;
  logged.out = dir.string();
  write_run_log(dir, logged, "apply",
                {"oov_tokens=" + std::to_string(o.corpus.oov_tokens()),
                 "empty_documents=" + std::to_string(o.result.empty_documents)});
}

// ---------------------------------------------------------------------------
// Sweep

struct SweepGrid {
  std::vector<std::size_t> p_values;
  std::vector<std::size_t> v_values;
  std::vector<std::uint64_t> seeds;

  void validate() const {
    if (p_values.empty() || v_values.empty() || seeds.empty()) throw ConfigError("sweep grid lists must be non-empty");
    for (auto p : p_values)
      if (p < 2) throw ConfigError("sweep: p must be >= 2");
    for (auto v : v_values)
      if (v < 2) throw ConfigError("sweep: v must be >= 2");
  }
};

struct SweepRow {
  std::size_t p = 0;
  std::size_t v = 0;
  std::uint64_t seed = 0;
  double train_f1 = 0.0;
  double test_f1 = 0.0;
  std::string error;
};

inline std::string sweep_key(std::size_t p, std::size_t v, std::uint64_t seed) {
  return std::to_string(p) + "/" + std::to_string(v) + "/" + std::to_string(seed);
}

inline std::vector<SweepRow> read_sweep_csv(const fs::path& path) {
  std::vector<SweepRow> rows;
  std::ifstream in(path);
  if (!in) return rows;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto f = split(line, ',');
    if (f.size() < 6) throw DataError(path.string() + ": malformed sweep row");
    SweepRow r;
    r.p = parse_number<std::size_t>(f[0], "p");
    r.v = parse_number<std::size_t>(f[1], "v");
    r.seed = parse_number<std::uint64_t>(f[2], "seed");
    r.train_f1 = f[3].empty() ? 0.0 : parse_number<double>(f[3], "train_f1");
    r.test_f1 = f[4].empty() ? 0.0 : parse_number<double>(f[4], "test_f1");
    r.error = f[5];
    rows.push_back(r);
  }
  return rows;
}

inline void write_sweep_row(std::ostream& out, const SweepRow& r) {
  std::string err = r.error;
  std::replace(err.begin(), err.end(), ',', ';');
  std::replace(err.begin(), err.end(), '\n', ' ');
  out << r.p << ',' << r.v << ',' << r.seed << ',' << (r.error.empty() ? format_double(r.train_f1) : "") << ','
      << (r.error.empty() ? format_double(r.test_f1) : "") << ',' << err << '\n';
}

/// Macro F1 on the training split and on the test split for one cell.
inline SweepRow run_cell(const RunConfig& base, const MultiSensorDataset& train_data,
                         const MultiSensorDataset* test_data, std::size_t p, std::size_t v, std::uint64_t seed) {
  SweepRow row{p, v, seed, 0.0, 0.0, {}};
  try {
    auto cfg = base;
    cfg.p = p;
    cfg.v = v;
    cfg.seed = seed;
    const auto o = run_train(cfg, train_data);
    if (!o.lda.report) throw DataError("training data is unlabeled");
    row.train_f1 = o.lda.report->macro_f1;
    if (test_data) {
      const auto a = run_apply(o.bundle, *test_data, cfg);
      if (!a.result.report) throw DataError("test data is unlabeled");
      row.test_f1 = a.result.report->macro_f1;
    }
  } catch (const std::exception& e) {
    row.error = e.what();
  }
  return row;
}

/// One row per (p, v, seed); rows already present in `csv` are kept and
/// skipped. Returns all rows, existing first.
inline std::vector<SweepRow> run_sweep(const RunConfig& base, const SweepGrid& grid, const MultiSensorDataset& train_data,
                                       const MultiSensorDataset* test_data, const fs::path& csv,
                                       std::ostream* progress = nullptr) {
  grid.validate();
  auto rows = read_sweep_csv(csv);
  std::set<std::string> done;
  for (const auto& r : rows) done.insert(sweep_key(r.p, r.v, r.seed));
  const bool fresh = rows.empty();
  if (!csv.parent_path().empty()) fs::create_directories(csv.parent_path());
  std::ofstream out(csv, fresh ? std::ios::trunc : std::ios::app);
  if (!out) throw DataError("cannot write " + csv.string());
  if (fresh) out << "p,v,seed,train_f1,test_f1,error\n" << std::flush;
  for (auto seed : grid.seeds) {
    for (auto p : grid.p_values) {
      for (auto v : grid.v_values) {
        if (done.contains(sweep_key(p, v, seed))) continue;
        const auto row = run_cell(base, train_data, test_data, p, v, seed);
        write_sweep_row(out, row);
        out.flush();
        if (progress)
          *progress << "p=" << p << " v=" << v << " seed=" << seed << " train_f1=" << row.train_f1
                    << " test_f1=" << row.test_f1 << (row.error.empty() ? "" : " error=" + row.error) << '\n';
        rows.push_back(row);
      }
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Ablation

struct AblationRow {
  std::size_t removed = 0;
  double train_f1 = 0.0;
  double test_f1 = 0.0;
};

/// Codebooks and corpora are built once; for each n the top-n words are
/// stripped from both splits and LDA is retrained.
inline std::vector<AblationRow> run_ablation(const RunConfig& cfg, const MultiSensorDataset& train_data,
                                             const MultiSensorDataset* test_data, const std::vector<std::size_t>& n_list) {
  cfg.validate();
  const auto codebooks = train_codebooks(train_data, cfg.window(), cfg.v, cfg.kmeans(), cfg.codebook_seed());
  const auto train_corpus = build_corpus(train_data, codebooks);
  std::optional<BowCorpus> test_corpus;
  if (test_data) test_corpus = build_corpus(*test_data, codebooks, &train_corpus.vocabulary);
  for (auto n : n_list)
    if (n > train_corpus.vocabulary.size())
      throw ConfigError("ablation: n = " + std::to_string(n) + " exceeds vocabulary size " +
                        std::to_string(train_corpus.vocabulary.size()));

  std::vector<AblationRow> rows;
  for (auto n : n_list) {
    const auto tr = remove_top_words(train_corpus, n);
    AblationRow row{n, 0.0, 0.0};
    const auto st = fit_lda(tr, train_data.classes, cfg);
    if (!st.report) throw DataError("ablation needs labeled training data with k = number of classes");
    row.train_f1 = st.report->macro_f1;
    if (test_corpus) {
      const auto te = restrict_to_vocabulary(*test_corpus, tr.vocabulary);
      const auto a = apply_model(st.model, te, st.mapping, train_data.classes, cfg);
      if (a.report) row.test_f1 = a.report->macro_f1;
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace senselda
