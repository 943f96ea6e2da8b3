// senselda: command-line driver for the sensory-word LDA pipeline.
//
// Exit codes: 0 success, 1 usage/config error, 2 data error,
// 3 internal invariant violation.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "senselda/pipeline.hpp"

namespace fs = std::filesystem;
using namespace senselda;

namespace {

struct CommonOptions {
  std::string config;
  std::optional<std::string> data, out, mapping;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> p, v, k, iters, burn_in, sample_lag, restarts;
  std::optional<double> alpha, beta;
  bool remap_on_test = false;
  bool fit_hyperparams = false;
  bool show_config = false;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "key = value run configuration file");
    app->add_option("--data", data, "UCI-HAR root directory or synthetic config file");
    app->add_option("--out", out, "output directory");
    app->add_option("--seed", seed, "global seed");
    app->add_option("-p", p, "window size in samples");
    app->add_option("-v", v, "sensory characters per channel");
    app->add_option("-k", k, "number of topics (default: number of classes)");
    app->add_option("--alpha", alpha, "document-topic prior (default 50/K)");
    app->add_option("--beta", beta, "topic-word prior");
    app->add_option("--iters", iters, "Gibbs iterations");
    app->add_option("--burn-in", burn_in, "Gibbs burn-in sweeps");
    app->add_option("--sample-lag", sample_lag, "average post-burn-in samples every N sweeps (0: final state)");
    app->add_option("--restarts", restarts, "k-means restarts");
    app->add_option("--mapping", mapping, "topic->class mapping: greedy | optimal");
    app->add_flag("--remap-on-test", remap_on_test, "refit the topic->class mapping on the evaluated split");
    app->add_flag("--fit-hyperparams", fit_hyperparams, "estimate alpha and beta from the training data");
    app->add_flag("--show-config", show_config, "print the resolved configuration and exit");
  }

  RunConfig resolve() const {
    RunConfig cfg;
    if (!config.empty()) cfg.merge(read_kv_file(config));
    if (data) cfg.data = *data;
    if (out) cfg.out = *out;
    if (seed) cfg.seed = *seed;
    if (p) cfg.p = *p;
    if (v) cfg.v = *v;
    if (k) cfg.topics = *k;
    if (alpha) cfg.alpha = *alpha;
    if (beta) cfg.beta = *beta;
    if (iters) cfg.iterations = *iters;
    if (burn_in) cfg.burn_in = *burn_in;
    if (sample_lag) cfg.sample_lag = *sample_lag;
    if (restarts) cfg.restarts = *restarts;
    if (mapping) cfg.mapping = parse_mapping_mode(*mapping);
    if (remap_on_test) cfg.remap_on_test = true;
    if (fit_hyperparams) cfg.fit_hyperparams = true;
    cfg.validate();
    return cfg;
  }
};

void print_report(std::ostream& out, const std::string& title, const EvalReport& r) {
  out << title << ": macro P=" << r.macro_precision << " R=" << r.macro_recall << " F1=" << r.macro_f1
      << " accuracy=" << r.accuracy << '\n';
  for (const auto& c : r.per_class)
    out << "  " << c.name << "  P=" << c.precision << " R=" << c.recall << " F1=" << c.f1 << " n=" << c.support << '\n';
}

std::vector<std::string> csv_row(const std::string& line) { return split(line, ','); }

int cmd_train(const RunConfig& cfg) {
  const auto data = in_stage("dataset", [&] { return load_dataset(cfg.data, Split::Train); });
  const auto o = run_train(cfg, data);
  write_train_outputs(cfg.out, o);
  std::cout << "wrote " << cfg.out << '\n';
  if (o.lda.report) print_report(std::cout, "train", *o.lda.report);
  return 0;
}

int cmd_apply(const RunConfig& cfg, const std::string& bundle_dir, Split split) {
  if (fs::exists(cfg.out) && fs::exists(bundle_dir) && fs::equivalent(cfg.out, bundle_dir))
    throw ConfigError("--out must differ from the bundle directory");
  const auto bundle = read_bundle(bundle_dir);
  auto run = cfg;
  // Sampler settings and seeds come from the bundle so fold-in matches training.
  run.iterations = bundle.config.iterations;
  run.burn_in = bundle.config.burn_in;
  run.sample_lag = bundle.config.sample_lag;
  run.seed = bundle.config.seed;
  run.mapping = bundle.config.mapping;
  const auto data =
      in_stage("dataset", [&] { return load_dataset(cfg.data.empty() ? bundle.config.data : cfg.data, split); });
  const auto o = run_apply(bundle, data, run);
  write_apply_outputs(cfg.out, bundle, o, run);
  std::cout << "wrote " << cfg.out << " (" << o.result.theta.size() << " documents, " << o.corpus.oov_tokens()
            << " OOV tokens)\n";
  if (o.result.report) print_report(std::cout, std::string(split_name(split)), *o.result.report);
  if (o.result.remapped && !cfg.remap_on_test)
    std::cout << "remapped-on-split macro F1=" << o.result.remapped->macro_f1 << '\n';
  return 0;
}

int cmd_evaluate(const RunConfig& cfg, const std::string& theta_path, const std::string& bundle_dir) {
  std::ifstream in(theta_path);
  if (!in) throw DataError("cannot read " + theta_path);
  std::string line;
  std::getline(in, line);
  const auto header = csv_row(line);
  if (header.size() < 4 || header[0] != "doc_id" || header[1] != "true_label")
    throw DataError(theta_path + ": not a theta table");
  const std::size_t K = header.size() - 3;

  std::vector<std::string> names;
  std::optional<TopicClassMapping> mapping;
  if (!bundle_dir.empty()) {
    const auto b = read_bundle(bundle_dir);
    for (const auto& c : b.classes) names.push_back(c.name);
    if (!cfg.remap_on_test) mapping = b.mapping;
  }

  Theta theta;
  std::vector<std::string> truth;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto f = csv_row(line);
    if (f.size() != K + 3) throw DataError(theta_path + ": row " + std::to_string(theta.size()) + " has wrong width");
    if (f[1].empty()) throw DataError(theta_path + ": row " + std::to_string(theta.size()) + " has no label");
    truth.push_back(f[1]);
    std::vector<double> row;
    for (std::size_t k = 0; k < K; ++k) row.push_back(parse_number<double>(f[3 + k], "theta"));
    theta.push_back(std::move(row));
  }
  if (names.empty()) {
    std::set<std::string> seen(truth.begin(), truth.end());
    bool uci = true;
    for (const auto& s : seen) {
      bool found = false;
      for (const auto& c : ucihar_classes()) found = found || c.name == s;
      uci = uci && found;
    }
    if (uci)
      for (const auto& c : ucihar_classes()) names.push_back(c.name);
    else
      names.assign(seen.begin(), seen.end());
  }
  const auto classes = classes_from_names(names);
  std::vector<int> labels;
  for (const auto& t : truth) {
    const auto it = std::find(names.begin(), names.end(), t);
    if (it == names.end()) throw DataError("unknown label '" + t + "' in " + theta_path);
    labels.push_back(static_cast<int>(it - names.begin()));
  }
  const auto topics = assign_classes(theta);
  if (!mapping) mapping = map_topics(build_contingency(topics, labels, K, classes.size()), cfg.mapping);
  const auto report = compute_report(topics, labels, *mapping, classes);
  fs::create_directories(cfg.out);
  write_json(fs::path(cfg.out) / "report.json", report_json(report, classes));
  std::ofstream csv(fs::path(cfg.out) / "confusion.csv");
  write_confusion_csv(report, csv);
  print_report(std::cout, "evaluate", report);
  return 0;
}

int cmd_sweep(const RunConfig& cfg, const SweepGrid& grid, const std::string& csv, bool with_test) {
  const auto train_data = load_dataset(cfg.data, Split::Train);
  std::optional<MultiSensorDataset> test_data;
  if (with_test) test_data = load_dataset(cfg.data, Split::Test);
  const fs::path path = csv.empty() ? fs::path(cfg.out) / "sweep.csv" : fs::path(csv);
  fs::create_directories(cfg.out);
  write_run_log(cfg.out, cfg, "sweep");
  const auto rows = run_sweep(cfg, grid, train_data, test_data ? &*test_data : nullptr, path, &std::cerr);
  std::size_t errors = 0;
  for (const auto& r : rows) errors += r.error.empty() ? 0 : 1;
  std::cout << "wrote " << path.string() << " (" << rows.size() << " rows, " << errors << " failed)\n";
  return 0;
}

int cmd_ablate(const RunConfig& cfg, const std::vector<std::size_t>& n_list, const std::string& csv, bool with_test) {
  const auto train_data = load_dataset(cfg.data, Split::Train);
  std::optional<MultiSensorDataset> test_data;
  if (with_test) test_data = load_dataset(cfg.data, Split::Test);
  const auto rows = run_ablation(cfg, train_data, test_data ? &*test_data : nullptr, n_list);
  fs::create_directories(cfg.out);
  write_run_log(cfg.out, cfg, "ablate");
  const fs::path path = csv.empty() ? fs::path(cfg.out) / "ablation.csv" : fs::path(csv);
  std::ofstream out(path);
  out << "n_removed,train_f1,test_f1\n";
  for (const auto& r : rows) {
    out << r.removed << ',' << format_double(r.train_f1) << ',' << (with_test ? format_double(r.test_f1) : "") << '\n';
    std::cout << "n=" << r.removed << " train_f1=" << r.train_f1;
    if (with_test) std::cout << " test_f1=" << r.test_f1;
    std::cout << '\n';
  }
  return 0;
}

int cmd_stats(const RunConfig& cfg, Split split) {
  const auto train_data = load_dataset(cfg.data, Split::Train);
  const auto codebooks = train_codebooks(train_data, cfg.window(), cfg.v, cfg.kmeans(), cfg.codebook_seed());
  auto corpus = build_corpus(train_data, codebooks);
  if (split == Split::Test) corpus = build_corpus(load_dataset(cfg.data, Split::Test), codebooks, &corpus.vocabulary);
  const std::size_t K = cfg.topics ? cfg.topics : std::max<std::size_t>(train_data.classes.size(), 1);
  const auto stats = corpus_statistics(corpus, K);
  fs::create_directories(cfg.out);
  auto j = to_json(stats);
  j["oov_tokens"] = corpus.oov_tokens();
  write_json(fs::path(cfg.out) / "stats.json", j);
  std::ofstream freq(fs::path(cfg.out) / "word_frequencies.csv");
  freq << "rank,word,count\n";
  std::size_t rank = 0;
  for (const auto& [w, c] : word_frequencies(corpus)) freq << ++rank << ',' << corpus.vocabulary.token(w) << ',' << c << '\n';
  write_run_log(cfg.out, cfg, "stats");
  std::cout << "D=" << stats.documents << " N=" << stats.tokens << " B=" << stats.mean_length << " V=" << stats.vocabulary
            << " K=" << stats.topics << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Discover activity topics in multi-sensor time series with sensory words and LDA"};
  app.require_subcommand(1);

  CommonOptions common;
  auto* train = app.add_subcommand("train", "fit codebooks and LDA on the train split, write a bundle");
  common.attach(train);

  auto* apply = app.add_subcommand("apply", "fold a split into a trained bundle and report");
  common.attach(apply);
  std::string bundle_dir, split_text = "test";
  apply->add_option("--bundle", bundle_dir, "bundle directory written by train")->required();
  apply->add_option("--split", split_text, "train | test");

  auto* evaluate = app.add_subcommand("evaluate", "report from a stored theta table");
  common.attach(evaluate);
  std::string theta_path, eval_bundle;
  evaluate->add_option("--theta", theta_path, "theta.csv with true labels")->required();
  evaluate->add_option("--bundle", eval_bundle, "bundle providing the frozen topic->class mapping");

  auto* sweep = app.add_subcommand("sweep", "grid over window size p and codebook size v");
  common.attach(sweep);
  std::string p_list = "10,15,20,25,30,35", v_list = "8,11,14,17,20,23,26,29", seed_list, sweep_csv;
  bool no_test = false;
  sweep->add_option("--p-list", p_list, "comma-separated window sizes");
  sweep->add_option("--v-list", v_list, "comma-separated codebook sizes");
  sweep->add_option("--seeds", seed_list, "comma-separated seeds (default: --seed)");
  sweep->add_option("--csv", sweep_csv, "result file (default <out>/sweep.csv); existing rows are skipped");
  sweep->add_flag("--no-test", no_test, "skip the test split");

  auto* ablate = app.add_subcommand("ablate", "retrain after removing the n most frequent words");
  common.attach(ablate);
  std::string n_list = "0,5,10,15,20", ablate_csv;
  bool ablate_no_test = false;
  ablate->add_option("--n-list", n_list, "comma-separated counts of removed words");
  ablate->add_option("--csv", ablate_csv, "result file (default <out>/ablation.csv)");
  ablate->add_flag("--no-test", ablate_no_test, "skip the test split");

  auto* stats = app.add_subcommand("stats", "corpus statistics and word frequencies");
  common.attach(stats);
  std::string stats_split = "train";
  stats->add_option("--split", stats_split, "train | test");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    const auto cfg = common.resolve();
    if (common.show_config) {
      write_kv(std::cout, cfg.to_kv());
      return 0;
    }
    if (train->parsed()) return cmd_train(cfg);
    if (apply->parsed()) return cmd_apply(cfg, bundle_dir, parse_split(split_text));
    if (evaluate->parsed()) return cmd_evaluate(cfg, theta_path, eval_bundle);
    if (sweep->parsed()) {
      SweepGrid grid{parse_number_list<std::size_t>(p_list, "p-list"), parse_number_list<std::size_t>(v_list, "v-list"),
                     seed_list.empty() ? std::vector<std::uint64_t>{cfg.seed}
                                       : parse_number_list<std::uint64_t>(seed_list, "seeds")};
      return cmd_sweep(cfg, grid, sweep_csv, !no_test);
    }
    if (ablate->parsed())
      return cmd_ablate(cfg, parse_number_list<std::size_t>(n_list, "n-list"), ablate_csv, !ablate_no_test);
    if (stats->parsed()) return cmd_stats(cfg, parse_split(stats_split));
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 3;
  }
  return 1;
}
