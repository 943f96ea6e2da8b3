#pragma once

/**
 * Latent Dirichlet Allocation fitted with collapsed Gibbs sampling.
 *
 *   phi[k]   ~ Dirichlet(beta)      topic -> word distribution
 *   theta[d] ~ Dirichlet(alpha)     document -> topic mixture
 *   z[d,i]   ~ Multinomial(theta[d])
 *   w[d,i]   ~ Multinomial(phi[z[d,i]])
 *
 * theta and phi are integrated out; each sweep resamples every z[d,i] from
 *
 *   p(z = k | rest) ∝ (n_dk + alpha) (n_kw + beta) / (n_k + V beta)
 *
 * with the token's own assignment removed from the counts. Unseen documents
 * are folded in against frozen n_kw / n_k.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/special_functions/digamma.hpp>
#include <json.hpp>

#include "senselda/error.hpp"
#include "senselda/rng.hpp"
#include "senselda/sensory_words.hpp"

namespace senselda {

struct LdaHyperparams {
  std::size_t topics = 6;
  double alpha = 50.0 / 6.0;
  double beta = 0.01;

  static LdaHyperparams defaults(std::size_t k) { return {k, 50.0 / static_cast<double>(k), 0.01}; }

  void validate() const {
    if (topics < 1) throw ConfigError("number of topics must be >= 1");
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be positive");
    if (!(beta > 0.0) || !std::isfinite(beta)) throw ConfigError("beta must be positive");
  }

  bool operator==(const LdaHyperparams&) const = default;
};

struct SamplerConfig {
  std::size_t iterations = 1000;
  std::size_t burn_in = 500;
  std::size_t sample_lag = 0;  // 0: estimate from the final state

  void validate() const {
    if (iterations == 0 || iterations <= burn_in) throw ConfigError("sampler needs iterations > burn_in");
  }

  /// True when the state after sweep `iter` (0-based) is averaged into the estimate.
  bool collects(std::size_t iter) const {
    return sample_lag > 0 && iter + 1 > burn_in && (iter + 1 - burn_in) % sample_lag == 0;
  }

  bool operator==(const SamplerConfig&) const = default;
};

/// Topic assignments plus the count tables they induce.
struct GibbsState {
  std::size_t topics = 0;
  std::size_t vocab_size = 0;
  std::vector<std::vector<std::uint32_t>> z;  // per document, one topic per token
  std::vector<std::int32_t> n_dk;             // documents x topics
  std::vector<std::int32_t> n_kw;             // topics x words
  std::vector<std::int32_t> n_k;

  std::int32_t doc_topic(std::size_t d, std::size_t k) const { return n_dk[d * topics + k]; }
  std::int32_t topic_word(std::size_t k, std::size_t w) const { return n_kw[k * vocab_size + w]; }

  /// Recounts the tables from z and the corpus; throws InvariantError on any
  /// disagreement or negative count.
  void check_conservation(const BowCorpus& corpus) const {
    std::vector<std::int32_t> dk(n_dk.size(), 0), kw(n_kw.size(), 0), k_tot(topics, 0);
    std::size_t tokens = 0;
    for (std::size_t d = 0; d < corpus.size(); ++d) {
      const auto& doc = corpus.documents[d].tokens;
      if (z[d].size() != doc.size()) throw InvariantError("assignment count differs from document length");
      for (std::size_t i = 0; i < doc.size(); ++i) {
        ++dk[d * topics + z[d][i]];
        ++kw[z[d][i] * vocab_size + doc[i]];
        ++k_tot[z[d][i]];
        ++tokens;
      }
    }
    if (dk != n_dk || kw != n_kw || k_tot != n_k) throw InvariantError("Gibbs count tables out of sync with assignments");
    std::size_t total = 0;
    for (auto c : n_k) {
      if (c < 0) throw InvariantError("negative topic count");
      total += static_cast<std::size_t>(c);
    }
    if (total != tokens) throw InvariantError("topic totals do not sum to the token count");
  }
};

struct LdaModel {
  LdaHyperparams hyper;
  std::size_t vocab_size = 0;
  std::uint64_t vocab_digest = 0;
  std::vector<double> n_kw;  // topics x words; averaged counts when sample_lag > 0
  std::vector<double> n_k;
  SamplerConfig sampler;
  std::uint64_t seed = 0;

  std::size_t topics() const { return hyper.topics; }

  double phi(std::size_t k, std::size_t w) const {
    return (n_kw[k * vocab_size + w] + hyper.beta) /
           (n_k[k] + static_cast<double>(vocab_size) * hyper.beta);
  }

  /// Row-major topics x words.
  std::vector<double> phi_matrix() const {
    std::vector<double> out(topics() * vocab_size);
    for (std::size_t k = 0; k < topics(); ++k)
      for (std::size_t w = 0; w < vocab_size; ++w) out[k * vocab_size + w] = phi(k, w);
    return out;
  }

  bool operator==(const LdaModel&) const = default;
};

using Theta = std::vector<std::vector<double>>;

struct TrainResult {
  LdaModel model;
  Theta theta;
  GibbsState state;
};

/// Called after every full sweep with the 0-based iteration index.
using SweepObserver = std::function<void(std::size_t, const GibbsState&)>;

namespace detail {

class GibbsChain {
 public:
  GibbsChain(const BowCorpus& corpus, LdaHyperparams hp, Rng& rng) : corpus_(corpus), hp_(hp), rng_(rng) {
    const std::size_t K = hp.topics;
    const std::size_t V = corpus.vocabulary.size();
    s_.topics = K;
    s_.vocab_size = V;
    s_.n_dk.assign(corpus.size() * K, 0);
    s_.n_kw.assign(K * V, 0);
    s_.n_k.assign(K, 0);
    s_.z.resize(corpus.size());
    for (std::size_t d = 0; d < corpus.size(); ++d) {
      const auto& doc = corpus.documents[d].tokens;
      s_.z[d].resize(doc.size());
      for (std::size_t i = 0; i < doc.size(); ++i) {
        if (doc[i] >= V) throw DataError("token id out of vocabulary range");
        const auto k = static_cast<std::uint32_t>(rng_.below(K));
        s_.z[d][i] = k;
        ++s_.n_dk[d * K + k];
        ++s_.n_kw[k * V + doc[i]];
        ++s_.n_k[k];
      }
    }
    weights_.resize(K);
  }

  void set_hyperparams(LdaHyperparams hp) { hp_ = hp; }
  const GibbsState& state() const { return s_; }

  void sweep() {
    const std::size_t K = s_.topics;
    const std::size_t V = s_.vocab_size;
    const double alpha = hp_.alpha;
    const double beta = hp_.beta;
    const double vbeta = static_cast<double>(V) * beta;
    for (std::size_t d = 0; d < corpus_.size(); ++d) {
      const auto& doc = corpus_.documents[d].tokens;
      std::int32_t* ndk = s_.n_dk.data() + d * K;
      for (std::size_t i = 0; i < doc.size(); ++i) {
        const std::size_t w = doc[i];
        std::uint32_t k = s_.z[d][i];
        --ndk[k];
        --s_.n_kw[k * V + w];
        --s_.n_k[k];

        double total = 0.0;
        for (std::size_t j = 0; j < K; ++j) {
          total += (ndk[j] + alpha) * (s_.n_kw[j * V + w] + beta) / (s_.n_k[j] + vbeta);
          weights_[j] = total;
        }
        const double u = rng_.uniform() * total;
        k = 0;
        while (k + 1 < K && weights_[k] <= u) ++k;

        s_.z[d][i] = k;
        ++ndk[k];
        ++s_.n_kw[k * V + w];
        ++s_.n_k[k];
      }
    }
  }

 private:
  const BowCorpus& corpus_;
  LdaHyperparams hp_;
  Rng& rng_;
  GibbsState s_;
  std::vector<double> weights_;
};

inline void check_corpus(const BowCorpus& corpus) {
  if (corpus.documents.empty()) throw DataError("training error: corpus has no documents");
  if (corpus.vocabulary.empty() || corpus.total_tokens() == 0) throw DataError("training error: corpus has no tokens");
}

}  // namespace detail

inline TrainResult train(const BowCorpus& corpus, const LdaHyperparams& hp, const SamplerConfig& cfg,
                         std::uint64_t seed, const SweepObserver& observer = {}) {
  hp.validate();
  cfg.validate();
  detail::check_corpus(corpus);
  const std::size_t K = hp.topics;
  const std::size_t V = corpus.vocabulary.size();
  const std::size_t D = corpus.size();

  Rng rng(derive_seed(seed, "lda-train"));
  detail::GibbsChain chain(corpus, hp, rng);

  std::vector<double> sum_kw, sum_dk;
  std::size_t samples = 0;
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    chain.sweep();
#ifndef NDEBUG
    chain.state().check_conservation(corpus);
#endif
    if (observer) observer(it, chain.state());
    if (cfg.collects(it)) {
      const auto& s = chain.state();
      if (samples == 0) {
        sum_kw.assign(s.n_kw.size(), 0.0);
        sum_dk.assign(s.n_dk.size(), 0.0);
      }
      for (std::size_t i = 0; i < s.n_kw.size(); ++i) sum_kw[i] += s.n_kw[i];
      for (std::size_t i = 0; i < s.n_dk.size(); ++i) sum_dk[i] += s.n_dk[i];
      ++samples;
    }
  }

  TrainResult r;
  r.state = chain.state();
  auto& m = r.model;
  m.hyper = hp;
  m.vocab_size = V;
  m.vocab_digest = corpus.vocabulary.digest();
  m.sampler = cfg;
  m.seed = seed;
  m.n_kw.resize(K * V);
  m.n_k.assign(K, 0.0);
  std::vector<double> dk(D * K);
  for (std::size_t i = 0; i < K * V; ++i)
    m.n_kw[i] = samples ? sum_kw[i] / static_cast<double>(samples) : r.state.n_kw[i];
  for (std::size_t i = 0; i < D * K; ++i)
    dk[i] = samples ? sum_dk[i] / static_cast<double>(samples) : r.state.n_dk[i];
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t w = 0; w < V; ++w) m.n_k[k] += m.n_kw[k * V + w];

  r.theta.assign(D, std::vector<double>(K));
  for (std::size_t d = 0; d < D; ++d) {
    const double len = static_cast<double>(corpus.documents[d].tokens.size());
    for (std::size_t k = 0; k < K; ++k)
      r.theta[d][k] = (dk[d * K + k] + hp.alpha) / (len + static_cast<double>(K) * hp.alpha);
  }
  return r;
}

struct FoldIn {
  std::vector<double> theta;
  bool no_tokens = false;  // document had nothing to infer from; theta is uniform
};

/// Gibbs over the document's own assignments with the model's counts frozen.
inline FoldIn fold_in(const LdaModel& model, const BowDocument& doc, const SamplerConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::size_t K = model.topics();
  const double alpha = model.hyper.alpha;
  FoldIn out;
  if (doc.tokens.empty()) {
    out.theta.assign(K, 1.0 / static_cast<double>(K));
    out.no_tokens = true;
    return out;
  }
  for (WordId w : doc.tokens)
    if (w >= model.vocab_size) throw DataError("fold-in: token id outside the model vocabulary");

  // phi restricted to the document's tokens, token-major.
  const std::size_t n = doc.tokens.size();
  std::vector<double> phi(n * K);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < K; ++k) phi[i * K + k] = model.phi(k, doc.tokens[i]);

  Rng rng(seed);
  std::vector<std::uint32_t> z(n);
  std::vector<std::int32_t> ndk(K, 0);
  for (std::size_t i = 0; i < n; ++i) {
    z[i] = static_cast<std::uint32_t>(rng.below(K));
    ++ndk[z[i]];
  }
  std::vector<double> cumulative(K), sum(K, 0.0);
  std::size_t samples = 0;
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      --ndk[z[i]];
      double total = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        total += (ndk[k] + alpha) * phi[i * K + k];
        cumulative[k] = total;
      }
      const double u = rng.uniform() * total;
      std::uint32_t k = 0;
      while (k + 1 < K && cumulative[k] <= u) ++k;
      z[i] = k;
      ++ndk[k];
    }
    if (cfg.collects(it)) {
      for (std::size_t k = 0; k < K; ++k) sum[k] += ndk[k];
      ++samples;
    }
  }
  out.theta.resize(K);
  const double denom = static_cast<double>(n) + static_cast<double>(K) * alpha;
  for (std::size_t k = 0; k < K; ++k) {
    const double count = samples ? sum[k] / static_cast<double>(samples) : ndk[k];
    out.theta[k] = (count + alpha) / denom;
  }
  return out;
}

/// Per-document seed for fold-in; keyed by the document's source index so a
/// document's result does not depend on its position in the corpus.
inline std::uint64_t fold_in_seed(std::uint64_t seed, std::size_t source) {
  return derive_seed(seed, "fold-in", source);
}

struct FoldInCorpus {
  Theta theta;
  std::size_t empty_documents = 0;
};

inline FoldInCorpus fold_in_corpus(const LdaModel& model, const BowCorpus& corpus, const SamplerConfig& cfg,
                                   std::uint64_t seed) {
  if (corpus.vocabulary.digest() != model.vocab_digest)
    throw DataError("fold-in: corpus vocabulary does not match the model");
  FoldInCorpus out;
  out.theta.reserve(corpus.size());
  for (const auto& doc : corpus.documents) {
    auto r = fold_in(model, doc, cfg, fold_in_seed(seed, doc.source));
    if (r.no_tokens) ++out.empty_documents;
    out.theta.push_back(std::move(r.theta));
  }
  return out;
}

/// Σ_d Σ_i log Σ_k theta[d][k] phi[k][w_di]
inline double log_likelihood(const LdaModel& model, const BowCorpus& corpus, const Theta& theta) {
  if (theta.size() != corpus.size()) throw DataError("log_likelihood: theta rows do not match documents");
  const std::size_t K = model.topics();
  const auto phi = model.phi_matrix();
  double ll = 0.0;
  for (std::size_t d = 0; d < corpus.size(); ++d) {
    if (theta[d].size() != K) throw DataError("log_likelihood: theta row has wrong topic count");
    for (WordId w : corpus.documents[d].tokens) {
      if (w >= model.vocab_size) throw DataError("log_likelihood: token id outside the model vocabulary");
      double p = 0.0;
      for (std::size_t k = 0; k < K; ++k) p += theta[d][k] * phi[k * model.vocab_size + w];
      ll += std::log(p);
    }
  }
  return ll;
}

// ---------------------------------------------------------------------------
// Hyperparameter fitting

struct FitConfig {
  bool enabled = false;
  std::size_t max_rounds = 50;
  double tolerance = 1e-4;         // relative change of alpha and beta
  std::size_t sweeps_per_round = 20;
  std::size_t warmup_sweeps = 100;
  double lower = 1e-6;
  double upper = 1e3;
};

struct FitResult {
  LdaHyperparams hyper;
  std::size_t rounds = 0;
  bool converged = false;
  bool clamped = false;  // an estimate left [lower, upper] and was clipped
};

/// Fixed-point (Minka) updates of the symmetric priors, interleaved with Gibbs
/// sweeps that keep the assignments in step with the current priors.
inline FitResult fit_hyperparams(const BowCorpus& corpus, std::size_t topics, std::uint64_t seed,
                                 const FitConfig& cfg = {.enabled = true}) {
  FitResult out;
  out.hyper = LdaHyperparams::defaults(topics);
  out.hyper.validate();
  if (!cfg.enabled) return out;
  detail::check_corpus(corpus);

  using boost::math::digamma;
  const std::size_t K = topics;
  const std::size_t V = corpus.vocabulary.size();
  const double Kd = static_cast<double>(K);
  const double Vd = static_cast<double>(V);

  Rng rng(derive_seed(seed, "lda-fit"));
  detail::GibbsChain chain(corpus, out.hyper, rng);
  for (std::size_t i = 0; i < cfg.warmup_sweeps; ++i) chain.sweep();

  auto& hp = out.hyper;
  for (out.rounds = 1; out.rounds <= cfg.max_rounds; ++out.rounds) {
    for (std::size_t i = 0; i < cfg.sweeps_per_round; ++i) chain.sweep();
    const auto& s = chain.state();

    double num = 0.0, den = 0.0;
    for (std::size_t d = 0; d < corpus.size(); ++d) {
      const double len = static_cast<double>(corpus.documents[d].tokens.size());
      if (len == 0.0) continue;
      for (std::size_t k = 0; k < K; ++k) num += digamma(s.doc_topic(d, k) + hp.alpha) - digamma(hp.alpha);
      den += digamma(len + Kd * hp.alpha) - digamma(Kd * hp.alpha);
    }
    double alpha = den > 0.0 ? hp.alpha * num / (Kd * den) : hp.alpha;

    num = 0.0;
    den = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t w = 0; w < V; ++w) {
        const auto c = s.topic_word(k, w);
        if (c > 0) num += digamma(c + hp.beta) - digamma(hp.beta);
      }
      den += digamma(s.n_k[k] + Vd * hp.beta) - digamma(Vd * hp.beta);
    }
    double beta = den > 0.0 ? hp.beta * num / (Vd * den) : hp.beta;

    if (!(alpha >= cfg.lower) || !(alpha <= cfg.upper) || !(beta >= cfg.lower) || !(beta <= cfg.upper)) {
      out.clamped = true;
      alpha = std::isfinite(alpha) ? std::clamp(alpha, cfg.lower, cfg.upper) : hp.alpha;
      beta = std::isfinite(beta) ? std::clamp(beta, cfg.lower, cfg.upper) : hp.beta;
    }
    const double change = std::max(std::abs(alpha - hp.alpha) / hp.alpha, std::abs(beta - hp.beta) / hp.beta);
    hp.alpha = alpha;
    hp.beta = beta;
    chain.set_hyperparams(hp);
    if (change < cfg.tolerance) {
      out.converged = true;
      break;
    }
  }
  out.rounds = std::min(out.rounds, cfg.max_rounds);
  return out;
}

// ---------------------------------------------------------------------------
// Serialization. phi is recomputed from the counts on load.

namespace detail {
inline nlohmann::json count_value(double c) {
  if (c == std::floor(c) && std::abs(c) < 9.0e15) return static_cast<std::int64_t>(c);
  return c;
}
}  // namespace detail

inline nlohmann::json to_json(const LdaModel& m) {
  nlohmann::json j;
  j["topics"] = m.hyper.topics;
  j["alpha"] = m.hyper.alpha;
  j["beta"] = m.hyper.beta;
  j["vocab_size"] = m.vocab_size;
  std::ostringstream digest;
  digest << std::hex << m.vocab_digest;
  j["vocabulary_hash"] = digest.str();
  auto& triplets = j["n_kw"] = nlohmann::json::array();
  for (std::size_t k = 0; k < m.topics(); ++k)
    for (std::size_t w = 0; w < m.vocab_size; ++w)
      if (const double c = m.n_kw[k * m.vocab_size + w]; c != 0.0)
        triplets.push_back({k, w, detail::count_value(c)});
  auto& nk = j["n_k"] = nlohmann::json::array();
  for (double c : m.n_k) nk.push_back(detail::count_value(c));
  j["sampler"] = {{"iterations", m.sampler.iterations},
                  {"burn_in", m.sampler.burn_in},
                  {"sample_lag", m.sampler.sample_lag}};
  j["seed"] = m.seed;
  return j;
}

inline LdaModel lda_model_from_json(const nlohmann::json& j) {
  try {
    LdaModel m;
    m.hyper = {j.at("topics").get<std::size_t>(), j.at("alpha").get<double>(), j.at("beta").get<double>()};
    m.hyper.validate();
    m.vocab_size = j.at("vocab_size").get<std::size_t>();
    m.vocab_digest = std::stoull(j.at("vocabulary_hash").get<std::string>(), nullptr, 16);
    m.n_kw.assign(m.topics() * m.vocab_size, 0.0);
    for (const auto& t : j.at("n_kw")) {
      const auto k = t.at(0).get<std::size_t>();
      const auto w = t.at(1).get<std::size_t>();
      if (k >= m.topics() || w >= m.vocab_size) throw DataError("model json: n_kw index out of range");
      m.n_kw[k * m.vocab_size + w] = t.at(2).get<double>();
    }
    m.n_k = j.at("n_k").get<std::vector<double>>();
    if (m.n_k.size() != m.topics()) throw DataError("model json: n_k has wrong length");
    for (std::size_t k = 0; k < m.topics(); ++k) {
      double sum = 0.0;
      for (std::size_t w = 0; w < m.vocab_size; ++w) sum += m.n_kw[k * m.vocab_size + w];
      if (std::abs(sum - m.n_k[k]) > 1e-6 * std::max(1.0, sum)) throw DataError("model json: n_k disagrees with n_kw");
    }
    const auto& s = j.at("sampler");
    m.sampler = {s.at("iterations").get<std::size_t>(), s.at("burn_in").get<std::size_t>(),
                 s.at("sample_lag").get<std::size_t>()};
    m.seed = j.at("seed").get<std::uint64_t>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed model json: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("malformed model json: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw DataError("malformed model json: bad vocabulary hash");
  }
}

}  // namespace senselda
