#pragma once

// Independent reference computations used only by the tests. Nothing here
// calls into the code paths it is used to check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <vector>

namespace oracle {

/// Exhaustive nearest neighbour, ties to the lowest index.
inline std::size_t nearest(const std::vector<std::vector<double>>& centroids, const std::vector<double>& x) {
  std::size_t best = 0;
  double best_d = 0.0;
  for (std::size_t k = 0; k < centroids.size(); ++k) {
    double d = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) d += (x[i] - centroids[k][i]) * (x[i] - centroids[k][i]);
    if (k == 0 || d < best_d) {
      best = k;
      best_d = d;
    }
  }
  return best;
}

/// Sum of squared distances of 1-D points to their nearest centre.
inline double objective_1d(const std::vector<double>& xs, const std::vector<double>& centres) {
  double s = 0.0;
  for (double x : xs) {
    double best = INFINITY;
    for (double c : centres) best = std::min(best, (x - c) * (x - c));
    s += best;
  }
  return s;
}

/// Enumerates window start offsets by stepping until the window overruns.
inline std::vector<std::size_t> window_offsets(std::size_t t, std::size_t p) {
  std::vector<std::size_t> out;
  const std::size_t stride = p / 2;
  for (std::size_t off = 0; off + p <= t; off += stride) out.push_back(off);
  return out;
}

/// Best bijection by trying all permutations; returns the matched count.
inline std::size_t best_assignment(const std::vector<std::vector<std::size_t>>& m) {
  std::vector<std::size_t> perm(m.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::size_t best = 0;
  do {
    std::size_t s = 0;
    for (std::size_t i = 0; i < m.size(); ++i) s += m[i][perm[i]];
    best = std::max(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

/// Corpus drawn from the LDA generative process.
struct GeneratedCorpus {
  std::vector<std::vector<double>> phi;    // K x V
  std::vector<std::vector<double>> theta;  // D x K
  std::vector<std::vector<std::uint32_t>> docs;
};

inline std::vector<double> dirichlet(std::mt19937_64& rng, std::size_t n, double a) {
  std::gamma_distribution<double> g(a, 1.0);
  std::vector<double> v(n);
  double s = 0.0;
  for (auto& x : v) {
    x = g(rng);
    s += x;
  }
  if (s <= 0.0) {
    // Every draw underflowed; put the mass on one coordinate.
    std::fill(v.begin(), v.end(), 0.0);
    v[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)] = 1.0;
    return v;
  }
  for (auto& x : v) x /= s;
  return v;
}

inline GeneratedCorpus generate_lda(std::size_t K, std::size_t V, std::size_t D, std::size_t len, double alpha,
                                    double beta, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  GeneratedCorpus g;
  for (std::size_t k = 0; k < K; ++k) g.phi.push_back(dirichlet(rng, V, beta));
  for (std::size_t d = 0; d < D; ++d) {
    g.theta.push_back(dirichlet(rng, K, alpha));
    std::discrete_distribution<std::size_t> topic(g.theta.back().begin(), g.theta.back().end());
    std::vector<std::uint32_t> doc;
    for (std::size_t i = 0; i < len; ++i) {
      const auto k = topic(rng);
      std::discrete_distribution<std::uint32_t> word(g.phi[k].begin(), g.phi[k].end());
      doc.push_back(word(rng));
    }
    g.docs.push_back(std::move(doc));
  }
  return g;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

/// For each permutation of the recovered rows, the smallest per-row cosine;
/// returns the best such minimum.
inline double best_min_cosine(const std::vector<std::vector<double>>& truth,
                              const std::vector<std::vector<double>>& recovered) {
  std::vector<std::size_t> perm(truth.size());
  std::iota(perm.begin(), perm.end(), 0);
  double best = -1.0;
  do {
    double worst = 1.0;
    for (std::size_t k = 0; k < truth.size(); ++k) worst = std::min(worst, cosine(truth[k], recovered[perm[k]]));
    best = std::max(best, worst);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

/// Posterior mean of theta for a document made of `n` copies of one word, with
/// phi column `phi_w` frozen: sums over every topic-count vector (n_1..n_K),
/// weighted by multinomial(n) * prod_k Gamma(n_k + alpha) phi_w[k]^n_k.
inline std::vector<double> single_word_theta(const std::vector<double>& phi_w, std::size_t n, double alpha) {
  const std::size_t K = phi_w.size();
  std::vector<double> mean(K, 0.0);
  std::vector<std::size_t> counts(K, 0);
  std::vector<std::pair<double, std::vector<std::size_t>>> terms;
  // Enumerate compositions of n into K parts.
  auto rec = [&](auto&& self, std::size_t k, std::size_t left) -> void {
    if (k + 1 == K) {
      counts[k] = left;
      double lw = std::lgamma(static_cast<double>(n) + 1.0);
      for (std::size_t j = 0; j < K; ++j) {
        const double c = static_cast<double>(counts[j]);
        lw += -std::lgamma(c + 1.0) + std::lgamma(c + alpha) + c * std::log(phi_w[j]);
      }
      terms.emplace_back(lw, counts);
      return;
    }
    for (std::size_t c = 0; c <= left; ++c) {
      counts[k] = c;
      self(self, k + 1, left - c);
    }
  };
  rec(rec, 0, n);
  double mx = -INFINITY;
  for (const auto& t : terms) mx = std::max(mx, t.first);
  double z = 0.0;
  for (const auto& [lw, c] : terms) {
    const double w = std::exp(lw - mx);
    z += w;
    for (std::size_t k = 0; k < K; ++k)
      mean[k] += w * (static_cast<double>(c[k]) + alpha) / (static_cast<double>(n) + static_cast<double>(K) * alpha);
  }
  for (auto& m : mean) m /= z;
  return mean;
}

/// Contingency matrix of a noisy clustering: topic t mostly lands on class
/// perm[t] with probability q_t, the rest spread uniformly.
inline std::vector<std::vector<std::size_t>> noisy_clustering(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::vector<std::size_t>> m(n, std::vector<std::size_t>(n, 0));
  std::uniform_real_distribution<double> q(0.2, 0.9);
  std::uniform_int_distribution<std::size_t> size(50, 500), other(0, n - 1);
  for (std::size_t c = 0; c < n; ++c) {
    const double acc = q(rng);
    const std::size_t docs = size(rng);
    std::bernoulli_distribution hit(acc);
    for (std::size_t i = 0; i < docs; ++i) ++m[hit(rng) ? perm[c] : other(rng)][c];
  }
  return m;
}

/// Word counts by direct tallying in a map.
inline std::map<std::uint32_t, std::size_t> recount(const std::vector<std::vector<std::uint32_t>>& docs) {
  std::map<std::uint32_t, std::size_t> m;
  for (const auto& d : docs)
    for (auto w : d) ++m[w];
  return m;
}

}  // namespace oracle
