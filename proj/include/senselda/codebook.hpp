#pragma once

// Sensory characters: sliding-window subsequences of each channel, clustered
// per channel with k-means. A character is the index of the nearest centroid.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "senselda/dataset.hpp"
#include "senselda/error.hpp"
#include "senselda/rng.hpp"

namespace senselda {

/// Window of p samples moved with 50% overlap.
struct WindowConfig {
  std::size_t size = 0;
  std::size_t stride = 0;

  static WindowConfig half_overlap(std::size_t p) { return {p, p / 2}; }

  void validate(std::size_t t) const {
    if (size < 2) throw DataError("window size must be >= 2, got " + std::to_string(size));
    if (stride != size / 2) throw DataError("window stride must be floor(p/2)");
    if (size > t)
      throw DataError("window size " + std::to_string(size) + " exceeds sequence length " + std::to_string(t));
  }

  bool operator==(const WindowConfig&) const = default;
};

/// Number of full windows; trailing partial windows are dropped.
inline std::size_t window_count(std::size_t t, const WindowConfig& w) {
  w.validate(t);
  return (t - w.size) / w.stride + 1;
}

struct Subsequence {
  std::span<const double> values;
  std::size_t sequence = 0;
  ChannelKey channel{};
  std::size_t offset = 0;
};

inline std::vector<Subsequence> extract_subsequences(std::span<const double> series, const WindowConfig& w,
                                                     std::size_t sequence = 0, ChannelKey channel = {}) {
  const std::size_t count = window_count(series.size(), w);
  std::vector<Subsequence> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t off = i * w.stride;
    out.push_back({series.subspan(off, w.size), sequence, channel, off});
  }
  return out;
}

// ---------------------------------------------------------------------------
// k-means

struct KMeansConfig {
  std::size_t max_iterations = 300;
  double tolerance = 1e-6;  // max squared centroid shift
  std::size_t restarts = 1;
};

/// Row-major n x dim point matrix.
struct PointMatrix {
  std::vector<double> data;
  std::size_t dim = 0;

  std::size_t rows() const { return dim == 0 ? 0 : data.size() / dim; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * dim, dim}; }
};

struct KMeansResult {
  std::vector<std::vector<double>> centroids;
  std::vector<std::size_t> assignment;
  double objective = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  /// Within-cluster sum of squares after each assignment step.
  std::vector<double> objective_trace;
};

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

/// Index of the nearest centroid; ties go to the lowest index.
inline std::size_t nearest_centroid(const std::vector<std::vector<double>>& centroids,
                                    std::span<const double> x, double* dist = nullptr) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < centroids.size(); ++k) {
    const double d = squared_distance(centroids[k], x);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  if (dist) *dist = best_d;
  return best;
}

inline std::size_t count_distinct_rows(const PointMatrix& points) {
  std::vector<std::size_t> idx(points.rows());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  auto less = [&](std::size_t a, std::size_t b) {
    const auto ra = points.row(a), rb = points.row(b);
    return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
  };
  std::sort(idx.begin(), idx.end(), less);
  std::size_t distinct = idx.empty() ? 0 : 1;
  for (std::size_t i = 1; i < idx.size(); ++i)
    if (less(idx[i - 1], idx[i])) ++distinct;
  return distinct;
}

namespace detail {

inline std::vector<std::vector<double>> kmeanspp_init(const PointMatrix& points, std::size_t k, Rng& rng) {
  const std::size_t n = points.rows();
  std::vector<std::vector<double>> centroids;
  centroids.reserve(k);
  const auto first = points.row(rng.below(n));
  centroids.emplace_back(first.begin(), first.end());
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = squared_distance(points.row(i), centroids.back());
  while (centroids.size() < k) {
    const auto pick = points.row(rng.categorical(d2));
    centroids.emplace_back(pick.begin(), pick.end());
    for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], squared_distance(points.row(i), centroids.back()));
  }
  return centroids;
}

inline KMeansResult lloyd(const PointMatrix& points, std::size_t k, const KMeansConfig& cfg, Rng& rng) {
  const std::size_t n = points.rows();
  const std::size_t dim = points.dim;
  KMeansResult r;
  r.centroids = kmeanspp_init(points, k, rng);
  r.assignment.assign(n, 0);
  std::vector<double> dist(n);
  std::vector<std::size_t> counts(k);
  std::vector<std::vector<double>> sums(k, std::vector<double>(dim));

  auto assign = [&] {
    double objective = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      r.assignment[i] = nearest_centroid(r.centroids, points.row(i), &dist[i]);
      objective += dist[i];
    }
    return objective;
  };

  for (r.iterations = 0; r.iterations < cfg.max_iterations;) {
    r.objective = assign();
    r.objective_trace.push_back(r.objective);
    ++r.iterations;

    std::fill(counts.begin(), counts.end(), 0);
    for (auto& s : sums) std::fill(s.begin(), s.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = r.assignment[i];
      ++counts[c];
      const auto x = points.row(i);
      for (std::size_t j = 0; j < dim; ++j) sums[c][j] += x[j];
    }

    double max_shift = 0.0;
    std::vector<bool> taken(n, false);
    for (std::size_t c = 0; c < k; ++c) {
      std::vector<double> next(dim);
      if (counts[c] == 0) {
        // Reseed with the point farthest from its current centroid.
        std::size_t far = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < n; ++i)
          if (!taken[i] && dist[i] > far_d) {
            far_d = dist[i];
            far = i;
          }
        taken[far] = true;
        dist[far] = 0.0;
        const auto x = points.row(far);
        next.assign(x.begin(), x.end());
      } else {
        for (std::size_t j = 0; j < dim; ++j) next[j] = sums[c][j] / static_cast<double>(counts[c]);
      }
      max_shift = std::max(max_shift, squared_distance(next, r.centroids[c]));
      r.centroids[c] = std::move(next);
    }
    if (max_shift < cfg.tolerance) {
      r.converged = true;
      break;
    }
  }
  r.objective = assign();
  return r;
}

}  // namespace detail

/// Lloyd's algorithm with k-means++ seeding. Requires at least k distinct
/// points. With restarts > 1 the lowest-objective run wins.
inline KMeansResult kmeans(const PointMatrix& points, std::size_t k, const KMeansConfig& cfg, std::uint64_t seed) {
  if (k < 1) throw DataError("k-means needs k >= 1");
  if (points.rows() < k) throw DataError("k-means: fewer points than clusters");
  if (count_distinct_rows(points) < k) throw DataError("k-means: fewer distinct points than clusters");
  KMeansResult best;
  for (std::size_t run = 0; run < std::max<std::size_t>(cfg.restarts, 1); ++run) {
    Rng rng(derive_seed(seed, "kmeans-restart", run));
    auto r = detail::lloyd(points, k, cfg, rng);
    if (run == 0 || r.objective < best.objective) best = std::move(r);
  }
  return best;
}

// ---------------------------------------------------------------------------
// Codebooks

struct ChannelCodebook {
  ChannelKey channel{};
  std::vector<std::vector<double>> centroids;  // v rows of length p

  std::size_t size() const { return centroids.size(); }
  std::size_t dim() const { return centroids.empty() ? 0 : centroids.front().size(); }

  bool operator==(const ChannelCodebook&) const = default;
};

inline std::size_t assign_character(const ChannelCodebook& codebook, std::span<const double> values) {
  if (codebook.centroids.empty()) throw DataError("empty codebook for channel " + channel_name(codebook.channel));
  if (values.size() != codebook.dim())
    throw DataError("dimension mismatch: subsequence length " + std::to_string(values.size()) +
                    ", codebook dimension " + std::to_string(codebook.dim()));
  return nearest_centroid(codebook.centroids, values);
}

inline std::size_t assign_character(const ChannelCodebook& codebook, const Subsequence& q) {
  if (q.channel != codebook.channel)
    throw DataError("subsequence channel " + channel_name(q.channel) + " does not match codebook channel " +
                    channel_name(codebook.channel));
  return assign_character(codebook, q.values);
}

struct CodebookSet {
  WindowConfig window;
  std::size_t v = 0;
  std::map<ChannelKey, ChannelCodebook> per_channel;

  const ChannelCodebook& at(ChannelKey key) const {
    const auto it = per_channel.find(key);
    if (it == per_channel.end()) throw DataError("no codebook for channel " + channel_name(key));
    return it->second;
  }

  std::vector<ChannelKey> channels() const {
    std::vector<ChannelKey> out;
    for (const auto& [key, _] : per_channel) out.push_back(key);
    return out;
  }

  bool operator==(const CodebookSet&) const = default;
};

/// All windows of one channel pooled across the dataset.
inline PointMatrix pooled_subsequences(const MultiSensorDataset& ds, ChannelKey key, const WindowConfig& w) {
  PointMatrix pm;
  pm.dim = w.size;
  const std::size_t per_seq = window_count(ds.length(), w);
  pm.data.reserve(ds.size() * per_seq * w.size);
  for (const auto& seq : ds.sequences) {
    const auto& series = seq.channel(key);
    for (std::size_t i = 0; i < per_seq; ++i) {
      const auto first = series.begin() + static_cast<std::ptrdiff_t>(i * w.stride);
      pm.data.insert(pm.data.end(), first, first + static_cast<std::ptrdiff_t>(w.size));
    }
  }
  return pm;
}

inline std::uint64_t channel_seed(std::uint64_t seed, ChannelKey key) {
  return derive_seed(seed, "codebook:" + channel_name(key));
}

inline CodebookSet train_codebooks(const MultiSensorDataset& ds, const WindowConfig& w, std::size_t v,
                                   const KMeansConfig& cfg, std::uint64_t seed) {
  if (v < 2) throw DataError("codebook size v must be >= 2");
  ds.validate();
  w.validate(ds.length());
  CodebookSet set;
  set.window = w;
  set.v = v;
  for (const auto& key : ds.channel_keys) {
    const auto points = pooled_subsequences(ds, key, w);
    if (count_distinct_rows(points) < v)
      throw DataError("channel " + channel_name(key) + " has fewer than " + std::to_string(v) +
                      " distinct subsequences");
    auto result = kmeans(points, v, cfg, channel_seed(seed, key));
    set.per_channel.emplace(key, ChannelCodebook{key, std::move(result.centroids)});
  }
  return set;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const CodebookSet& set) {
  nlohmann::json j;
  j["window"] = {{"p", set.window.size}, {"stride", set.window.stride}};
  j["v"] = set.v;
  auto& channels = j["channels"] = nlohmann::json::array();
  for (const auto& [key, cb] : set.per_channel) {
    channels.push_back({{"sensor", sensor_name(key.sensor)},
                        {"axis", axis_name(key.axis)},
                        {"centroids", cb.centroids}});
  }
  return j;
}

inline CodebookSet codebooks_from_json(const nlohmann::json& j) {
  try {
    CodebookSet set;
    set.window = {j.at("window").at("p").get<std::size_t>(), j.at("window").at("stride").get<std::size_t>()};
    set.v = j.at("v").get<std::size_t>();
    for (const auto& ch : j.at("channels")) {
      const ChannelKey key{parse_sensor(ch.at("sensor").get<std::string>()),
                           parse_axis(ch.at("axis").get<std::string>())};
      ChannelCodebook cb{key, ch.at("centroids").get<std::vector<std::vector<double>>>()};
      if (cb.size() != set.v) throw DataError("codebook " + channel_name(key) + " does not have v centroids");
      for (const auto& c : cb.centroids)
        if (c.size() != set.window.size) throw DataError("codebook " + channel_name(key) + " has wrong centroid length");
      set.per_channel.emplace(key, std::move(cb));
    }
    return set;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed codebook json: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("malformed codebook json: ") + e.what());
  }
}

}  // namespace senselda
