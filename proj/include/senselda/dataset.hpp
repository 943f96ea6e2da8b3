#pragma once

// Multi-sensor datasets: in-memory representation, the UCI-HAR
// "Inertial Signals" file layout, and a seeded synthetic generator.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "senselda/error.hpp"
#include "senselda/kvfile.hpp"
#include "senselda/rng.hpp"

namespace senselda {

enum class Axis : std::uint8_t { X, Y, Z };
enum class Sensor : std::uint8_t { Accelerometer, Gyroscope };

inline constexpr Axis kAxes[] = {Axis::X, Axis::Y, Axis::Z};
inline constexpr Sensor kSensors[] = {Sensor::Accelerometer, Sensor::Gyroscope};

constexpr std::string_view axis_name(Axis a) {
  switch (a) {
    case Axis::X: return "x";
    case Axis::Y: return "y";
    case Axis::Z: return "z";
  }
  return "?";
}

constexpr std::string_view sensor_name(Sensor s) {
  switch (s) {
    case Sensor::Accelerometer: return "acc";
    case Sensor::Gyroscope: return "gyro";
  }
  return "?";
}

inline Axis parse_axis(std::string_view s) {
  for (Axis a : kAxes)
    if (axis_name(a) == s) return a;
  throw ConfigError("unknown axis '" + std::string(s) + "'");
}

inline Sensor parse_sensor(std::string_view s) {
  for (Sensor x : kSensors)
    if (sensor_name(x) == s) return x;
  throw ConfigError("unknown sensor '" + std::string(s) + "'");
}

/// One channel: a single axis of a single sensor. Ordered sensor-major.
struct ChannelKey {
  Sensor sensor;
  Axis axis;

  auto operator<=>(const ChannelKey&) const = default;
};

inline std::string channel_name(ChannelKey k) {
  return std::string(sensor_name(k.sensor)) + "_" + std::string(axis_name(k.axis));
}

inline ChannelKey parse_channel(std::string_view s) {
  const auto us = s.find('_');
  if (us == std::string_view::npos) throw ConfigError("bad channel name '" + std::string(s) + "'");
  return {parse_sensor(s.substr(0, us)), parse_axis(s.substr(us + 1))};
}

struct ActivityLabel {
  int id = 0;
  std::string name;

  bool operator==(const ActivityLabel&) const = default;
};

/// Canonical UCI-HAR classes; label file values 1..6 map onto ids 0..5.
inline const std::vector<ActivityLabel>& ucihar_classes() {
  static const std::vector<ActivityLabel> classes = {
      {0, "WA"}, {1, "WU"}, {2, "WD"}, {3, "SI"}, {4, "ST"}, {5, "LA"}};
  return classes;
}

struct DataSequence {
  std::map<ChannelKey, std::vector<double>> channels;
  std::optional<ActivityLabel> label;

  std::size_t length() const { return channels.empty() ? 0 : channels.begin()->second.size(); }

  const std::vector<double>& channel(ChannelKey key) const {
    const auto it = channels.find(key);
    if (it == channels.end()) throw DataError("sequence has no channel " + channel_name(key));
    return it->second;
  }

  bool operator==(const DataSequence&) const = default;
};

struct MultiSensorDataset {
  std::vector<ChannelKey> channel_keys;  // sorted
  std::vector<DataSequence> sequences;
  std::vector<ActivityLabel> classes;  // empty when unlabeled

  std::size_t size() const { return sequences.size(); }
  std::size_t length() const { return sequences.empty() ? 0 : sequences.front().length(); }
  bool labeled() const {
    return !sequences.empty() &&
           std::all_of(sequences.begin(), sequences.end(), [](const auto& s) { return s.label.has_value(); });
  }

  /// Sensors in canonical order that appear among the channel keys.
  std::vector<Sensor> sensors() const {
    std::vector<Sensor> out;
    for (const auto& k : channel_keys)
      if (std::find(out.begin(), out.end(), k.sensor) == out.end()) out.push_back(k.sensor);
    return out;
  }

  std::vector<Axis> axes() const {
    std::vector<Axis> out;
    for (const auto& k : channel_keys)
      if (std::find(out.begin(), out.end(), k.axis) == out.end()) out.push_back(k.axis);
    std::sort(out.begin(), out.end());
    return out;
  }

  /// Throws DataError if any structural invariant is broken.
  void validate() const {
    if (sequences.empty()) throw DataError("dataset has no sequences");
    if (!std::is_sorted(channel_keys.begin(), channel_keys.end()) ||
        std::adjacent_find(channel_keys.begin(), channel_keys.end()) != channel_keys.end())
      throw DataError("channel keys must be sorted and unique");
    const std::size_t t = length();
    if (t < 2) throw DataError("sequences must have at least 2 samples");
    for (std::size_t i = 0; i < sequences.size(); ++i) {
      const auto& seq = sequences[i];
      if (seq.channels.size() != channel_keys.size())
        throw DataError("sequence " + std::to_string(i) + " has a different channel set");
      for (const auto& key : channel_keys) {
        const auto& values = seq.channel(key);
        if (values.size() != t)
          throw DataError("sequence " + std::to_string(i) + " channel " + channel_name(key) +
                          " has length " + std::to_string(values.size()) + ", expected " +
                          std::to_string(t));
        for (double x : values)
          if (!std::isfinite(x))
            throw DataError("sequence " + std::to_string(i) + " channel " + channel_name(key) +
                            " contains a non-finite sample");
      }
    }
  }

  bool operator==(const MultiSensorDataset&) const = default;
};

// ---------------------------------------------------------------------------
// UCI-HAR layout

enum class Split { Train, Test };

constexpr std::string_view split_name(Split s) { return s == Split::Train ? "train" : "test"; }

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  throw ConfigError("split must be 'train' or 'test', got '" + std::string(s) + "'");
}

inline std::vector<ChannelKey> ucihar_channels() {
  std::vector<ChannelKey> keys;
  for (Sensor s : kSensors)
    for (Axis a : kAxes) keys.push_back({s, a});
  return keys;
}

inline std::string ucihar_signal_file(ChannelKey key, Split split) {
  return std::string("body_") + (key.sensor == Sensor::Accelerometer ? "acc" : "gyro") + "_" +
         std::string(axis_name(key.axis)) + "_" + std::string(split_name(split)) + ".txt";
}

namespace detail {

/// `root` may be the dataset root (containing train/ and test/) or the split
/// directory itself.
inline std::filesystem::path ucihar_split_dir(const std::filesystem::path& root, Split split) {
  const auto nested = root / split_name(split);
  if (std::filesystem::is_directory(nested / "Inertial Signals")) return nested;
  return root;
}

inline std::vector<std::vector<double>> read_signal_rows(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("missing signal file: " + file.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    std::vector<double> row;
    row.reserve(width);
    const char* p = line.data();
    const char* end = p + line.size();
    for (;;) {
      while (p < end && (*p == ' ' || *p == '\t' || *p == '\r')) ++p;
      if (p == end) break;
      if (*p == '+') ++p;  // from_chars rejects a leading plus
      double x = 0.0;
      const auto [next, ec] = std::from_chars(p, end, x);
      if (ec != std::errc{} || (next < end && *next != ' ' && *next != '\t' && *next != '\r'))
        throw DataError(file.string() + ": row " + std::to_string(rows.size()) +
                        ": non-numeric token");
      if (!std::isfinite(x))
        throw DataError(file.string() + ": row " + std::to_string(rows.size()) +
                        ": non-finite value");
      row.push_back(x);
      p = next;
    }
    if (row.empty()) {
      if (trim(line).empty()) continue;
    }
    if (rows.empty()) {
      width = row.size();
    } else if (row.size() != width) {
      throw DataError(file.string() + ": row " + std::to_string(rows.size()) + " has " +
                      std::to_string(row.size()) + " values, expected " + std::to_string(width));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace detail

inline MultiSensorDataset load_ucihar(const std::filesystem::path& root, Split split) {
  const auto dir = detail::ucihar_split_dir(root, split);
  const auto signals = dir / "Inertial Signals";

  MultiSensorDataset ds;
  ds.channel_keys = ucihar_channels();

  std::size_t rows = 0;
  bool first = true;
  for (const auto& key : ds.channel_keys) {
    const auto file = signals / ucihar_signal_file(key, split);
    auto data = detail::read_signal_rows(file);
    if (first) {
      rows = data.size();
      ds.sequences.resize(rows);
      first = false;
    } else if (data.size() != rows) {
      throw DataError("row count mismatch: " + file.string() + " has " + std::to_string(data.size()) +
                      " rows, expected " + std::to_string(rows));
    }
    for (std::size_t i = 0; i < rows; ++i) ds.sequences[i].channels.emplace(key, std::move(data[i]));
  }

  const auto label_file = dir / ("y_" + std::string(split_name(split)) + ".txt");
  if (std::filesystem::exists(label_file)) {
    std::ifstream in(label_file);
    std::string line;
    std::size_t i = 0;
    const auto& classes = ucihar_classes();
    while (std::getline(in, line)) {
      const std::string body = trim(line);
      if (body.empty()) continue;
      if (i >= rows)
        throw DataError("row count mismatch: " + label_file.string() + " has more rows than the signal files");
      int value = 0;
      const auto [ptr, ec] = std::from_chars(body.data(), body.data() + body.size(), value);
      if (ec != std::errc{} || ptr != body.data() + body.size() || value < 1 ||
          value > static_cast<int>(classes.size()))
        throw DataError(label_file.string() + ": row " + std::to_string(i) + ": invalid label '" + body + "'");
      ds.sequences[i].label = classes[static_cast<std::size_t>(value - 1)];
      ++i;
    }
    if (i != rows)
      throw DataError("row count mismatch: " + label_file.string() + " has " + std::to_string(i) +
                      " rows, expected " + std::to_string(rows));
    ds.classes = classes;
  }

  ds.validate();
  return ds;
}

/// Writes `ds` in the UCI-HAR layout under `root/<split>/`. The dataset must
/// carry exactly the six UCI channels; labels are written when present.
inline void write_ucihar(const MultiSensorDataset& ds, const std::filesystem::path& root, Split split) {
  if (ds.channel_keys != ucihar_channels())
    throw DataError("write_ucihar requires the six acc/gyro x/y/z channels");
  const auto dir = root / split_name(split);
  std::filesystem::create_directories(dir / "Inertial Signals");
  for (const auto& key : ds.channel_keys) {
    std::ofstream out(dir / "Inertial Signals" / ucihar_signal_file(key, split));
    for (const auto& seq : ds.sequences) {
      const auto& values = seq.channel(key);
      for (std::size_t j = 0; j < values.size(); ++j) {
        if (j) out << ' ';
        out << format_double(values[j]);
      }
      out << '\n';
    }
  }
  if (ds.labeled()) {
    std::ofstream out(dir / ("y_" + std::string(split_name(split)) + ".txt"));
    for (const auto& seq : ds.sequences) out << seq.label->id + 1 << '\n';
  }
}

// ---------------------------------------------------------------------------
// Synthetic datasets

/// Per-channel sinusoid of one class: amplitude * sin(2π·frequency·s/t + phase).
struct Archetype {
  double frequency = 1.0;  // cycles per sequence
  double amplitude = 1.0;
  double phase = 0.0;
};

struct SyntheticConfig {
  std::size_t n = 60;
  std::size_t t = 64;
  std::size_t classes = 3;
  std::vector<ChannelKey> channel_keys = ucihar_channels();
  /// archetypes[class][channel index]; filled by auto_archetypes() when empty.
  std::vector<std::vector<Archetype>> archetypes;
  double noise = 0.0;  // std-dev of additive gaussian noise
  double phase_jitter = 0.0;  // max random phase shift per sequence, radians
  std::uint64_t seed = 0;
};

/// Distinct per-class waveforms: frequency grows with class and axis, amplitude
/// differs by sensor.
inline std::vector<std::vector<Archetype>> auto_archetypes(std::size_t classes,
                                                           const std::vector<ChannelKey>& keys) {
  std::vector<std::vector<Archetype>> out(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    for (const auto& key : keys) {
      const double a = static_cast<double>(key.axis);
      const double s = static_cast<double>(key.sensor);
      out[c].push_back({1.0 + 1.5 * static_cast<double>(c) + 0.5 * a,
                        (1.0 + 0.5 * s) * (1.0 + 0.75 * static_cast<double>(c % 2)),
                        0.7 * a + 0.3 * static_cast<double>(c)});
    }
  }
  return out;
}

/// Keys: n, t, classes, sensors (comma list), noise, phase_jitter, seed,
/// archetypes = auto | explicit. With `explicit`, each class/channel pair is
/// given as `archetype.<class>.<sensor>_<axis> = frequency, amplitude, phase`.
inline SyntheticConfig synthetic_config_from_kv(const KeyValues& kv) {
  SyntheticConfig cfg;
  cfg.channel_keys.clear();
  for (const auto& [key, value] : kv) {
    if (key == "n") cfg.n = parse_number<std::size_t>(value, key);
    else if (key == "t") cfg.t = parse_number<std::size_t>(value, key);
    else if (key == "classes") cfg.classes = parse_number<std::size_t>(value, key);
    else if (key == "noise") cfg.noise = parse_number<double>(value, key);
    else if (key == "phase_jitter") cfg.phase_jitter = parse_number<double>(value, key);
    else if (key == "seed") cfg.seed = parse_number<std::uint64_t>(value, key);
    else if (key == "sensors") {
      for (const auto& name : split(value, ','))
        for (Axis a : kAxes) cfg.channel_keys.push_back({parse_sensor(name), a});
    } else if (key == "archetypes" || key.rfind("archetype.", 0) == 0) {
      // handled below
    } else {
      throw ConfigError("unknown synthetic config key '" + key + "'");
    }
  }
  if (cfg.channel_keys.empty()) cfg.channel_keys = ucihar_channels();
  std::sort(cfg.channel_keys.begin(), cfg.channel_keys.end());
  cfg.channel_keys.erase(std::unique(cfg.channel_keys.begin(), cfg.channel_keys.end()), cfg.channel_keys.end());

  const auto mode = kv.contains("archetypes") ? kv.at("archetypes") : std::string("auto");
  if (mode == "explicit") {
    cfg.archetypes.assign(cfg.classes, std::vector<Archetype>(cfg.channel_keys.size()));
    for (std::size_t c = 0; c < cfg.classes; ++c) {
      for (std::size_t j = 0; j < cfg.channel_keys.size(); ++j) {
        const auto key = "archetype." + std::to_string(c) + "." + channel_name(cfg.channel_keys[j]);
        const auto it = kv.find(key);
        if (it == kv.end()) throw ConfigError("missing synthetic config key '" + key + "'");
        const auto v = parse_number_list<double>(it->second, key);
        if (v.size() != 3) throw ConfigError("'" + key + "' needs frequency, amplitude, phase");
        cfg.archetypes[c][j] = {v[0], v[1], v[2]};
      }
    }
  } else if (mode != "auto") {
    throw ConfigError("archetypes must be 'auto' or 'explicit'");
  }
  return cfg;
}

inline MultiSensorDataset generate_synthetic(const SyntheticConfig& cfg, std::uint64_t seed) {
  if (cfg.n < 1) throw ConfigError("synthetic config: n must be >= 1");
  if (cfg.t < 2) throw ConfigError("synthetic config: t must be >= 2");
  if (cfg.classes < 1) throw ConfigError("synthetic config: classes must be >= 1");
  if (cfg.channel_keys.empty()) throw ConfigError("synthetic config: no channels");
  if (cfg.noise < 0.0) throw ConfigError("synthetic config: noise must be >= 0");
  auto keys = cfg.channel_keys;
  std::sort(keys.begin(), keys.end());
  const auto archetypes = cfg.archetypes.empty() ? auto_archetypes(cfg.classes, keys) : cfg.archetypes;
  if (archetypes.size() != cfg.classes)
    throw ConfigError("synthetic config: archetype table does not match class count");

  MultiSensorDataset ds;
  ds.channel_keys = keys;
  for (std::size_t c = 0; c < cfg.classes; ++c) ds.classes.push_back({static_cast<int>(c), "C" + std::to_string(c)});

  Rng rng(derive_seed(seed, "synthetic"));
  const double two_pi = 2.0 * std::numbers::pi;
  ds.sequences.resize(cfg.n);
  for (std::size_t i = 0; i < cfg.n; ++i) {
    const std::size_t c = i % cfg.classes;
    auto& seq = ds.sequences[i];
    seq.label = ds.classes[c];
    const double shift = cfg.phase_jitter > 0.0 ? cfg.phase_jitter * (2.0 * rng.uniform() - 1.0) : 0.0;
    if (archetypes[c].size() != keys.size())
      throw ConfigError("synthetic config: archetype row does not match channel count");
    for (std::size_t j = 0; j < keys.size(); ++j) {
      const auto& arch = archetypes[c][j];
      std::vector<double> values(cfg.t);
      for (std::size_t s = 0; s < cfg.t; ++s) {
        const double x = static_cast<double>(s) / static_cast<double>(cfg.t);
        values[s] = arch.amplitude * std::sin(two_pi * arch.frequency * x + arch.phase + shift);
        if (cfg.noise > 0.0) values[s] += cfg.noise * rng.normal();
      }
      seq.channels.emplace(keys[j], std::move(values));
    }
  }
  ds.validate();
  return ds;
}

}  // namespace senselda
