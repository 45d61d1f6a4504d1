#pragma once

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vpc/common.hpp"
#include "vpc/rng.hpp"

namespace vpc {

using Points = std::vector<std::vector<double>>;

constexpr double kGlobalNoiseSigma = 0.01;

struct SplitSpec {
  std::size_t train = 10000;
  std::size_t val = 5000;
  std::size_t test = 5000;
  std::size_t total() const { return train + val + test; }
};

struct Standardization {
  std::vector<double> mean, stddev;
};

struct Dataset {
  std::string name;
  std::uint64_t seed = 0;
  Points points;
  Standardization standardization;  // fitted on the train split
};

inline const std::vector<std::string>& dataset_names() {
  static const std::vector<std::string> names = {
      "checkerboard", "pinwheel",            "spiral",  "alphabet",
      "bent_lissajous", "interlocked_circles", "knotted", "twisted_eight"};
  return names;
}

inline int dataset_dim(const std::string& name) {
  if (name == "checkerboard" || name == "pinwheel" || name == "spiral" || name == "alphabet")
    return 2;
  if (name == "bent_lissajous" || name == "interlocked_circles" || name == "knotted" ||
      name == "twisted_eight")
    return 3;
  throw ArgumentError("unknown dataset '" + name + "'");
}

namespace detail {

// 7x5 bitmap of the letter W, rows top to bottom. The source recipe gives
// only the grid and cell size; this bitmap is the canonical one for this
// repository. Single-letter layout; the multi-letter gap parameter is unused.
inline const char* kLetterW[7] = {
    "X...X", "X...X", "X...X", "X.X.X", "X.X.X", "X.X.X", ".X.X."};

inline std::vector<double> sample_clean(const std::string& name, SplitMix64& rng) {
  if (name == "checkerboard") {
    static const double g[3] = {-1.5, 0.0, 1.5};
    std::size_t cell = rng.uniform_index(9);
    double cx = g[cell % 3], cy = g[cell / 3];
    double x = cx + rng.uniform(-0.6, 0.6) + rng.normal(0.0, 0.15);
    double y = cy + rng.uniform(-0.6, 0.6) + rng.normal(0.0, 0.15);
    x = std::clamp(x, cx - 0.6, cx + 0.6);
    y = std::clamp(y, cy - 0.6, cy + 0.6);
    return {x, y};
  }
  if (name == "pinwheel") {
    std::size_t arm = rng.uniform_index(5);
    double r = rng.normal(1.0, 0.3);
    double theta = 2.0 * M_PI * static_cast<double>(arm) / 5.0 + rng.normal(0.0, 0.2);
    return {r * std::cos(theta), r * std::sin(theta)};
  }
  if (name == "spiral") {
    double sign = (rng.uniform_index(2) == 0) ? 1.0 : -1.0;
    double theta = std::sqrt(rng.uniform(0.0, 2.0 * M_PI)) * 2.0 * M_PI;
    double r = 2.0 * theta;
    return {sign * r * std::cos(theta) + rng.normal(0.0, 0.1),
            sign * r * std::sin(theta) + rng.normal(0.0, 0.1)};
  }
  if (name == "alphabet") {
    static const std::vector<std::pair<int, int>> lit = [] {
      std::vector<std::pair<int, int>> v;
      for (int row = 0; row < 7; ++row)
        for (int col = 0; col < 5; ++col)
          if (kLetterW[row][col] == 'X') v.emplace_back(row, col);
      return v;
    }();
    auto [row, col] = lit[rng.uniform_index(lit.size())];
    // cell size 0.2, grid centered at the origin, rows top to bottom
    double cx = (static_cast<double>(col) - 2.0) * 0.2;
    double cy = (3.0 - static_cast<double>(row)) * 0.2;
    return {cx + rng.uniform(-0.1, 0.1), cy + rng.uniform(-0.1, 0.1)};
  }
  // 3D curves: t ~ U[-pi, pi], parametric point, scale by 4
  double t = rng.uniform(-M_PI, M_PI);
  std::vector<double> p;
  if (name == "bent_lissajous") {
    p = {std::sin(2.0 * t), std::cos(t), std::cos(2.0 * t)};
  } else if (name == "interlocked_circles") {
    if (rng.uniform_index(2) == 0)
      p = {std::sin(t), std::cos(t), 0.0};
    else
      p = {1.0 + std::sin(t), 0.0, std::cos(t)};
  } else if (name == "knotted") {
    p = {std::sin(t) + 2.0 * std::sin(2.0 * t), std::cos(t) - 2.0 * std::cos(2.0 * t),
         std::sin(3.0 * t)};
  } else if (name == "twisted_eight") {
    if (rng.uniform_index(2) == 0)
      p = {std::sin(t), std::cos(t), 0.0};
    else
      p = {2.0 + std::sin(t), 0.0, std::cos(t)};
  } else {
    throw ArgumentError("unknown dataset '" + name + "'");
  }
  for (double& v : p) v *= 4.0;
  return p;
}

}  // namespace detail

// Raw samples before the global sigma = 0.01 noise step (dataset-specific
// noise, clipping, and scaling already applied).
inline Points generate_clean(const std::string& name, std::size_t count, std::uint64_t seed) {
  dataset_dim(name);  // validates the name
  SplitMix64 rng(seed);
  Points pts;
  pts.reserve(count);
  for (std::size_t i = 0; i < count; ++i) pts.push_back(detail::sample_clean(name, rng));
  return pts;
}

// Full recipe: structure-specific sampling, then global N(0, 0.01^2 I) noise.
inline Points generate(const std::string& name, std::size_t count, std::uint64_t seed) {
  Points pts = generate_clean(name, count, seed);
  SplitMix64 rng(seed ^ 0x6e6f697365ULL);  // separate stream for the global noise step
  for (auto& p : pts)
    for (double& v : p) v += rng.normal(0.0, kGlobalNoiseSigma);
  return pts;
}

struct SplitDatasets {
  Dataset train, val, test;
};

// Seeded shuffle, split, standardize all three splits with the train split's
// per-dimension mean and stddev.
inline SplitDatasets standardize_and_split(const Points& raw, const SplitSpec& spec,
                                           std::uint64_t seed, const std::string& name = "") {
  if (spec.train == 0 || spec.val == 0 || spec.test == 0)
    throw ArgumentError("standardize_and_split: split counts must be positive");
  if (raw.size() < spec.total())
    throw ArgumentError("standardize_and_split: not enough points for the requested split");
  const std::size_t d = raw.empty() ? 0 : raw[0].size();
  SplitMix64 rng(seed);
  std::vector<std::size_t> order = rng.permutation(raw.size());

  Standardization st;
  st.mean.assign(d, 0.0);
  st.stddev.assign(d, 0.0);
  for (std::size_t i = 0; i < spec.train; ++i)
    for (std::size_t j = 0; j < d; ++j) st.mean[j] += raw[order[i]][j];
  for (double& m : st.mean) m /= static_cast<double>(spec.train);
  for (std::size_t i = 0; i < spec.train; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double dv = raw[order[i]][j] - st.mean[j];
      st.stddev[j] += dv * dv;
    }
  for (double& s : st.stddev) {
    s = std::sqrt(s / static_cast<double>(spec.train));
    if (!(s > 1e-12))
      throw NumericError("standardize_and_split: near-constant dimension (stddev floor)");
  }

  auto take = [&](std::size_t offset, std::size_t count) {
    Dataset ds;
    ds.name = name;
    ds.seed = seed;
    ds.standardization = st;
    ds.points.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      std::vector<double> p = raw[order[offset + i]];
      for (std::size_t j = 0; j < d; ++j) p[j] = (p[j] - st.mean[j]) / st.stddev[j];
      ds.points.push_back(std::move(p));
    }
    return ds;
  };
  SplitDatasets out;
  out.train = take(0, spec.train);
  out.val = take(spec.train, spec.val);
  out.test = take(spec.train + spec.val, spec.test);
  return out;
}

// --- persistence --------------------------------------------------------

namespace detail {
inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
}  // namespace detail

inline void write_points_csv(const std::string& path, const Points& pts) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  const std::size_t d = pts.empty() ? 0 : pts[0].size();
  for (std::size_t j = 0; j < d; ++j) os << (j ? ",x" : "x") << (j + 1);
  os << '\n';
  for (const auto& p : pts) {
    for (std::size_t j = 0; j < d; ++j) {
      if (j) os << ',';
      os << detail::fmt17(p[j]);
    }
    os << '\n';
  }
  if (!os) throw IoError("write failure: " + path);
}

inline Points read_points_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open: " + path);
  Points pts;
  std::string line;
  bool header = true;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw IoError("malformed CSV cell '" + cell + "' in " + path);
      }
    }
    pts.push_back(std::move(row));
  }
  return pts;
}

inline void write_dataset_metadata(const std::string& path, const std::string& name,
                                   std::uint64_t seed, const SplitSpec& spec,
                                   const Standardization& st) {
  nlohmann::ordered_json doc;
  doc["name"] = name;
  doc["seed"] = seed;
  doc["split"] = {{"train", spec.train}, {"val", spec.val}, {"test", spec.test}};
  doc["standardization"] = {{"mean", st.mean}, {"stddev", st.stddev}};
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << doc.dump(2) << '\n';
  if (!os) throw IoError("write failure: " + path);
}

}  // namespace vpc
