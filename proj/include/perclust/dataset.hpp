#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "perclust/common.hpp"

namespace perclust {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

// One stimulus: an ordered 2D point set. Order matters because annotations
// are positional.
struct PointSet {
  std::string id;
  std::vector<Point2> points;

  int size() const { return static_cast<int>(points.size()); }
};

// Per-point integer cluster labels from one rater. Label 0 is reserved for
// noise; IDs >= 1 carry no meaning beyond partition structure.
struct Annotation {
  std::string rater;
  std::vector<int> labels;

  int size() const { return static_cast<int>(labels.size()); }
};

struct RaterGroup {
  std::vector<Annotation> annotations;

  int raters() const { return static_cast<int>(annotations.size()); }
  int points() const { return annotations.empty() ? 0 : annotations.front().size(); }
};

enum class Split { train, val, test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

inline Split split_from_name(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw Error::data("unknown split name: " + name);
}

struct AnnotatedPlot {
  PointSet pointset;
  RaterGroup group;
  Split split = Split::train;
};

struct SyntheticSpec {
  int min_clusters = 2;
  int max_clusters = 4;
  int points_per_plot = 512;
  double noise_fraction = 0.1;
  int rater_count = 5;
  double rater_fidelity = 0.9;
  std::uint64_t seed = 0;
  int plot_count = 1;
};

// Number of distinct labels > 0; noise never counts as a cluster.
inline int cluster_count(const std::vector<int>& labels) {
  std::set<int> distinct;
  for (int l : labels)
    if (l > 0) distinct.insert(l);
  return static_cast<int>(distinct.size());
}

inline int cluster_count(const Annotation& annotation) { return cluster_count(annotation.labels); }

// Per-axis min/max normalization onto [-1, 1]. The extremes are pinned to
// exactly -1/+1 and a constant axis maps to 0, so the map is idempotent and
// value-determined (hence permutation-commuting).
inline PointSet normalize_points(const PointSet& input) {
  if (input.size() < 2) throw Error::data("normalize_points: need at least 2 points in '" + input.id + "'");
  for (const Point2& p : input.points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y))
      throw Error::data("normalize_points: non-finite coordinate in '" + input.id + "'");
  }
  double mn[2] = {input.points[0].x, input.points[0].y};
  double mx[2] = {input.points[0].x, input.points[0].y};
  for (const Point2& p : input.points) {
    mn[0] = std::min(mn[0], p.x);
    mx[0] = std::max(mx[0], p.x);
    mn[1] = std::min(mn[1], p.y);
    mx[1] = std::max(mx[1], p.y);
  }
  auto map_axis = [](double v, double lo, double hi) {
    if (lo == hi) return 0.0;
    if (v == lo) return -1.0;
    if (v == hi) return 1.0;
    const double centered = 2.0 * v - (lo + hi);
    return std::clamp(centered / (hi - lo), -1.0, 1.0);
  };
  PointSet out;
  out.id = input.id;
  out.points.reserve(input.points.size());
  for (const Point2& p : input.points)
    out.points.push_back({map_axis(p.x, mn[0], mx[0]), map_axis(p.y, mn[1], mx[1])});
  return out;
}

namespace detail {

inline void validate_plot(const AnnotatedPlot& plot) {
  const int n = plot.pointset.size();
  for (const Annotation& a : plot.group.annotations) {
    if (a.size() != n)
      throw Error::data("annotation by '" + a.rater + "' has " + std::to_string(a.size()) +
                        " labels for " + std::to_string(n) + " points in '" + plot.pointset.id + "'");
    for (int l : a.labels)
      if (l < 0) throw Error::data("negative cluster label in '" + plot.pointset.id + "'");
  }
}

}  // namespace detail

// JSON Lines ingestion. Coordinates on disk may be unnormalized; every record
// is normalized on load (idempotent for already-normalized data).
inline std::vector<AnnotatedPlot> load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error::data("cannot open dataset file: " + path);
  std::vector<AnnotatedPlot> plots;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error::data(path + ":" + std::to_string(line_no) + ": invalid JSON: " + e.what());
    }
    AnnotatedPlot plot;
    try {
      plot.pointset.id = rec.at("id").get<std::string>();
      for (const auto& pt : rec.at("points")) {
        if (!pt.is_array() || pt.size() != 2)
          throw Error::data("point is not an [x, y] pair");
        plot.pointset.points.push_back({pt[0].get<double>(), pt[1].get<double>()});
      }
      for (const auto& ann : rec.at("annotations")) {
        Annotation a;
        a.rater = ann.at("rater").get<std::string>();
        a.labels = ann.at("labels").get<std::vector<int>>();
        plot.group.annotations.push_back(std::move(a));
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error::data(path + ":" + std::to_string(line_no) + ": schema violation: " + e.what());
    }
    detail::validate_plot(plot);
    plot.pointset = normalize_points(plot.pointset);
    plots.push_back(std::move(plot));
  }
  return plots;
}

inline std::string format_double(double v) {
  nlohmann::json j = v;
  return j.dump();
}

inline void save_dataset(const std::vector<AnnotatedPlot>& plots, const std::string& path,
                         const std::string& source = "") {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error::data("cannot write dataset file: " + path);
  for (const AnnotatedPlot& plot : plots) {
    nlohmann::json rec;
    rec["id"] = plot.pointset.id;
    auto points = nlohmann::json::array();
    for (const Point2& p : plot.pointset.points) points.push_back({p.x, p.y});
    rec["points"] = std::move(points);
    auto anns = nlohmann::json::array();
    for (const Annotation& a : plot.group.annotations)
      anns.push_back({{"rater", a.rater}, {"labels", a.labels}});
    rec["annotations"] = std::move(anns);
    if (!source.empty()) rec["source"] = source;
    out << rec.dump() << "\n";
  }
}

inline std::map<std::string, Split> load_splits(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error::data("cannot open splits file: " + path);
  std::map<std::string, Split> splits;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      nlohmann::json rec = nlohmann::json::parse(line);
      splits[rec.at("id").get<std::string>()] = split_from_name(rec.at("split").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      throw Error::data(path + ":" + std::to_string(line_no) + ": invalid splits record: " + e.what());
    }
  }
  return splits;
}

inline void save_splits(const std::vector<AnnotatedPlot>& plots, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error::data("cannot write splits file: " + path);
  for (const AnnotatedPlot& plot : plots) {
    nlohmann::json rec{{"id", plot.pointset.id}, {"split", split_name(plot.split)}};
    out << rec.dump() << "\n";
  }
}

inline void apply_splits(std::vector<AnnotatedPlot>& plots, const std::map<std::string, Split>& splits) {
  for (AnnotatedPlot& plot : plots) {
    auto it = splits.find(plot.pointset.id);
    if (it == splits.end()) throw Error::data("no split assignment for stimulus '" + plot.pointset.id + "'");
    plot.split = it->second;
  }
}

struct SplitResult {
  std::vector<AnnotatedPlot> train;
  std::vector<AnnotatedPlot> val;
  std::vector<AnnotatedPlot> test;
};

// Seeded random split with largest-remainder rounding, so ratio tuples can
// reproduce exact published split sizes.
inline SplitResult split_dataset(const std::vector<AnnotatedPlot>& plots, double train_ratio,
                                 double val_ratio, double test_ratio, std::uint64_t seed) {
  const double sum = train_ratio + val_ratio + test_ratio;
  if (std::abs(sum - 1.0) > 1e-9)
    throw Error::usage("split ratios must sum to 1, got " + format_double(sum));
  const double ratios[3] = {train_ratio, val_ratio, test_ratio};
  const std::size_t n = plots.size();
  std::size_t sizes[3];
  double fracs[3];
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = ratios[i] * static_cast<double>(n);
    sizes[i] = static_cast<std::size_t>(std::floor(exact));
    fracs[i] = exact - static_cast<double>(sizes[i]);
    assigned += sizes[i];
  }
  while (assigned < n) {
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (fracs[i] > fracs[best]) best = i;
    ++sizes[best];
    fracs[best] = -1.0;
    ++assigned;
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  auto rng = rng_from(seed, {0x5971ull});
  deterministic_shuffle(order, rng);
  SplitResult result;
  for (std::size_t k = 0; k < n; ++k) {
    AnnotatedPlot plot = plots[order[k]];
    if (k < sizes[0]) {
      plot.split = Split::train;
      result.train.push_back(std::move(plot));
    } else if (k < sizes[0] + sizes[1]) {
      plot.split = Split::val;
      result.val.push_back(std::move(plot));
    } else {
      plot.split = Split::test;
      result.test.push_back(std::move(plot));
    }
  }
  return result;
}

// Majority cluster count across raters if a strict majority exists, else the
// mean of the per-rater counts.
inline double consensus_cluster_count(const RaterGroup& group) {
  if (group.raters() < 1) throw Error::data("consensus_cluster_count: empty rater group");
  std::map<int, int> votes;
  double total = 0.0;
  for (const Annotation& a : group.annotations) {
    const int c = cluster_count(a);
    ++votes[c];
    total += c;
  }
  const int m = group.raters();
  for (const auto& [count, n_votes] : votes)
    if (2 * n_votes > m) return static_cast<double>(count);
  return total / static_cast<double>(m);
}

// Round-half-up stratum key for (possibly fractional) consensus counts.
inline int consensus_stratum(double consensus) {
  return static_cast<int>(std::floor(consensus + 0.5));
}

// Gaussian blobs with pairwise-separated centers plus uniform noise, annotated
// by simulated raters. A rater keeps the ground-truth label with probability
// `rater_fidelity` and otherwise redraws it uniformly from the available
// labels (noise included), so the expected corrupted fraction is
// (1 - fidelity) * K / (K + 1) for K clusters.
inline std::vector<AnnotatedPlot> gen_synthetic(const SyntheticSpec& spec) {
  if (spec.rater_fidelity < 0.0 || spec.rater_fidelity > 1.0)
    throw Error::usage("rater_fidelity must be in [0, 1]");
  if (spec.noise_fraction < 0.0 || spec.noise_fraction > 1.0)
    throw Error::usage("noise_fraction must be in [0, 1]");
  if (spec.min_clusters < 1 || spec.max_clusters < spec.min_clusters)
    throw Error::usage("invalid cluster count range");
  if (spec.points_per_plot < spec.max_clusters)
    throw Error::usage("points_per_plot must be at least the cluster count");

  std::vector<AnnotatedPlot> plots;
  plots.reserve(static_cast<std::size_t>(spec.plot_count));
  for (int plot_idx = 0; plot_idx < spec.plot_count; ++plot_idx) {
    auto rng = rng_from(spec.seed, {0xb10b5, static_cast<std::uint64_t>(plot_idx)});
    const int k = spec.min_clusters +
                  static_cast<int>(bounded(rng, static_cast<std::uint64_t>(spec.max_clusters - spec.min_clusters + 1)));

    // Blob centers: rejection-sample until pairwise separation holds.
    std::vector<Point2> centers;
    const double min_sep = 0.6;
    while (static_cast<int>(centers.size()) < k) {
      Point2 c{uniform_in(rng, -0.7, 0.7), uniform_in(rng, -0.7, 0.7)};
      bool ok = true;
      for (const Point2& other : centers) {
        const double dx = c.x - other.x, dy = c.y - other.y;
        if (dx * dx + dy * dy < min_sep * min_sep) {
          ok = false;
          break;
        }
      }
      if (ok) centers.push_back(c);
    }
    std::vector<double> sigma;
    for (int c = 0; c < k; ++c) sigma.push_back(uniform_in(rng, 0.09, 0.16));

    const int n = spec.points_per_plot;
    const int n_noise = static_cast<int>(std::floor(spec.noise_fraction * n));
    const int n_clustered = n - n_noise;

    AnnotatedPlot plot;
    plot.pointset.id = "synthetic-" + std::to_string(spec.seed) + "-" + std::to_string(plot_idx);
    std::vector<int> truth;
    for (int i = 0; i < n_clustered; ++i) {
      const int c = i % k;
      plot.pointset.points.push_back({centers[c].x + sigma[c] * normal01(rng),
                                      centers[c].y + sigma[c] * normal01(rng)});
      truth.push_back(c + 1);
    }
    for (int i = 0; i < n_noise; ++i) {
      plot.pointset.points.push_back({uniform_in(rng, -1.0, 1.0), uniform_in(rng, -1.0, 1.0)});
      truth.push_back(0);
    }
    plot.pointset = normalize_points(plot.pointset);

    const std::uint64_t n_labels = static_cast<std::uint64_t>(k) + 1;
    for (int r = 0; r < spec.rater_count; ++r) {
      Annotation a;
      a.rater = "sim-" + std::to_string(r);
      a.labels = truth;
      for (int i = 0; i < n; ++i) {
        if (uniform01(rng) < 1.0 - spec.rater_fidelity)
          a.labels[static_cast<std::size_t>(i)] = static_cast<int>(bounded(rng, n_labels));
      }
      plot.group.annotations.push_back(std::move(a));
    }
    plots.push_back(std::move(plot));
  }
  return plots;
}

}  // namespace perclust
