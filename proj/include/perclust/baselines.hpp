#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "perclust/dataset.hpp"
#include "perclust/metrics.hpp"

namespace perclust {

namespace detail {

inline double dist2(const Point2& a, const Point2& b) {
  const double dx = a.x - b.x, dy = a.y - b.y;
  return dx * dx + dy * dy;
}

// Flat grid hash with eps-sized cells; neighborhoods only need the 3x3 block.
class GridIndex {
 public:
  GridIndex(const std::vector<Point2>& points, double cell) : points_(points), cell_(cell) {
    for (int i = 0; i < static_cast<int>(points.size()); ++i)
      cells_[key(points[static_cast<std::size_t>(i)])].push_back(i);
  }

  // Indices within `radius` of points[center], the center itself included.
  std::vector<int> neighbors(int center, double radius) const {
    const Point2 c = points_[static_cast<std::size_t>(center)];
    const double r2 = radius * radius;
    const auto [cx, cy] = key(c);
    std::vector<int> out;
    for (std::int64_t gx = cx - 1; gx <= cx + 1; ++gx)
      for (std::int64_t gy = cy - 1; gy <= cy + 1; ++gy) {
        auto it = cells_.find({gx, gy});
        if (it == cells_.end()) continue;
        for (int i : it->second)
          if (dist2(points_[static_cast<std::size_t>(i)], c) <= r2) out.push_back(i);
      }
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  std::pair<std::int64_t, std::int64_t> key(const Point2& p) const {
    return {static_cast<std::int64_t>(std::floor(p.x / cell_)),
            static_cast<std::int64_t>(std::floor(p.y / cell_))};
  }

  const std::vector<Point2>& points_;
  double cell_;
  std::map<std::pair<std::int64_t, std::int64_t>, std::vector<int>> cells_;
};

}  // namespace detail

// Density clustering; noise points keep label 0 and clusters are numbered in
// first-visit order, so the labeling is deterministic for a given input
// order. The point itself counts toward min_pts.
inline Annotation dbscan(const std::vector<Point2>& points, double eps, int min_pts) {
  if (eps <= 0.0) throw Error::usage("dbscan: eps must be positive");
  if (min_pts < 1) throw Error::usage("dbscan: min_pts must be >= 1");
  const int n = static_cast<int>(points.size());
  const int kUnvisited = -1;
  std::vector<int> label(static_cast<std::size_t>(n), kUnvisited);
  const detail::GridIndex index(points, eps);
  int next_cluster = 0;
  std::queue<int> queue;
  for (int seed = 0; seed < n; ++seed) {
    if (label[static_cast<std::size_t>(seed)] != kUnvisited) continue;
    const auto seed_neighbors = index.neighbors(seed, eps);
    if (static_cast<int>(seed_neighbors.size()) < min_pts) {
      label[static_cast<std::size_t>(seed)] = 0;
      continue;
    }
    const int cluster = ++next_cluster;
    label[static_cast<std::size_t>(seed)] = cluster;
    for (int i : seed_neighbors)
      if (i != seed) queue.push(i);
    while (!queue.empty()) {
      const int p = queue.front();
      queue.pop();
      if (label[static_cast<std::size_t>(p)] == 0) label[static_cast<std::size_t>(p)] = cluster;
      if (label[static_cast<std::size_t>(p)] != kUnvisited) continue;
      label[static_cast<std::size_t>(p)] = cluster;
      const auto expand = index.neighbors(p, eps);
      if (static_cast<int>(expand.size()) >= min_pts)
        for (int i : expand)
          if (label[static_cast<std::size_t>(i)] == kUnvisited || label[static_cast<std::size_t>(i)] == 0)
            queue.push(i);
    }
  }
  Annotation a;
  a.rater = "dbscan";
  a.labels.assign(label.begin(), label.end());
  return a;
}

// Straight O(N^2) reference used to cross-check the grid-hash index.
inline Annotation dbscan_naive(const std::vector<Point2>& points, double eps, int min_pts) {
  if (eps <= 0.0) throw Error::usage("dbscan: eps must be positive");
  const int n = static_cast<int>(points.size());
  const double r2 = eps * eps;
  auto neighbors = [&](int center) {
    std::vector<int> out;
    for (int i = 0; i < n; ++i)
      if (detail::dist2(points[static_cast<std::size_t>(i)], points[static_cast<std::size_t>(center)]) <= r2)
        out.push_back(i);
    return out;
  };
  const int kUnvisited = -1;
  std::vector<int> label(static_cast<std::size_t>(n), kUnvisited);
  int next_cluster = 0;
  std::queue<int> queue;
  for (int seed = 0; seed < n; ++seed) {
    if (label[static_cast<std::size_t>(seed)] != kUnvisited) continue;
    const auto seed_neighbors = neighbors(seed);
    if (static_cast<int>(seed_neighbors.size()) < min_pts) {
      label[static_cast<std::size_t>(seed)] = 0;
      continue;
    }
    const int cluster = ++next_cluster;
    label[static_cast<std::size_t>(seed)] = cluster;
    for (int i : seed_neighbors)
      if (i != seed) queue.push(i);
    while (!queue.empty()) {
      const int p = queue.front();
      queue.pop();
      if (label[static_cast<std::size_t>(p)] == 0) label[static_cast<std::size_t>(p)] = cluster;
      if (label[static_cast<std::size_t>(p)] != kUnvisited) continue;
      label[static_cast<std::size_t>(p)] = cluster;
      const auto expand = neighbors(p);
      if (static_cast<int>(expand.size()) >= min_pts)
        for (int i : expand)
          if (label[static_cast<std::size_t>(i)] == kUnvisited || label[static_cast<std::size_t>(i)] == 0)
            queue.push(i);
    }
  }
  Annotation a;
  a.rater = "dbscan";
  a.labels.assign(label.begin(), label.end());
  return a;
}

namespace detail {

// k-means++ seeding with explicit draws.
inline std::vector<Point2> kmeans_pp_init(const std::vector<Point2>& points, int k,
                                          std::mt19937_64& rng) {
  const int n = static_cast<int>(points.size());
  std::vector<Point2> centers;
  centers.push_back(points[static_cast<std::size_t>(bounded(rng, static_cast<std::uint64_t>(n)))]);
  std::vector<double> d2(static_cast<std::size_t>(n));
  while (static_cast<int>(centers.size()) < k) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const Point2& c : centers) best = std::min(best, dist2(points[static_cast<std::size_t>(i)], c));
      d2[static_cast<std::size_t>(i)] = best;
      total += best;
    }
    if (total <= 0.0) {
      centers.push_back(points[static_cast<std::size_t>(centers.size() % n)]);
      continue;
    }
    const double draw = uniform01(rng) * total;
    double acc = 0.0;
    int chosen = n - 1;
    for (int i = 0; i < n; ++i) {
      acc += d2[static_cast<std::size_t>(i)];
      if (acc >= draw) {
        chosen = i;
        break;
      }
    }
    centers.push_back(points[static_cast<std::size_t>(chosen)]);
  }
  return centers;
}

}  // namespace detail

struct KmeansResult {
  Annotation labels;
  std::vector<double> wcss_trace;  // within-cluster sum of squares per iteration
};

// Lloyd iterations from a k-means++ start; empty clusters re-seed at the
// point farthest from its assigned centroid. Labels 1..k, no noise.
inline KmeansResult kmeans_full(const std::vector<Point2>& points, int k, std::uint64_t seed) {
  const int n = static_cast<int>(points.size());
  if (k < 1 || k > n) throw Error::usage("kmeans: need 1 <= k <= point count");
  auto rng = rng_from(seed, {0x63a15ull});
  std::vector<Point2> centers = detail::kmeans_pp_init(points, k, rng);
  std::vector<int> assign(static_cast<std::size_t>(n), -1);
  KmeansResult result;
  for (int iter = 0; iter < 300; ++iter) {
    bool changed = false;
    double wcss = 0.0;
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double best_d = detail::dist2(points[static_cast<std::size_t>(i)], centers[0]);
      for (int c = 1; c < k; ++c) {
        const double d = detail::dist2(points[static_cast<std::size_t>(i)], centers[static_cast<std::size_t>(c)]);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      wcss += best_d;
      if (assign[static_cast<std::size_t>(i)] != best) {
        assign[static_cast<std::size_t>(i)] = best;
        changed = true;
      }
    }
    result.wcss_trace.push_back(wcss);
    std::vector<Point2> sums(static_cast<std::size_t>(k), {0.0, 0.0});
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (int i = 0; i < n; ++i) {
      sums[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])].x += points[static_cast<std::size_t>(i)].x;
      sums[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])].y += points[static_cast<std::size_t>(i)].y;
      ++counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] == 0) {
        // Re-seed at the farthest point from its current centroid.
        int farthest = 0;
        double far_d = -1.0;
        for (int i = 0; i < n; ++i) {
          const double d = detail::dist2(points[static_cast<std::size_t>(i)],
                                         centers[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])]);
          if (d > far_d) {
            far_d = d;
            farthest = i;
          }
        }
        centers[static_cast<std::size_t>(c)] = points[static_cast<std::size_t>(farthest)];
        changed = true;
      } else {
        centers[static_cast<std::size_t>(c)] = {sums[static_cast<std::size_t>(c)].x / counts[static_cast<std::size_t>(c)],
                                                sums[static_cast<std::size_t>(c)].y / counts[static_cast<std::size_t>(c)]};
      }
    }
    if (!changed && iter > 0) break;
  }
  result.labels.rater = "kmeans";
  for (int i = 0; i < n; ++i) result.labels.labels.push_back(assign[static_cast<std::size_t>(i)] + 1);
  return result;
}

inline Annotation kmeans(const std::vector<Point2>& points, int k, std::uint64_t seed) {
  return kmeans_full(points, k, seed).labels;
}

// Agglomerative merging with the Lance-Williams update on squared Euclidean
// distances (the merge cost stays proportional to the Ward variance
// increase). Ties break toward the smallest slot pair.
inline Annotation ward(const std::vector<Point2>& points, int k) {
  const int n = static_cast<int>(points.size());
  if (k < 1 || k > n) throw Error::usage("ward: need 1 <= k <= point count");
  std::vector<double> d(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      d[static_cast<std::size_t>(i) * n + j] = detail::dist2(points[static_cast<std::size_t>(i)],
                                                             points[static_cast<std::size_t>(j)]);
  std::vector<int> size(static_cast<std::size_t>(n), 1);
  std::vector<char> active(static_cast<std::size_t>(n), 1);
  std::vector<int> member(static_cast<std::size_t>(n));  // point -> slot
  for (int i = 0; i < n; ++i) member[static_cast<std::size_t>(i)] = i;

  for (int clusters = n; clusters > k; --clusters) {
    int best_a = -1, best_b = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (int a = 0; a < n; ++a) {
      if (!active[static_cast<std::size_t>(a)]) continue;
      for (int b = a + 1; b < n; ++b) {
        if (!active[static_cast<std::size_t>(b)]) continue;
        const double v = d[static_cast<std::size_t>(a) * n + b];
        if (v < best_d) {
          best_d = v;
          best_a = a;
          best_b = b;
        }
      }
    }
    if (best_a < 0 || best_b < 0) throw Error::numeric("ward: no mergeable pair found");
    const int a = best_a, b = best_b;
    const double dab = d[static_cast<std::size_t>(a) * n + b];
    const int na = size[static_cast<std::size_t>(a)], nb = size[static_cast<std::size_t>(b)];
    for (int x = 0; x < n; ++x) {
      if (!active[static_cast<std::size_t>(x)] || x == a || x == b) continue;
      const int nx = size[static_cast<std::size_t>(x)];
      const double dax = d[static_cast<std::size_t>(a) * n + x];
      const double dbx = d[static_cast<std::size_t>(b) * n + x];
      const double merged = ((na + nx) * dax + (nb + nx) * dbx - nx * dab) /
                            static_cast<double>(na + nb + nx);
      d[static_cast<std::size_t>(a) * n + x] = merged;
      d[static_cast<std::size_t>(x) * n + a] = merged;
    }
    size[static_cast<std::size_t>(a)] = na + nb;
    active[static_cast<std::size_t>(b)] = 0;
    for (int i = 0; i < n; ++i)
      if (member[static_cast<std::size_t>(i)] == b) member[static_cast<std::size_t>(i)] = a;
  }

  // Relabel slots 1..k in order of smallest member point.
  std::map<int, int> relabel;
  for (int i = 0; i < n; ++i) {
    auto [it, inserted] = relabel.emplace(member[static_cast<std::size_t>(i)], 0);
    (void)it;
  }
  int next = 0;
  for (int i = 0; i < n; ++i) {
    auto it = relabel.find(member[static_cast<std::size_t>(i)]);
    if (it->second == 0) it->second = ++next;
  }
  Annotation a;
  a.rater = "ward";
  for (int i = 0; i < n; ++i) a.labels.push_back(relabel[member[static_cast<std::size_t>(i)]]);
  return a;
}

struct GmmResult {
  Annotation labels;
  std::vector<double> log_likelihood_trace;
};

// EM with full 2x2 covariances, k-means++ means, 1e-6 I regularization and a
// 1e-6 log-likelihood gain stop (200 iterations cap).
inline GmmResult gmm_full(const std::vector<Point2>& points, int k, std::uint64_t seed) {
  const int n = static_cast<int>(points.size());
  if (k < 1 || k > n) throw Error::usage("gmm: need 1 <= k <= point count");
  auto rng = rng_from(seed, {0x96bull});
  std::vector<Point2> means = detail::kmeans_pp_init(points, k, rng);
  // Shared initial covariance: sample covariance of the data.
  double mx = 0.0, my = 0.0;
  for (const Point2& p : points) {
    mx += p.x;
    my += p.y;
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (const Point2& p : points) {
    sxx += (p.x - mx) * (p.x - mx);
    sxy += (p.x - mx) * (p.y - my);
    syy += (p.y - my) * (p.y - my);
  }
  const double reg = 1e-6;
  sxx = sxx / n + reg;
  syy = syy / n + reg;
  sxy = sxy / n;
  struct Component {
    double wx = 0.0, wy = 0.0;  // mean
    double cxx = 1.0, cxy = 0.0, cyy = 1.0;
    double weight = 1.0;
  };
  std::vector<Component> comps(static_cast<std::size_t>(k));
  for (int c = 0; c < k; ++c) {
    comps[static_cast<std::size_t>(c)] = {means[static_cast<std::size_t>(c)].x,
                                          means[static_cast<std::size_t>(c)].y,
                                          sxx, sxy, syy, 1.0 / k};
  }

  const double log2pi = std::log(2.0 * 3.14159265358979323846);
  std::vector<double> resp(static_cast<std::size_t>(n) * k, 0.0);
  GmmResult result;
  double prev_ll = -std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < 200; ++iter) {
    // E step.
    double ll = 0.0;
    for (int i = 0; i < n; ++i) {
      double best = -std::numeric_limits<double>::infinity();
      std::vector<double> logp(static_cast<std::size_t>(k));
      for (int c = 0; c < k; ++c) {
        const Component& g = comps[static_cast<std::size_t>(c)];
        const double det = g.cxx * g.cyy - g.cxy * g.cxy;
        const double inv_xx = g.cyy / det, inv_yy = g.cxx / det, inv_xy = -g.cxy / det;
        const double dx = points[static_cast<std::size_t>(i)].x - g.wx;
        const double dy = points[static_cast<std::size_t>(i)].y - g.wy;
        const double q = dx * (inv_xx * dx + inv_xy * dy) + dy * (inv_xy * dx + inv_yy * dy);
        logp[static_cast<std::size_t>(c)] = std::log(g.weight) - log2pi - 0.5 * std::log(det) - 0.5 * q;
        best = std::max(best, logp[static_cast<std::size_t>(c)]);
      }
      double sum = 0.0;
      for (int c = 0; c < k; ++c) sum += std::exp(logp[static_cast<std::size_t>(c)] - best);
      ll += best + std::log(sum);
      for (int c = 0; c < k; ++c)
        resp[static_cast<std::size_t>(i) * k + c] = std::exp(logp[static_cast<std::size_t>(c)] - best) / sum;
    }
    result.log_likelihood_trace.push_back(ll);
    if (ll - prev_ll < 1e-6 && iter > 0) break;
    prev_ll = ll;
    // M step.
    for (int c = 0; c < k; ++c) {
      double rsum = 0.0, rx = 0.0, ry = 0.0;
      for (int i = 0; i < n; ++i) {
        const double r = resp[static_cast<std::size_t>(i) * k + c];
        rsum += r;
        rx += r * points[static_cast<std::size_t>(i)].x;
        ry += r * points[static_cast<std::size_t>(i)].y;
      }
      Component& g = comps[static_cast<std::size_t>(c)];
      if (rsum < 1e-12) {
        g.weight = 1e-12;
        continue;
      }
      g.wx = rx / rsum;
      g.wy = ry / rsum;
      double cxx = 0.0, cxy = 0.0, cyy = 0.0;
      for (int i = 0; i < n; ++i) {
        const double r = resp[static_cast<std::size_t>(i) * k + c];
        const double dx = points[static_cast<std::size_t>(i)].x - g.wx;
        const double dy = points[static_cast<std::size_t>(i)].y - g.wy;
        cxx += r * dx * dx;
        cxy += r * dx * dy;
        cyy += r * dy * dy;
      }
      g.cxx = cxx / rsum + reg;
      g.cxy = cxy / rsum;
      g.cyy = cyy / rsum + reg;
      g.weight = rsum / n;
    }
  }

  result.labels.rater = "gmm";
  for (int i = 0; i < n; ++i) {
    int best = 0;
    double best_r = resp[static_cast<std::size_t>(i) * k];
    for (int c = 1; c < k; ++c)
      if (resp[static_cast<std::size_t>(i) * k + c] > best_r) {
        best_r = resp[static_cast<std::size_t>(i) * k + c];
        best = c;
      }
    result.labels.labels.push_back(best + 1);
  }
  return result;
}

inline Annotation gmm(const std::vector<Point2>& points, int k, std::uint64_t seed) {
  return gmm_full(points, k, seed).labels;
}

// ---------------------------------------------------------------------------
// Parameter search harness
// ---------------------------------------------------------------------------

enum class BaselineAlgorithm { dbscan, kmeans, ward, gmm };

inline const char* algorithm_name(BaselineAlgorithm a) {
  switch (a) {
    case BaselineAlgorithm::dbscan: return "dbscan";
    case BaselineAlgorithm::kmeans: return "kmeans";
    case BaselineAlgorithm::ward: return "ward";
    case BaselineAlgorithm::gmm: return "gmm";
  }
  return "dbscan";
}

inline BaselineAlgorithm algorithm_from_name(const std::string& name) {
  if (name == "dbscan") return BaselineAlgorithm::dbscan;
  if (name == "kmeans") return BaselineAlgorithm::kmeans;
  if (name == "ward") return BaselineAlgorithm::ward;
  if (name == "gmm") return BaselineAlgorithm::gmm;
  throw Error::usage("unknown baseline algorithm: " + name);
}

enum class KMode { fixed, oracle_consensus };

struct BaselineSpec {
  BaselineAlgorithm algorithm = BaselineAlgorithm::dbscan;
  double eps = 0.1;
  int min_pts = 5;
  int k = 2;
  KMode k_mode = KMode::fixed;
  std::uint64_t seed = 0;
};

// Oracle-k mode feeds the rounded consensus cluster count from the group,
// clamped to [1, N]; it requires annotations.
inline Annotation run_baseline(const BaselineSpec& spec, const AnnotatedPlot& plot) {
  const auto& points = plot.pointset.points;
  int k = spec.k;
  if (spec.k_mode == KMode::oracle_consensus) {
    if (plot.group.raters() < 1)
      throw Error::data("oracle k mode requires group annotations for '" + plot.pointset.id + "'");
    k = std::clamp(consensus_stratum(consensus_cluster_count(plot.group)), 1,
                   static_cast<int>(points.size()));
  }
  switch (spec.algorithm) {
    case BaselineAlgorithm::dbscan: return dbscan(points, spec.eps, spec.min_pts);
    case BaselineAlgorithm::kmeans: return kmeans(points, k, spec.seed);
    case BaselineAlgorithm::ward: return ward(points, k);
    case BaselineAlgorithm::gmm: return gmm(points, k, spec.seed);
  }
  throw Error::usage("unreachable baseline algorithm");
}

struct GridSpec {
  std::vector<double> eps_candidates{0.05, 0.08, 0.12, 0.16, 0.2, 0.25};
  std::vector<int> min_pts_candidates{3, 5, 10};
  std::vector<int> k_candidates{1, 2, 3, 4, 5, 6};
};

struct GridRow {
  BaselineSpec spec;
  double mean_chi = 0.0;
  double mean_vanbelle = 0.0;
  std::optional<double> mean_noise_iou;
};

struct GridSearchResult {
  BaselineSpec best;
  double best_score = 0.0;
  std::vector<GridRow> table;
};

// Enumerates the grid (first parameter varies slowest), scores each candidate
// by mean chi over the split and keeps the first argmax.
inline GridSearchResult grid_search(BaselineAlgorithm algorithm, const GridSpec& grid,
                                    const std::vector<AnnotatedPlot>& plots, std::uint64_t seed = 0) {
  if (plots.empty()) throw Error::data("grid_search: empty split");
  std::vector<BaselineSpec> candidates;
  if (algorithm == BaselineAlgorithm::dbscan) {
    if (grid.eps_candidates.empty() || grid.min_pts_candidates.empty())
      throw Error::usage("grid_search: empty dbscan grid");
    for (double eps : grid.eps_candidates)
      for (int min_pts : grid.min_pts_candidates) {
        BaselineSpec s;
        s.algorithm = algorithm;
        s.eps = eps;
        s.min_pts = min_pts;
        s.seed = seed;
        candidates.push_back(s);
      }
  } else {
    if (grid.k_candidates.empty()) throw Error::usage("grid_search: empty k grid");
    for (int k : grid.k_candidates) {
      BaselineSpec s;
      s.algorithm = algorithm;
      s.k = std::min(k, static_cast<int>(plots.front().pointset.points.size()));
      s.seed = seed;
      candidates.push_back(s);
    }
  }

  GridSearchResult result;
  bool first = true;
  for (const BaselineSpec& spec : candidates) {
    std::vector<PlotMetrics> rows(plots.size());
    parallel_for(plots.size(), [&](std::size_t i) {
      const Annotation pred = run_baseline(spec, plots[i]);
      PlotMetrics m;
      m.chi = chi(pred, plots[i].group);
      m.vanbelle = vanbelle(pred, plots[i].group);
      m.noise_iou = noise_iou(pred, plots[i].group);
      bool has_noise = false;
      for (const Annotation& r : plots[i].group.annotations)
        for (int l : r.labels) has_noise = has_noise || l == 0;
      m.group_has_noise = has_noise;
      rows[i] = m;
    });
    GridRow row;
    row.spec = spec;
    double iou = 0.0;
    int iou_n = 0;
    for (const PlotMetrics& m : rows) {
      row.mean_chi += m.chi;
      row.mean_vanbelle += m.vanbelle;
      if (m.group_has_noise) {
        iou += m.noise_iou;
        ++iou_n;
      }
    }
    row.mean_chi /= static_cast<double>(rows.size());
    row.mean_vanbelle /= static_cast<double>(rows.size());
    if (iou_n > 0) row.mean_noise_iou = iou / iou_n;
    result.table.push_back(row);
    if (first || row.mean_chi > result.best_score) {
      result.best = spec;
      result.best_score = row.mean_chi;
      first = false;
    }
  }
  return result;
}

}  // namespace perclust
