#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>

#include "oracle.hpp"
#include "perclust/dataset.hpp"
#include "perclust/metrics.hpp"

using namespace perclust;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  auto dir = fs::temp_directory_path() / "perclust_tests";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("normalize_points worked values") {
  PointSet p{"a", {{0, 0}, {4, 2}}};
  auto out = normalize_points(p);
  CHECK(out.points[0].x == -1.0);
  CHECK(out.points[0].y == -1.0);
  CHECK(out.points[1].x == 1.0);
  CHECK(out.points[1].y == 1.0);

  PointSet already{"b", {{-1, -1}, {1, 1}}};
  auto same = normalize_points(already);
  CHECK(same.points[0].x == -1.0);
  CHECK(same.points[1].y == 1.0);

  PointSet degenerate{"c", {{3, 0}, {3, 1}}};
  auto deg = normalize_points(degenerate);
  CHECK(deg.points[0].x == 0.0);
  CHECK(deg.points[1].x == 0.0);
  CHECK(deg.points[0].y == -1.0);
  CHECK(deg.points[1].y == 1.0);

  PointSet bad{"d", {{0, 0}, {std::nan(""), 1}}};
  CHECK_THROWS_WITH(normalize_points(bad), Catch::Matchers::ContainsSubstring("d"));
  CHECK_THROWS_AS(normalize_points(PointSet{"e", {{1, 2}}}), Error);
}

TEST_CASE("normalize_points is exactly idempotent") {
  std::mt19937_64 rng(42);
  for (int t = 0; t < 30; ++t) {
    PointSet p{"p", {}};
    const int n = 2 + static_cast<int>(bounded(rng, 40));
    for (int i = 0; i < n; ++i)
      p.points.push_back({uniform_in(rng, -50.0, 120.0), uniform_in(rng, -3.0, 0.25)});
    auto once = normalize_points(p);
    auto twice = normalize_points(once);
    for (int i = 0; i < n; ++i) {
      CHECK(once.points[i].x == twice.points[i].x);
      CHECK(once.points[i].y == twice.points[i].y);
      CHECK(once.points[i].x >= -1.0);
      CHECK(once.points[i].x <= 1.0);
    }
  }
}

TEST_CASE("normalize_points commutes with point permutation") {
  std::mt19937_64 rng(43);
  for (int t = 0; t < 20; ++t) {
    const int n = 3 + static_cast<int>(bounded(rng, 20));
    PointSet p{"p", {}};
    for (int i = 0; i < n; ++i)
      p.points.push_back({uniform_in(rng, -5.0, 5.0), uniform_in(rng, 0.0, 9.0)});
    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = i;
    deterministic_shuffle(perm, rng);
    PointSet permuted{"p", {}};
    permuted.points.resize(n);
    for (int i = 0; i < n; ++i) permuted.points[static_cast<std::size_t>(perm[i])] = p.points[static_cast<std::size_t>(i)];
    auto norm_then_perm = normalize_points(p);
    auto perm_then_norm = normalize_points(permuted);
    for (int i = 0; i < n; ++i) {
      CHECK(perm_then_norm.points[static_cast<std::size_t>(perm[i])].x == norm_then_perm.points[static_cast<std::size_t>(i)].x);
      CHECK(perm_then_norm.points[static_cast<std::size_t>(perm[i])].y == norm_then_perm.points[static_cast<std::size_t>(i)].y);
    }
  }
}

TEST_CASE("load_dataset parses and validates") {
  auto path = temp_file("ok.jsonl");
  {
    std::ofstream out(path);
    out << R"({"id":"s0","points":[[0,0],[4,2]],"annotations":[{"rater":"r0","labels":[1,2]}]})" << "\n";
    out << R"({"id":"s1","points":[[0,1],[2,3]],"annotations":[{"rater":"r0","labels":[0,1]},{"rater":"r1","labels":[1,1]}],"source":"unit"})" << "\n";
  }
  auto plots = load_dataset(path.string());
  REQUIRE(plots.size() == 2);
  CHECK(plots[0].pointset.id == "s0");
  CHECK(plots[0].pointset.points[0].x == -1.0);   // normalized on load
  CHECK(plots[1].group.raters() == 2);

  auto mismatch = temp_file("mismatch.jsonl");
  {
    std::ofstream out(mismatch);
    out << R"({"id":"bad","points":[[0,0],[1,1]],"annotations":[{"rater":"r0","labels":[1]}]})" << "\n";
  }
  CHECK_THROWS_WITH(load_dataset(mismatch.string()), Catch::Matchers::ContainsSubstring("bad"));

  auto invalid = temp_file("invalid.jsonl");
  {
    std::ofstream out(invalid);
    out << "{not json}\n";
  }
  CHECK_THROWS_WITH(load_dataset(invalid.string()), Catch::Matchers::ContainsSubstring(":1"));

  auto empty = temp_file("empty.jsonl");
  { std::ofstream out(empty); }
  CHECK(load_dataset(empty.string()).empty());
}

TEST_CASE("dataset save/load round trip") {
  SyntheticSpec spec;
  spec.plot_count = 3;
  spec.points_per_plot = 24;
  spec.seed = 9;
  auto plots = gen_synthetic(spec);
  auto path = temp_file("roundtrip.jsonl");
  save_dataset(plots, path.string(), "synthetic");
  auto loaded = load_dataset(path.string());
  REQUIRE(loaded.size() == plots.size());
  for (std::size_t i = 0; i < plots.size(); ++i) {
    CHECK(loaded[i].pointset.id == plots[i].pointset.id);
    REQUIRE(loaded[i].pointset.size() == plots[i].pointset.size());
    for (int j = 0; j < plots[i].pointset.size(); ++j) {
      CHECK(loaded[i].pointset.points[static_cast<std::size_t>(j)].x ==
            plots[i].pointset.points[static_cast<std::size_t>(j)].x);
    }
    CHECK(loaded[i].group.annotations[0].labels == plots[i].group.annotations[0].labels);
  }
}

TEST_CASE("split_dataset sizes and determinism") {
  std::vector<AnnotatedPlot> plots;
  for (int i = 0; i < 10; ++i) {
    AnnotatedPlot p;
    p.pointset = {"p" + std::to_string(i), {{0, 0}, {1, 1}}};
    plots.push_back(p);
  }
  auto split = split_dataset(plots, 0.8, 0.1, 0.1, 7);
  CHECK(split.train.size() == 8);
  CHECK(split.val.size() == 1);
  CHECK(split.test.size() == 1);

  auto again = split_dataset(plots, 0.8, 0.1, 0.1, 7);
  for (std::size_t i = 0; i < split.train.size(); ++i)
    CHECK(split.train[i].pointset.id == again.train[i].pointset.id);

  CHECK_THROWS_AS(split_dataset(plots, 0.5, 0.1, 0.1, 7), Error);
}

TEST_CASE("split_dataset reproduces published split sizes from ratios") {
  std::vector<AnnotatedPlot> plots;
  for (int i = 0; i < 1464; ++i) {
    AnnotatedPlot p;
    p.pointset = {"p" + std::to_string(i), {{0, 0}, {1, 1}}};
    plots.push_back(p);
  }
  auto split = split_dataset(plots, 1171.0 / 1464.0, 87.0 / 1464.0, 206.0 / 1464.0, 1);
  CHECK(split.train.size() == 1171);
  CHECK(split.val.size() == 87);
  CHECK(split.test.size() == 206);
}

TEST_CASE("split_dataset partitions the input for any seed") {
  std::vector<AnnotatedPlot> plots;
  for (int i = 0; i < 23; ++i) {
    AnnotatedPlot p;
    p.pointset = {"p" + std::to_string(i), {{0, 0}, {1, 1}}};
    plots.push_back(p);
  }
  for (std::uint64_t seed : {1ull, 99ull, 123456789ull}) {
    auto split = split_dataset(plots, 0.6, 0.2, 0.2, seed);
    std::set<std::string> seen;
    for (const auto* part : {&split.train, &split.val, &split.test})
      for (const auto& p : *part) CHECK(seen.insert(p.pointset.id).second);
    CHECK(seen.size() == plots.size());
  }
}

TEST_CASE("consensus cluster count") {
  auto group_with_counts = [](std::initializer_list<int> counts) {
    RaterGroup g;
    int rater = 0;
    for (int c : counts) {
      Annotation a;
      a.rater = "r" + std::to_string(rater++);
      // c clusters followed by padding points repeating the last cluster.
      for (int i = 1; i <= c; ++i) a.labels.push_back(i);
      while (a.labels.size() < 6) a.labels.push_back(c == 0 ? 0 : c);
      g.annotations.push_back(a);
    }
    return g;
  };
  CHECK(consensus_cluster_count(group_with_counts({2, 2, 2, 3, 4})) == 2.0);
  CHECK(consensus_cluster_count(group_with_counts({1, 2, 2, 3, 3})) == Catch::Approx(2.2).margin(1e-12));
  CHECK(consensus_cluster_count(group_with_counts({3, 3, 3, 3, 3})) == 3.0);
  CHECK(consensus_stratum(2.2) == 2);
  CHECK(consensus_stratum(2.5) == 3);
}

TEST_CASE("gen_synthetic basic contracts") {
  SyntheticSpec spec;
  spec.plot_count = 4;
  spec.points_per_plot = 64;
  spec.rater_fidelity = 1.0;
  spec.seed = 3;
  auto plots = gen_synthetic(spec);
  REQUIRE(plots.size() == 4);
  for (const auto& plot : plots) {
    CHECK(plot.pointset.size() == 64);
    for (const auto& a : plot.group.annotations) CHECK(a.labels == plot.group.annotations[0].labels);
  }

  SyntheticSpec clean = spec;
  clean.noise_fraction = 0.0;
  for (const auto& plot : gen_synthetic(clean))
    for (int l : plot.group.annotations[0].labels) CHECK(l > 0);

  SyntheticSpec bad = spec;
  bad.points_per_plot = 2;
  bad.max_clusters = 4;
  CHECK_THROWS_AS(gen_synthetic(bad), Error);
}

TEST_CASE("gen_synthetic is byte-deterministic") {
  SyntheticSpec spec;
  spec.plot_count = 3;
  spec.points_per_plot = 48;
  spec.seed = 77;
  auto a = temp_file("det_a.jsonl");
  auto b = temp_file("det_b.jsonl");
  save_dataset(gen_synthetic(spec), a.string(), "synthetic");
  save_dataset(gen_synthetic(spec), b.string(), "synthetic");
  CHECK(slurp(a) == slurp(b));
}

TEST_CASE("gen_synthetic corruption rate matches the fidelity model") {
  // With K available labels, the expected differing fraction is
  // (1 - f) * (K - 1) / K; checked at +-3 sigma over 10^4 points.
  SyntheticSpec spec;
  spec.plot_count = 10;
  spec.points_per_plot = 1000;
  spec.min_clusters = 3;
  spec.max_clusters = 3;
  spec.noise_fraction = 0.1;
  spec.rater_count = 1;
  spec.rater_fidelity = 0.8;
  spec.seed = 123;
  auto plots = gen_synthetic(spec);

  // Recover ground truth: fidelity-1 run with the same seed produces it.
  SyntheticSpec truth_spec = spec;
  truth_spec.rater_fidelity = 1.0;
  // Note: fidelity changes the rng consumption, so instead compare against a
  // second rater-free source: regenerate with rater_count 0 is not possible,
  // so use the known construction: labels of points are i % k for clustered
  // points and 0 for the trailing noise block, before normalization keeps
  // order. Rebuild it directly:
  int diffs = 0, total = 0;
  const int k = 3;
  const double expected_rate = (1.0 - spec.rater_fidelity) * k / (k + 1.0);
  for (const auto& plot : plots) {
    const int n = plot.pointset.size();
    const int n_noise = static_cast<int>(std::floor(spec.noise_fraction * n));
    const int n_clustered = n - n_noise;
    for (int i = 0; i < n; ++i) {
      const int truth = i < n_clustered ? i % k + 1 : 0;
      diffs += plot.group.annotations[0].labels[static_cast<std::size_t>(i)] != truth;
      ++total;
    }
  }
  const double rate = static_cast<double>(diffs) / total;
  const double sigma = std::sqrt(expected_rate * (1.0 - expected_rate) / total);
  CHECK(rate == Catch::Approx(expected_rate).margin(3.0 * sigma));
}

TEST_CASE("splits file round trip") {
  std::vector<AnnotatedPlot> plots;
  for (int i = 0; i < 6; ++i) {
    AnnotatedPlot p;
    p.pointset = {"p" + std::to_string(i), {{0, 0}, {1, 1}}};
    p.split = i < 3 ? Split::train : (i < 5 ? Split::val : Split::test);
    plots.push_back(p);
  }
  auto path = temp_file("splits.jsonl");
  save_splits(plots, path.string());
  auto splits = load_splits(path.string());
  std::vector<AnnotatedPlot> reset = plots;
  for (auto& p : reset) p.split = Split::train;
  apply_splits(reset, splits);
  for (std::size_t i = 0; i < plots.size(); ++i) CHECK(reset[i].split == plots[i].split);
}
