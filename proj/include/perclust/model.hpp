#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "perclust/autodiff.hpp"
#include "perclust/common.hpp"
#include "perclust/metrics.hpp"

namespace perclust {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

struct ModelConfig {
  std::vector<int> level_sizes{256, 128, 64, 8};
  std::vector<double> group_radii{0.1, 0.2, 0.4, 0.8};
  std::vector<int> group_max_neighbors{32, 32, 32, 32};
  std::vector<std::vector<int>> sa_mlp_widths{{32, 64}, {64, 128}, {128, 256}, {256, 512}};
  std::vector<int> fp_feature_sizes{256, 256, 128, 128};
  int head_width = 128;
  int max_clusters = 20;

  int levels() const { return static_cast<int>(level_sizes.size()); }

  void validate() const {
    const std::size_t l = level_sizes.size();
    if (l == 0 || group_radii.size() != l || group_max_neighbors.size() != l ||
        sa_mlp_widths.size() != l || fp_feature_sizes.size() != l)
      throw Error::usage("model config: per-level lists must have equal lengths");
    for (std::size_t i = 1; i < l; ++i) {
      if (level_sizes[i] >= level_sizes[i - 1])
        throw Error::usage("model config: level sizes must be strictly decreasing");
      if (group_radii[i] <= group_radii[i - 1])
        throw Error::usage("model config: group radii must be strictly increasing");
    }
    for (const auto& widths : sa_mlp_widths)
      if (widths.empty()) throw Error::usage("model config: empty MLP width list");
    for (int k : group_max_neighbors)
      if (k < 1) throw Error::usage("model config: group_max_neighbors must be >= 1");
    if (max_clusters < 1) throw Error::usage("model config: max_clusters must be >= 1");
    if (head_width != fp_feature_sizes.back())
      throw Error::usage("model config: head_width must equal the final propagation width");
  }
};

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  return nlohmann::json{{"level_sizes", c.level_sizes},
                        {"group_radii", c.group_radii},
                        {"group_max_neighbors", c.group_max_neighbors},
                        {"sa_mlp_widths", c.sa_mlp_widths},
                        {"fp_feature_sizes", c.fp_feature_sizes},
                        {"head_width", c.head_width},
                        {"max_clusters", c.max_clusters}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  if (j.contains("level_sizes")) c.level_sizes = j["level_sizes"].get<std::vector<int>>();
  if (j.contains("group_radii")) c.group_radii = j["group_radii"].get<std::vector<double>>();
  if (j.contains("group_max_neighbors"))
    c.group_max_neighbors = j["group_max_neighbors"].get<std::vector<int>>();
  if (j.contains("sa_mlp_widths")) c.sa_mlp_widths = j["sa_mlp_widths"].get<std::vector<std::vector<int>>>();
  if (j.contains("fp_feature_sizes")) c.fp_feature_sizes = j["fp_feature_sizes"].get<std::vector<int>>();
  if (j.contains("head_width")) c.head_width = j["head_width"].get<int>();
  if (j.contains("max_clusters")) c.max_clusters = j["max_clusters"].get<int>();
  c.validate();
  return c;
}

// Named parameter tensors in a fixed construction order, so the checkpoint
// manifest and gradient reductions are deterministic.
struct ModelParams {
  std::vector<std::string> names;
  std::vector<ad::Tensor> tensors;

  int index(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return static_cast<int>(i);
    throw Error::numeric("model params: unknown tensor '" + name + "'");
  }

  std::size_t total_values() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.numel();
    return n;
  }
};

namespace detail {

inline void add_param(ModelParams& p, const std::string& name, int rows, int cols,
                      std::mt19937_64& rng, double limit) {
  ad::Tensor t = ad::Tensor::zeros({rows, cols});
  for (double& v : t.values) v = uniform_in(rng, -limit, limit);
  p.names.push_back(name);
  p.tensors.push_back(std::move(t));
}

// Biases draw from U(-1/sqrt(fan_in), 1/sqrt(fan_in)); a nonzero bias keeps
// the all-zero relative-position rows off the relu kink.
inline void add_bias(ModelParams& p, const std::string& name, int n, std::mt19937_64& rng,
                     int fan_in) {
  ad::Tensor t = ad::Tensor::zeros({n});
  const double limit = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : t.values) v = uniform_in(rng, -limit, limit);
  p.names.push_back(name);
  p.tensors.push_back(std::move(t));
}

// Input feature width of the shared MLP at each abstraction level:
// relative position (2) plus the previous level's feature width.
inline int sa_input_width(const ModelConfig& c, int level) {
  return 2 + (level == 0 ? 0 : c.sa_mlp_widths[static_cast<std::size_t>(level - 1)].back());
}

// Input width of each propagation MLP: interpolated coarse features plus the
// skip features of the target level (none at the raw-point level).
inline int fp_input_width(const ModelConfig& c, int step) {
  const int levels = c.levels();
  const int coarse = step == 0 ? c.sa_mlp_widths.back().back()
                               : c.fp_feature_sizes[static_cast<std::size_t>(step - 1)];
  const int target_level = levels - 1 - step;  // 0 means the raw points
  const int skip =
      target_level == 0 ? 0 : c.sa_mlp_widths[static_cast<std::size_t>(target_level - 1)].back();
  return coarse + skip;
}

}  // namespace detail

inline ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParams p;
  auto rng = rng_from(seed, {0x9a7a3ull});
  for (int l = 0; l < config.levels(); ++l) {
    int in = detail::sa_input_width(config, l);
    const auto& widths = config.sa_mlp_widths[static_cast<std::size_t>(l)];
    for (std::size_t layer = 0; layer < widths.size(); ++layer) {
      const int out = widths[layer];
      const std::string base = "sa" + std::to_string(l) + ".l" + std::to_string(layer);
      detail::add_param(p, base + ".w", in, out, rng, std::sqrt(6.0 / in));
      detail::add_bias(p, base + ".b", out, rng, in);
      in = out;
    }
  }
  for (int s = 0; s < config.levels(); ++s) {
    int in = detail::fp_input_width(config, s);
    const int out = config.fp_feature_sizes[static_cast<std::size_t>(s)];
    for (int layer = 0; layer < 2; ++layer) {
      const std::string base = "fp" + std::to_string(s) + ".l" + std::to_string(layer);
      detail::add_param(p, base + ".w", in, out, rng, std::sqrt(6.0 / in));
      detail::add_bias(p, base + ".b", out, rng, in);
      in = out;
    }
  }
  const int head_out = config.max_clusters + 2;
  detail::add_param(p, "head.w", config.head_width, head_out, rng,
                    std::sqrt(6.0 / (config.head_width + head_out)));
  detail::add_bias(p, "head.b", head_out, rng, config.head_width);
  return p;
}

// Greedy max-min farthest point sampling starting at start_index. Selected
// indices are pairwise distinct; ties pick the lowest candidate index.
inline std::vector<int> farthest_point_sampling(const std::vector<Point2>& points, int m,
                                                int start_index) {
  const int n = static_cast<int>(points.size());
  if (m < 1 || m > n) throw Error::usage("farthest_point_sampling: need 1 <= m <= point count");
  if (start_index < 0 || start_index >= n)
    throw Error::usage("farthest_point_sampling: start index out of range");
  std::vector<int> selected;
  selected.reserve(static_cast<std::size_t>(m));
  std::vector<char> taken(static_cast<std::size_t>(n), 0);
  std::vector<double> min_d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  int current = start_index;
  selected.push_back(current);
  taken[static_cast<std::size_t>(current)] = 1;
  for (int picked = 1; picked < m; ++picked) {
    const Point2 c = points[static_cast<std::size_t>(current)];
    int best = -1;
    double best_d2 = -1.0;
    for (int i = 0; i < n; ++i) {
      if (taken[static_cast<std::size_t>(i)]) continue;
      const double dx = points[static_cast<std::size_t>(i)].x - c.x;
      const double dy = points[static_cast<std::size_t>(i)].y - c.y;
      min_d2[static_cast<std::size_t>(i)] = std::min(min_d2[static_cast<std::size_t>(i)], dx * dx + dy * dy);
      if (min_d2[static_cast<std::size_t>(i)] > best_d2) {
        best_d2 = min_d2[static_cast<std::size_t>(i)];
        best = i;
      }
    }
    current = best;
    selected.push_back(current);
    taken[static_cast<std::size_t>(current)] = 1;
  }
  return selected;
}

// Up to k_max indices within `radius` of each center, nearest first, center
// itself always leading. No padding: a lonely center yields a singleton.
inline std::vector<std::vector<int>> ball_query(const std::vector<Point2>& points,
                                                const std::vector<int>& center_indices, double radius,
                                                int k_max) {
  if (radius <= 0.0) throw Error::usage("ball_query: radius must be positive");
  if (k_max < 1) throw Error::usage("ball_query: k_max must be >= 1");
  const double r2 = radius * radius;
  std::vector<std::vector<int>> groups;
  groups.reserve(center_indices.size());
  std::vector<std::pair<double, int>> in_range;
  for (int center : center_indices) {
    const Point2 c = points[static_cast<std::size_t>(center)];
    in_range.clear();
    for (int i = 0; i < static_cast<int>(points.size()); ++i) {
      if (i == center) continue;
      const double dx = points[static_cast<std::size_t>(i)].x - c.x;
      const double dy = points[static_cast<std::size_t>(i)].y - c.y;
      const double d2 = dx * dx + dy * dy;
      if (d2 <= r2) in_range.push_back({d2, i});
    }
    std::sort(in_range.begin(), in_range.end());
    std::vector<int> group{center};
    for (const auto& [d2, i] : in_range) {
      if (static_cast<int>(group.size()) >= k_max) break;
      group.push_back(i);
    }
    groups.push_back(std::move(group));
  }
  return groups;
}

struct PredictionOutput {
  int n = 0;
  int c = 0;
  std::vector<double> cluster_probs;  // n x c row-major, rows sum to 1
  std::vector<double> noise_prob;     // n, in (0, 1)
  std::vector<double> agreement;      // n, in (0, 1)
};

struct ForwardIds {
  ad::Tape::Id cluster_probs = -1;
  ad::Tape::Id noise_prob = -1;
  ad::Tape::Id agreement = -1;
};

// Builds the full encoder on the tape: hierarchical set abstraction
// (FPS + ball query + shared MLP on [relative position, feature] + max pool)
// followed by distance-weighted feature propagation with skip connections and
// the (C+2)-channel head. Level sizes clamp to the available point count so
// inference accepts arbitrary N >= 2.
inline ForwardIds forward_on_tape(ad::Tape& tape, const std::vector<Point2>& points,
                                  const ModelParams& params, const ModelConfig& config,
                                  const std::vector<ad::Tape::Id>& param_ids, int fps_start) {
  const int n = static_cast<int>(points.size());
  if (n < 2) throw Error::usage("model forward: need at least 2 points");
  auto param = [&](const std::string& name) { return param_ids[static_cast<std::size_t>(params.index(name))]; };
  auto flatten = [](const std::vector<Point2>& ps) {
    std::vector<double> flat;
    flat.reserve(ps.size() * 2);
    for (const Point2& p : ps) {
      flat.push_back(p.x);
      flat.push_back(p.y);
    }
    return flat;
  };

  std::vector<std::vector<Point2>> level_points{points};
  std::vector<ad::Tape::Id> level_features{-1};  // none at the raw-point level

  for (int l = 0; l < config.levels(); ++l) {
    const std::vector<Point2>& cur = level_points.back();
    const int cur_n = static_cast<int>(cur.size());
    const int m = std::min(config.level_sizes[static_cast<std::size_t>(l)], cur_n);
    const int start = l == 0 ? std::min(fps_start, cur_n - 1) : 0;
    const std::vector<int> centers = farthest_point_sampling(cur, m, start);
    const auto groups = ball_query(cur, centers, config.group_radii[static_cast<std::size_t>(l)],
                                   config.group_max_neighbors[static_cast<std::size_t>(l)]);

    std::vector<int> flat_members;
    std::vector<std::vector<int>> pooled_groups(groups.size());
    std::vector<double> relpos;
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const Point2 c = cur[static_cast<std::size_t>(centers[g])];
      for (int member : groups[g]) {
        pooled_groups[g].push_back(static_cast<int>(flat_members.size()));
        flat_members.push_back(member);
        relpos.push_back(cur[static_cast<std::size_t>(member)].x - c.x);
        relpos.push_back(cur[static_cast<std::size_t>(member)].y - c.y);
      }
    }
    const int rows = static_cast<int>(flat_members.size());
    ad::Tape::Id h = tape.leaf(ad::Tensor::matrix(rows, 2, std::move(relpos)), false);
    if (level_features.back() >= 0)
      h = tape.concat_cols(h, tape.gather_rows(level_features.back(), flat_members));
    const auto& widths = config.sa_mlp_widths[static_cast<std::size_t>(l)];
    for (std::size_t layer = 0; layer < widths.size(); ++layer) {
      const std::string base = "sa" + std::to_string(l) + ".l" + std::to_string(layer);
      h = tape.relu(tape.affine_shared(h, param(base + ".w"), param(base + ".b")));
    }
    level_features.push_back(tape.max_over_group(h, pooled_groups));
    std::vector<Point2> next;
    next.reserve(centers.size());
    for (int c : centers) next.push_back(cur[static_cast<std::size_t>(c)]);
    level_points.push_back(std::move(next));
  }

  ad::Tape::Id feat = level_features.back();
  std::vector<Point2> pos = level_points.back();
  for (int s = 0; s < config.levels(); ++s) {
    const int target_level = config.levels() - 1 - s;
    const std::vector<Point2>& target_pos = level_points[static_cast<std::size_t>(target_level)];
    ad::Tape::Id h = tape.idw_interpolate(flatten(pos), feat, flatten(target_pos), 3);
    if (target_level > 0) h = tape.concat_cols(h, level_features[static_cast<std::size_t>(target_level)]);
    for (int layer = 0; layer < 2; ++layer) {
      const std::string base = "fp" + std::to_string(s) + ".l" + std::to_string(layer);
      h = tape.relu(tape.affine_shared(h, param(base + ".w"), param(base + ".b")));
    }
    feat = h;
    pos = target_pos;
  }

  const int c = config.max_clusters;
  ad::Tape::Id logits = tape.affine_shared(feat, param("head.w"), param("head.b"));
  ForwardIds out;
  out.cluster_probs = tape.softmax_rows(tape.slice_cols(logits, 0, c));
  out.noise_prob = tape.sigmoid(tape.slice_cols(logits, c, c + 1));
  out.agreement = tape.sigmoid(tape.slice_cols(logits, c + 1, c + 2));
  return out;
}

inline std::vector<ad::Tape::Id> lease_params(ad::Tape& tape, const ModelParams& params,
                                              bool requires_grad) {
  std::vector<ad::Tape::Id> ids;
  ids.reserve(params.tensors.size());
  for (const ad::Tensor& t : params.tensors) ids.push_back(tape.leaf(t, requires_grad));
  return ids;
}

enum class ForwardMode { train, infer };

constexpr int kTrainInputSize = 512;

inline PredictionOutput model_forward(const std::vector<Point2>& points, const ModelParams& params,
                                      const ModelConfig& config, ForwardMode mode, int fps_start = 0) {
  const int n = static_cast<int>(points.size());
  if (mode == ForwardMode::train && n != kTrainInputSize)
    throw Error::usage("model forward: training requires exactly " + std::to_string(kTrainInputSize) +
                       " points, got " + std::to_string(n));
  if (mode == ForwardMode::infer && n < 2)
    throw Error::usage("model forward: inference requires at least 2 points");
  ad::Tape tape;
  const auto ids = lease_params(tape, params, false);
  const int start = mode == ForwardMode::train ? fps_start : 0;
  const ForwardIds f = forward_on_tape(tape, points, params, config, ids, start);
  PredictionOutput out;
  out.n = n;
  out.c = config.max_clusters;
  out.cluster_probs = tape.value(f.cluster_probs).values;
  out.noise_prob = tape.value(f.noise_prob).values;
  out.agreement = tape.value(f.agreement).values;
  return out;
}

// S_hat_ij = <P_i, P_j> over cluster probability rows.
inline SimilarityMatrix estimated_similarity(const std::vector<double>& cluster_probs, int n, int c) {
  SimilarityMatrix s;
  s.n = n;
  s.entries.assign(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      double acc = 0.0;
      for (int k = 0; k < c; ++k)
        acc += cluster_probs[static_cast<std::size_t>(i) * c + k] *
               cluster_probs[static_cast<std::size_t>(j) * c + k];
      s.entries[static_cast<std::size_t>(i) * n + j] = acc;
      s.entries[static_cast<std::size_t>(j) * n + i] = acc;
    }
  return s;
}

inline SimilarityMatrix estimated_similarity(const PredictionOutput& out) {
  return estimated_similarity(out.cluster_probs, out.n, out.c);
}

// Noise wins only strictly above the threshold; otherwise argmax channel + 1
// with ties toward the lower channel.
inline Annotation extract_clustering(const PredictionOutput& out, double noise_threshold = 0.5) {
  Annotation a;
  a.rater = "model";
  a.labels.reserve(static_cast<std::size_t>(out.n));
  for (int i = 0; i < out.n; ++i) {
    if (out.noise_prob[static_cast<std::size_t>(i)] > noise_threshold) {
      a.labels.push_back(0);
      continue;
    }
    int best = 0;
    double best_p = out.cluster_probs[static_cast<std::size_t>(i) * out.c];
    for (int k = 1; k < out.c; ++k) {
      const double p = out.cluster_probs[static_cast<std::size_t>(i) * out.c + k];
      if (p > best_p) {
        best_p = p;
        best = k;
      }
    }
    a.labels.push_back(best + 1);
  }
  return a;
}

// ---------------------------------------------------------------------------
// Checkpoint container: magic, version, JSON header (config + manifest of
// name/shape/offset), then raw little-endian float64 blocks.
// ---------------------------------------------------------------------------

namespace detail {

constexpr char kCheckpointMagic[8] = {'P', 'C', 'L', 'M', 'O', 'D', 'L', '1'};

inline void write_blob_file(const std::string& path, const char magic[8], const nlohmann::json& header,
                            const std::vector<double>& blob) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error::data("cannot write file: " + path);
  out.write(magic, 8);
  const std::uint32_t version = 1;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  const std::string h = header.dump();
  const std::uint64_t hlen = h.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  out.write(reinterpret_cast<const char*>(blob.data()),
            static_cast<std::streamsize>(blob.size() * sizeof(double)));
  if (!out) throw Error::data("short write: " + path);
}

inline std::pair<nlohmann::json, std::vector<double>> read_blob_file(const std::string& path,
                                                                     const char magic[8]) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error::data("cannot open file: " + path);
  char m[8];
  in.read(m, 8);
  if (!in || std::memcmp(m, magic, 8) != 0) throw Error::data("bad magic bytes in " + path);
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (!in || version != 1) throw Error::data("unsupported format version in " + path);
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  if (!in || hlen > (1ull << 30)) throw Error::data("corrupt header length in " + path);
  std::string h(hlen, '\0');
  in.read(h.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw Error::data("truncated header in " + path);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(h);
  } catch (const nlohmann::json::exception& e) {
    throw Error::data("corrupt header in " + path + ": " + e.what());
  }
  std::vector<char> raw(std::istreambuf_iterator<char>(in), {});
  if (raw.size() % sizeof(double) != 0) throw Error::data("truncated data block in " + path);
  std::vector<double> blob(raw.size() / sizeof(double));
  std::memcpy(blob.data(), raw.data(), raw.size());
  return {std::move(header), std::move(blob)};
}

}  // namespace detail

inline void save_checkpoint(const ModelParams& params, const ModelConfig& config,
                            const std::string& path) {
  nlohmann::json manifest = nlohmann::json::array();
  std::vector<double> blob;
  blob.reserve(params.total_values());
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    const ad::Tensor& t = params.tensors[i];
    manifest.push_back({{"name", params.names[i]}, {"shape", t.shape}, {"offset", offset}});
    blob.insert(blob.end(), t.values.begin(), t.values.end());
    offset += t.numel() * sizeof(double);
  }
  nlohmann::json header{{"format_version", 1},
                        {"config", model_config_to_json(config)},
                        {"manifest", std::move(manifest)}};
  detail::write_blob_file(path, detail::kCheckpointMagic, header, blob);
}

inline std::pair<ModelParams, ModelConfig> load_checkpoint(const std::string& path) {
  auto [header, blob] = detail::read_blob_file(path, detail::kCheckpointMagic);
  ModelConfig config;
  ModelParams params;
  try {
    config = model_config_from_json(header.at("config"));
    for (const auto& entry : header.at("manifest")) {
      const std::string name = entry.at("name").get<std::string>();
      const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
      const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
      std::size_t numel = 1;
      for (int d : shape) numel *= static_cast<std::size_t>(d);
      if (offset % sizeof(double) != 0 || offset / sizeof(double) + numel > blob.size())
        throw Error::data("checkpoint block out of range: " + name);
      ad::Tensor t;
      t.shape = shape;
      const std::size_t begin = offset / sizeof(double);
      t.values.assign(blob.begin() + static_cast<std::ptrdiff_t>(begin),
                      blob.begin() + static_cast<std::ptrdiff_t>(begin + numel));
      params.names.push_back(name);
      params.tensors.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error::data("corrupt checkpoint header in " + path + ": " + e.what());
  }
  // Cross-check against the shapes the config implies.
  const ModelParams expected = init_params(config, 0);
  if (expected.names != params.names) throw Error::data("checkpoint manifest does not match config");
  for (std::size_t i = 0; i < expected.tensors.size(); ++i)
    if (expected.tensors[i].shape != params.tensors[i].shape)
      throw Error::data("checkpoint tensor shape mismatch for " + params.names[i]);
  return {std::move(params), config};
}

}  // namespace perclust
