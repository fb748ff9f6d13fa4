#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "perclust/dataset.hpp"

namespace perclust {

// Dense N x N co-membership matrix. Targets hold 0/1, estimates hold [0, 1].
struct SimilarityMatrix {
  int n = 0;
  std::vector<double> entries;  // row-major

  double at(int i, int j) const { return entries[static_cast<std::size_t>(i) * n + j]; }
};

using AgreementVector = std::vector<double>;

// S_ij = 1 iff labels_i == labels_j. Label 0 (noise) participates like any
// other label: two noise points count as co-members.
inline SimilarityMatrix similarity_matrix(const std::vector<int>& labels) {
  SimilarityMatrix s;
  s.n = static_cast<int>(labels.size());
  s.entries.assign(static_cast<std::size_t>(s.n) * s.n, 0.0);
  for (int i = 0; i < s.n; ++i)
    for (int j = 0; j < s.n; ++j)
      s.entries[static_cast<std::size_t>(i) * s.n + j] = labels[i] == labels[j] ? 1.0 : 0.0;
  return s;
}

inline SimilarityMatrix similarity_matrix(const Annotation& a) { return similarity_matrix(a.labels); }

namespace detail {

// Label contingency between two equal-length labelings, with dense remaps.
// All pairwise-agreement quantities reduce to these counts, which avoids
// materializing N x N matrices.
struct Contingency {
  int n = 0;
  std::vector<int> dense_a, dense_b;      // per-point dense label ids
  std::vector<std::int64_t> row_a, col_b; // label counts
  std::vector<std::int64_t> cells;        // row-major joint counts
  int la = 0, lb = 0;

  std::int64_t cell(int a, int b) const { return cells[static_cast<std::size_t>(a) * lb + b]; }
};

inline std::vector<int> dense_remap(const std::vector<int>& labels, int& out_count) {
  std::map<int, int> remap;
  std::vector<int> dense(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto [it, inserted] = remap.emplace(labels[i], static_cast<int>(remap.size()));
    dense[i] = it->second;
  }
  out_count = static_cast<int>(remap.size());
  return dense;
}

inline Contingency contingency(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size())
    throw Error::data("label vectors have mismatched lengths: " + std::to_string(a.size()) + " vs " +
                      std::to_string(b.size()));
  Contingency c;
  c.n = static_cast<int>(a.size());
  c.dense_a = dense_remap(a, c.la);
  c.dense_b = dense_remap(b, c.lb);
  c.row_a.assign(c.la, 0);
  c.col_b.assign(c.lb, 0);
  c.cells.assign(static_cast<std::size_t>(c.la) * c.lb, 0);
  for (int i = 0; i < c.n; ++i) {
    ++c.row_a[c.dense_a[i]];
    ++c.col_b[c.dense_b[i]];
    ++c.cells[static_cast<std::size_t>(c.dense_a[i]) * c.lb + c.dense_b[i]];
  }
  return c;
}

// Number of unordered point pairs co-labeled by a labeling with these sizes.
inline std::int64_t same_pairs(const std::vector<std::int64_t>& sizes) {
  std::int64_t s = 0;
  for (std::int64_t n : sizes) s += n * (n - 1) / 2;
  return s;
}

}  // namespace detail

// Per-point agreement between two raters (gamma_i): the fraction of points j
// whose co-membership with i both raters encode identically.
inline AgreementVector pair_agreement(const Annotation& a, const Annotation& b) {
  const auto c = detail::contingency(a.labels, b.labels);
  AgreementVector gamma(static_cast<std::size_t>(c.n));
  const double n = static_cast<double>(c.n);
  for (int i = 0; i < c.n; ++i) {
    const int alpha = c.dense_a[i];
    const int beta = c.dense_b[i];
    const std::int64_t matches = c.n - c.row_a[alpha] - c.col_b[beta] + 2 * c.cell(alpha, beta);
    gamma[static_cast<std::size_t>(i)] = static_cast<double>(matches) / n;
  }
  return gamma;
}

// Mean over points of pair_agreement, in closed form from the contingency.
inline double pair_agreement_mean(const std::vector<int>& a, const std::vector<int>& b) {
  const auto c = detail::contingency(a, b);
  std::int64_t sum = static_cast<std::int64_t>(c.n) * c.n;
  for (std::int64_t r : c.row_a) sum -= r * r;
  for (std::int64_t r : c.col_b) sum -= r * r;
  for (std::int64_t v : c.cells) sum += 2 * v * v;
  return static_cast<double>(sum) / (static_cast<double>(c.n) * static_cast<double>(c.n));
}

// Gamma_i: mean of gamma_i over all unordered rater pairs.
inline AgreementVector group_agreement(const RaterGroup& group) {
  const int m = group.raters();
  if (m < 2) throw Error::data("group_agreement: need at least 2 raters");
  const int n = group.points();
  AgreementVector acc(static_cast<std::size_t>(n), 0.0);
  int pairs = 0;
  for (int a = 0; a < m; ++a)
    for (int b = a + 1; b < m; ++b) {
      const AgreementVector gamma = pair_agreement(group.annotations[a], group.annotations[b]);
      for (int i = 0; i < n; ++i) acc[static_cast<std::size_t>(i)] += gamma[static_cast<std::size_t>(i)];
      ++pairs;
    }
  for (double& v : acc) v /= static_cast<double>(pairs);
  return acc;
}

// A(G): group agreement averaged over points.
inline double mean_agreement(const RaterGroup& group) {
  const int m = group.raters();
  if (m < 2) throw Error::data("mean_agreement: need at least 2 raters");
  double acc = 0.0;
  int pairs = 0;
  for (int a = 0; a < m; ++a)
    for (int b = a + 1; b < m; ++b) {
      acc += pair_agreement_mean(group.annotations[a].labels, group.annotations[b].labels);
      ++pairs;
    }
  return acc / static_cast<double>(pairs);
}

// Agreement index: mean change in A(G) when the prediction replaces each
// rater in turn. Positive values mean the prediction improves consensus.
inline double chi(const Annotation& prediction, const RaterGroup& group) {
  const int m = group.raters();
  if (m < 2) throw Error::data("chi: need at least 2 raters");
  if (prediction.size() != group.points())
    throw Error::data("chi: prediction length does not match group");

  // Pairwise mean-agreement tables: rater-rater and prediction-rater.
  std::vector<double> rr(static_cast<std::size_t>(m) * m, 0.0);
  std::vector<double> pr(static_cast<std::size_t>(m), 0.0);
  for (int a = 0; a < m; ++a) {
    pr[static_cast<std::size_t>(a)] = pair_agreement_mean(prediction.labels, group.annotations[a].labels);
    for (int b = a + 1; b < m; ++b) {
      const double v = pair_agreement_mean(group.annotations[a].labels, group.annotations[b].labels);
      rr[static_cast<std::size_t>(a) * m + b] = v;
      rr[static_cast<std::size_t>(b) * m + a] = v;
    }
  }
  const double k = static_cast<double>(m) * (m - 1) / 2.0;
  double base_sum = 0.0;
  for (int a = 0; a < m; ++a)
    for (int b = a + 1; b < m; ++b) base_sum += rr[static_cast<std::size_t>(a) * m + b];
  const double base = base_sum / k;

  double acc = 0.0;
  for (int replaced = 0; replaced < m; ++replaced) {
    double sum = base_sum;
    for (int other = 0; other < m; ++other) {
      if (other == replaced) continue;
      sum -= rr[static_cast<std::size_t>(replaced) * m + other];
      sum += pr[static_cast<std::size_t>(other)];
    }
    acc += sum / k - base;
  }
  return acc / static_cast<double>(m);
}

// Chance-corrected agreement between an isolated labeling and a group,
// computed on the pairwise co-membership representation: items are unordered
// point pairs, categories are {same, different}. Integer arithmetic keeps the
// degenerate-case comparisons exact.
inline double vanbelle(const Annotation& prediction, const RaterGroup& group) {
  const int m = group.raters();
  if (m < 2) throw Error::data("vanbelle: need at least 2 raters");
  const int n = group.points();
  if (n < 2) throw Error::data("vanbelle: need at least 2 points");
  if (prediction.size() != n) throw Error::data("vanbelle: prediction length does not match group");

  const std::int64_t pairs = static_cast<std::int64_t>(n) * (n - 1) / 2;
  int lr = 0;
  const std::vector<int> dense_r = detail::dense_remap(prediction.labels, lr);
  std::vector<std::int64_t> sizes_r(lr, 0);
  for (int d : dense_r) ++sizes_r[d];
  const std::int64_t same_r = detail::same_pairs(sizes_r);

  std::int64_t same_g = 0;   // same-category items summed over raters
  std::int64_t matches = 0;  // (item, rater) category matches with prediction
  for (const Annotation& rater : group.annotations) {
    const auto c = detail::contingency(prediction.labels, rater.labels);
    std::int64_t same_m = detail::same_pairs(c.col_b);
    std::int64_t same_both = 0;
    for (std::int64_t v : c.cells) same_both += v * (v - 1) / 2;
    same_g += same_m;
    matches += same_both + (pairs - same_r - same_m + same_both);
  }

  // Exact numerators over the common denominator M * pairs^2.
  const std::int64_t mp = static_cast<std::int64_t>(m) * pairs;
  const std::int64_t num_t = matches * pairs;
  const std::int64_t num_e = same_r * same_g + (pairs - same_r) * (mp - same_g);
  const std::int64_t num_m =
      (std::min(same_r * m, same_g) + std::min((pairs - same_r) * m, mp - same_g)) * pairs;

  if (num_m == num_e) return matches == mp ? 1.0 : 0.0;
  return static_cast<double>(num_t - num_e) / static_cast<double>(num_m - num_e);
}

// Mean binary Jaccard overlap between the prediction's noise set and each
// rater's noise set. Jaccard(empty, empty) = 1.
inline double noise_iou(const Annotation& prediction, const RaterGroup& group) {
  if (group.raters() < 1) throw Error::data("noise_iou: empty rater group");
  const int n = group.points();
  if (prediction.size() != n) throw Error::data("noise_iou: prediction length does not match group");
  double acc = 0.0;
  for (const Annotation& rater : group.annotations) {
    int inter = 0, uni = 0;
    for (int i = 0; i < n; ++i) {
      const bool p = prediction.labels[static_cast<std::size_t>(i)] == 0;
      const bool r = rater.labels[static_cast<std::size_t>(i)] == 0;
      inter += p && r;
      uni += p || r;
    }
    acc += uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
  }
  return acc / static_cast<double>(group.raters());
}

// Keeps plots whose group agreement reaches the threshold.
inline std::vector<AnnotatedPlot> filter_by_agreement(const std::vector<AnnotatedPlot>& plots,
                                                      double t_agree) {
  if (t_agree < 0.0 || t_agree > 1.0) throw Error::usage("agreement threshold must be in [0, 1]");
  std::vector<AnnotatedPlot> kept;
  for (const AnnotatedPlot& plot : plots) {
    if (plot.group.raters() < 2)
      throw Error::data("filter_by_agreement: plot '" + plot.pointset.id + "' has fewer than 2 raters");
    if (mean_agreement(plot.group) >= t_agree) kept.push_back(plot);
  }
  return kept;
}

// ---------------------------------------------------------------------------
// Aggregated reporting
// ---------------------------------------------------------------------------

struct PlotMetrics {
  std::string id;
  double chi = 0.0;
  double vanbelle = 0.0;
  double noise_iou = 0.0;
  bool group_has_noise = false;  // noise_iou aggregates only where true
  double consensus = 0.0;
};

struct Stratum {
  int cluster_count = 0;
  int n_samples = 0;
  double chi = 0.0;
  double vanbelle = 0.0;
  int n_noise_samples = 0;
  std::optional<double> noise_iou;
};

struct MetricReport {
  int n_samples = 0;
  double chi = 0.0;
  double vanbelle = 0.0;
  int n_noise_samples = 0;
  std::optional<double> noise_iou;
  std::vector<Stratum> strata;  // ordered by cluster count
  std::optional<double> mse;
  std::optional<double> mae;
};

// Strata are keyed by the rounded consensus cluster count; overall values are
// the sample-count-weighted averages of the strata.
inline MetricReport stratified_report(const std::vector<PlotMetrics>& results) {
  if (results.empty()) throw Error::data("stratified_report: empty results");
  struct Acc {
    int n = 0;
    double chi = 0.0;
    double vanbelle = 0.0;
    int n_noise = 0;
    double noise_iou = 0.0;
  };
  std::map<int, Acc> acc;
  for (const PlotMetrics& r : results) {
    Acc& a = acc[consensus_stratum(r.consensus)];
    ++a.n;
    a.chi += r.chi;
    a.vanbelle += r.vanbelle;
    if (r.group_has_noise) {
      ++a.n_noise;
      a.noise_iou += r.noise_iou;
    }
  }
  MetricReport report;
  double chi_sum = 0.0, van_sum = 0.0, iou_sum = 0.0;
  for (const auto& [count, a] : acc) {
    Stratum s;
    s.cluster_count = count;
    s.n_samples = a.n;
    s.chi = a.chi / a.n;
    s.vanbelle = a.vanbelle / a.n;
    s.n_noise_samples = a.n_noise;
    if (a.n_noise > 0) s.noise_iou = a.noise_iou / a.n_noise;
    report.strata.push_back(s);
    report.n_samples += a.n;
    report.n_noise_samples += a.n_noise;
    chi_sum += a.chi;
    van_sum += a.vanbelle;
    iou_sum += a.noise_iou;
  }
  report.chi = chi_sum / report.n_samples;
  report.vanbelle = van_sum / report.n_samples;
  if (report.n_noise_samples > 0) report.noise_iou = iou_sum / report.n_noise_samples;
  return report;
}

// MSE/MAE over all points of all plots.
inline std::pair<double, double> regression_metrics(const std::vector<AgreementVector>& predicted,
                                                    const std::vector<AgreementVector>& target) {
  if (predicted.size() != target.size())
    throw Error::data("regression_metrics: plot count mismatch");
  double se = 0.0, ae = 0.0;
  std::int64_t n = 0;
  for (std::size_t p = 0; p < predicted.size(); ++p) {
    if (predicted[p].size() != target[p].size())
      throw Error::data("regression_metrics: vector length mismatch at plot " + std::to_string(p));
    for (std::size_t i = 0; i < predicted[p].size(); ++i) {
      const double d = predicted[p][i] - target[p][i];
      se += d * d;
      ae += std::abs(d);
      ++n;
    }
  }
  if (n == 0) throw Error::data("regression_metrics: no points");
  return {se / static_cast<double>(n), ae / static_cast<double>(n)};
}

struct CountMetrics {
  double vanbelle_binary = 0.0;
  double accuracy = 0.0;
  double f1 = 0.0;
};

// Cluster-count comparison binarized to single-vs-multiple clusters.
// Items for the Vanbelle computation are plots; categories {single, multi}.
// The accuracy/F1 ground truth is the binarized consensus count; positive
// class is "multiple clusters".
inline CountMetrics count_metrics(const std::vector<int>& predicted_counts,
                                  const std::vector<std::vector<int>>& group_counts) {
  if (predicted_counts.empty() || predicted_counts.size() != group_counts.size())
    throw Error::data("count_metrics: empty or mismatched inputs");
  const std::size_t n = predicted_counts.size();

  // Marginals and matches over (plot, rater) with raters weighted equally
  // within each plot, scaled by the common denominator lcm-free approach:
  // use doubles here since rater counts may vary per plot.
  double same_r = 0.0;  // p_R(multi) * n
  double same_g = 0.0;  // p_G(multi) * n
  double matches = 0.0; // Pi_T * n
  int tp = 0, fp = 0, fn = 0, correct = 0;
  bool degenerate_perfect = true;
  for (std::size_t p = 0; p < n; ++p) {
    if (group_counts[p].empty()) throw Error::data("count_metrics: plot with no rater counts");
    const bool pred_multi = predicted_counts[p] >= 2;
    same_r += pred_multi ? 1.0 : 0.0;
    double g_multi = 0.0, match = 0.0;
    for (int c : group_counts[p]) {
      const bool rater_multi = c >= 2;
      g_multi += rater_multi ? 1.0 : 0.0;
      match += rater_multi == pred_multi ? 1.0 : 0.0;
    }
    const double m = static_cast<double>(group_counts[p].size());
    same_g += g_multi / m;
    matches += match / m;
    if (match < m) degenerate_perfect = false;

    // Consensus-derived binary truth for accuracy/F1.
    std::map<int, int> votes;
    double total = 0.0;
    for (int c : group_counts[p]) {
      ++votes[c];
      total += c;
    }
    double consensus = total / m;
    for (const auto& [count, n_votes] : votes)
      if (2 * n_votes > static_cast<int>(group_counts[p].size())) consensus = count;
    const bool truth_multi = consensus_stratum(consensus) >= 2;
    correct += truth_multi == pred_multi;
    tp += truth_multi && pred_multi;
    fp += !truth_multi && pred_multi;
    fn += truth_multi && !pred_multi;
  }

  CountMetrics out;
  const double nn = static_cast<double>(n);
  const double pi_t = matches / nn;
  const double pr = same_r / nn, pg = same_g / nn;
  const double pi_e = pr * pg + (1.0 - pr) * (1.0 - pg);
  const double pi_m = std::min(pr, pg) + std::min(1.0 - pr, 1.0 - pg);
  if (std::abs(pi_m - pi_e) < 1e-15)
    out.vanbelle_binary = degenerate_perfect ? 1.0 : 0.0;
  else
    out.vanbelle_binary = (pi_t - pi_e) / (pi_m - pi_e);
  out.accuracy = static_cast<double>(correct) / nn;
  out.f1 = (2 * tp + fp + fn) == 0 ? 0.0
                                   : 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
  return out;
}

// ---------------------------------------------------------------------------
// Report and prediction file formats
// ---------------------------------------------------------------------------

// Chi is stored x100 in emitted reports (the scale used in comparison tables);
// the in-memory API stays on the raw scale.
inline nlohmann::json report_to_json(const MetricReport& report) {
  nlohmann::json j;
  j["n_samples"] = report.n_samples;
  j["chi_x100"] = report.chi * 100.0;
  j["vanbelle"] = report.vanbelle;
  j["n_noise_samples"] = report.n_noise_samples;
  j["noise_iou"] = report.noise_iou ? nlohmann::json(*report.noise_iou) : nlohmann::json(nullptr);
  auto strata = nlohmann::json::array();
  for (const Stratum& s : report.strata) {
    nlohmann::json js;
    js["cluster_count"] = s.cluster_count;
    js["n_samples"] = s.n_samples;
    js["chi_x100"] = s.chi * 100.0;
    js["vanbelle"] = s.vanbelle;
    js["n_noise_samples"] = s.n_noise_samples;
    js["noise_iou"] = s.noise_iou ? nlohmann::json(*s.noise_iou) : nlohmann::json(nullptr);
    strata.push_back(std::move(js));
  }
  j["strata"] = std::move(strata);
  if (report.mse) j["regression"] = {{"mse", *report.mse}, {"mae", *report.mae}};
  else j["regression"] = nullptr;
  return j;
}

inline std::string report_to_csv(const MetricReport& report) {
  std::ostringstream out;
  out << "cluster_count,n_samples,chi_x100,vanbelle,n_noise_samples,noise_iou\n";
  for (const Stratum& s : report.strata) {
    out << s.cluster_count << "," << s.n_samples << "," << format_double(s.chi * 100.0) << ","
        << format_double(s.vanbelle) << "," << s.n_noise_samples << ",";
    if (s.noise_iou) out << format_double(*s.noise_iou);
    out << "\n";
  }
  return out.str();
}

struct PredictionRecord {
  std::string id;
  std::vector<int> labels;
  AgreementVector agreement;  // empty when absent
};

inline std::vector<PredictionRecord> load_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error::data("cannot open predictions file: " + path);
  std::vector<PredictionRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      nlohmann::json rec = nlohmann::json::parse(line);
      PredictionRecord r;
      r.id = rec.at("id").get<std::string>();
      r.labels = rec.at("labels").get<std::vector<int>>();
      if (rec.contains("agreement") && !rec["agreement"].is_null())
        r.agreement = rec["agreement"].get<std::vector<double>>();
      records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw Error::data(path + ":" + std::to_string(line_no) + ": invalid prediction record: " + e.what());
    }
  }
  return records;
}

inline void save_predictions(const std::vector<PredictionRecord>& records, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error::data("cannot write predictions file: " + path);
  for (const PredictionRecord& r : records) {
    nlohmann::json rec;
    rec["id"] = r.id;
    rec["labels"] = r.labels;
    if (!r.agreement.empty()) rec["agreement"] = r.agreement;
    rec["cluster_count"] = cluster_count(r.labels);
    out << rec.dump() << "\n";
  }
}

}  // namespace perclust
