// Brute-force reference implementations computed straight from the metric
// definitions. These deliberately materialize full N x N similarity matrices
// for every rater pair and take no shortcuts, so they stay independent of the
// optimized library paths they are used to check.
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "perclust/dataset.hpp"

namespace oracle {

using perclust::Annotation;
using perclust::RaterGroup;

inline std::vector<std::vector<double>> similarity(const std::vector<int>& labels) {
  const int n = static_cast<int>(labels.size());
  std::vector<std::vector<double>> s(n, std::vector<double>(n, 0.0));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) s[i][j] = labels[i] == labels[j] ? 1.0 : 0.0;
  return s;
}

inline std::vector<double> pair_agreement(const std::vector<int>& a, const std::vector<int>& b) {
  const auto sa = similarity(a);
  const auto sb = similarity(b);
  const int n = static_cast<int>(a.size());
  std::vector<double> gamma(n, 0.0);
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int j = 0; j < n; ++j) acc += 1.0 - std::abs(sa[i][j] - sb[i][j]);
    gamma[i] = acc / n;
  }
  return gamma;
}

inline std::vector<double> group_agreement(const std::vector<std::vector<int>>& raters) {
  const int m = static_cast<int>(raters.size());
  const int n = static_cast<int>(raters.front().size());
  std::vector<double> acc(n, 0.0);
  int pairs = 0;
  for (int a = 0; a < m; ++a)
    for (int b = a + 1; b < m; ++b) {
      const auto gamma = pair_agreement(raters[a], raters[b]);
      for (int i = 0; i < n; ++i) acc[i] += gamma[i];
      ++pairs;
    }
  for (double& v : acc) v /= pairs;
  return acc;
}

inline double mean_agreement(const std::vector<std::vector<int>>& raters) {
  const auto gamma = group_agreement(raters);
  double acc = 0.0;
  for (double v : gamma) acc += v;
  return acc / static_cast<double>(gamma.size());
}

inline double chi(const std::vector<int>& prediction, const std::vector<std::vector<int>>& raters) {
  const int m = static_cast<int>(raters.size());
  const double base = mean_agreement(raters);
  double acc = 0.0;
  for (int replaced = 0; replaced < m; ++replaced) {
    std::vector<std::vector<int>> modified = raters;
    modified[replaced] = prediction;
    acc += mean_agreement(modified) - base;
  }
  return acc / m;
}

inline double vanbelle(const std::vector<int>& prediction, const std::vector<std::vector<int>>& raters) {
  const int m = static_cast<int>(raters.size());
  const int n = static_cast<int>(prediction.size());
  const auto sr = similarity(prediction);
  std::vector<std::vector<std::vector<double>>> sg;
  for (const auto& r : raters) sg.push_back(similarity(r));

  double n_items = 0.0, same_r = 0.0, same_g = 0.0, matches = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      n_items += 1.0;
      same_r += sr[i][j];
      for (int k = 0; k < m; ++k) {
        same_g += sg[k][i][j];
        matches += sr[i][j] == sg[k][i][j] ? 1.0 : 0.0;
      }
    }
  const double p_r = same_r / n_items;
  const double p_g = same_g / (n_items * m);
  const double pi_t = matches / (n_items * m);
  const double pi_e = p_r * p_g + (1.0 - p_r) * (1.0 - p_g);
  const double pi_m = std::min(p_r, p_g) + std::min(1.0 - p_r, 1.0 - p_g);
  if (std::abs(pi_m - pi_e) < 1e-12) return std::abs(pi_t - 1.0) < 1e-12 ? 1.0 : 0.0;
  return (pi_t - pi_e) / (pi_m - pi_e);
}

inline double noise_iou(const std::vector<int>& prediction, const std::vector<std::vector<int>>& raters) {
  const int n = static_cast<int>(prediction.size());
  double acc = 0.0;
  for (const auto& rater : raters) {
    int inter = 0, uni = 0;
    for (int i = 0; i < n; ++i) {
      inter += prediction[i] == 0 && rater[i] == 0;
      uni += prediction[i] == 0 || rater[i] == 0;
    }
    acc += uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
  }
  return acc / static_cast<double>(raters.size());
}

inline RaterGroup make_group(const std::vector<std::vector<int>>& raters) {
  RaterGroup g;
  for (std::size_t i = 0; i < raters.size(); ++i)
    g.annotations.push_back({"r" + std::to_string(i), raters[i]});
  return g;
}

inline Annotation make_annotation(const std::vector<int>& labels) { return {"pred", labels}; }

}  // namespace oracle
