#pragma once

#include <cmath>
#include <map>
#include <vector>

#include "perclust/autodiff.hpp"
#include "perclust/common.hpp"
#include "perclust/metrics.hpp"

namespace perclust {

constexpr double kMclScale = 0.1;
constexpr double kNoisePositiveWeight = 0.9;
constexpr double kNoiseNegativeWeight = 0.1;

// Pairwise loss weights: 1/w_c^2 for co-members of cluster c (w_c = N_c / N,
// label 0 included like any cluster) and the negative momentum D for
// dissimilar pairs.
inline std::vector<double> weight_matrix(const std::vector<int>& target_labels, double negative_momentum) {
  if (negative_momentum <= 0.0) throw Error::usage("weight_matrix: D must be positive");
  const int n = static_cast<int>(target_labels.size());
  std::map<int, int> sizes;
  for (int l : target_labels) ++sizes[l];
  std::map<int, double> positive_weight;
  for (const auto& [label, count] : sizes) {
    const double wc = static_cast<double>(count) / static_cast<double>(n);
    positive_weight[label] = 1.0 / (wc * wc);
  }
  std::vector<double> w(static_cast<std::size_t>(n) * n, negative_momentum);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (target_labels[static_cast<std::size_t>(i)] == target_labels[static_cast<std::size_t>(j)])
        w[static_cast<std::size_t>(i) * n + j] = positive_weight[target_labels[static_cast<std::size_t>(i)]];
  return w;
}

// Differentiable losses are built on the tape; the plain overloads below
// evaluate the same kernels on a throwaway tape.

inline ad::Tape::Id mcl_loss_on_tape(ad::Tape& tape, const std::vector<double>& target_similarity,
                                     const std::vector<double>& weights, ad::Tape::Id estimated) {
  return tape.weighted_pair_bce(target_similarity, weights, estimated);
}

inline ad::Tape::Id noise_loss_on_tape(ad::Tape& tape, const std::vector<double>& noise_indicator,
                                       ad::Tape::Id noise_prob) {
  return tape.weighted_binary_ce(noise_indicator, noise_prob, kNoisePositiveWeight,
                                 kNoiseNegativeWeight);
}

inline ad::Tape::Id agree_loss_on_tape(ad::Tape& tape, const std::vector<double>& target_agreement,
                                       ad::Tape::Id predicted_agreement) {
  return tape.mean_abs_error(target_agreement, predicted_agreement);
}

inline ad::Tape::Id total_loss_on_tape(ad::Tape& tape, ad::Tape::Id mcl, ad::Tape::Id noise,
                                       ad::Tape::Id agree) {
  return tape.add(tape.scale(mcl, kMclScale), tape.add(noise, agree));
}

inline double mcl_loss(const SimilarityMatrix& target, const SimilarityMatrix& estimated,
                       const std::vector<double>& weights) {
  if (target.n != estimated.n || weights.size() != target.entries.size())
    throw Error::numeric("mcl_loss: shape mismatch");
  ad::Tape tape;
  const auto s_hat = tape.leaf(ad::Tensor::matrix(estimated.n, estimated.n, estimated.entries), false);
  return tape.scalar_value(mcl_loss_on_tape(tape, target.entries, weights, s_hat));
}

// nu_i = 1 marks noise; the 0.9 weight multiplies the noise term.
inline double noise_loss(const std::vector<double>& noise_indicator,
                         const std::vector<double>& noise_prob) {
  ad::Tape tape;
  const auto p = tape.leaf(ad::Tensor{{static_cast<int>(noise_prob.size())}, noise_prob}, false);
  return tape.scalar_value(noise_loss_on_tape(tape, noise_indicator, p));
}

inline double agree_loss(const AgreementVector& target, const AgreementVector& predicted) {
  ad::Tape tape;
  const auto p = tape.leaf(ad::Tensor{{static_cast<int>(predicted.size())}, predicted}, false);
  return tape.scalar_value(agree_loss_on_tape(tape, target, p));
}

inline double total_loss(double mcl, double noise, double agree) {
  return kMclScale * mcl + noise + agree;
}

struct LossBreakdown {
  double mcl = 0.0;
  double noise = 0.0;
  double agree = 0.0;
  double total = 0.0;
};

inline std::vector<double> noise_indicator(const std::vector<int>& labels) {
  std::vector<double> nu(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) nu[i] = labels[i] == 0 ? 1.0 : 0.0;
  return nu;
}

}  // namespace perclust
