#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "perclust/loss.hpp"
#include "perclust/model.hpp"

using namespace perclust;
using ad::Tape;
using ad::Tensor;

namespace {

ModelConfig micro_config() {
  ModelConfig c;
  c.level_sizes = {6, 5, 4, 2};
  c.group_radii = {0.3, 0.6, 1.2, 2.4};
  c.group_max_neighbors = {4, 4, 4, 4};
  c.sa_mlp_widths = {{3, 3}, {3, 4}, {4, 4}, {4, 4}};
  c.fp_feature_sizes = {4, 4, 3, 3};
  c.head_width = 3;
  c.max_clusters = 3;
  return c;
}

// Reconstitutes the parameter list from one flat leaf so the whole model can
// be driven through grad_check.
std::vector<Tape::Id> params_from_flat(Tape& t, Tape::Id flat, const ModelParams& params) {
  const int total = static_cast<int>(params.total_values());
  Tape::Id row = t.reshape(flat, {1, total});
  std::vector<Tape::Id> ids;
  int offset = 0;
  for (const auto& tensor : params.tensors) {
    const int numel = static_cast<int>(tensor.numel());
    ids.push_back(t.reshape(t.slice_cols(row, offset, offset + numel), tensor.shape));
    offset += numel;
  }
  return ids;
}

std::vector<double> flatten_params(const ModelParams& params) {
  std::vector<double> flat;
  flat.reserve(params.total_values());
  for (const auto& t : params.tensors) flat.insert(flat.end(), t.values.begin(), t.values.end());
  return flat;
}

}  // namespace

TEST_CASE("weight matrix worked values") {
  auto w = weight_matrix({1, 1, 2}, 10.0);
  const std::vector<double> expected{2.25, 2.25, 10, 2.25, 2.25, 10, 10, 10, 9};
  REQUIRE(w.size() == expected.size());
  for (std::size_t i = 0; i < w.size(); ++i) CHECK(w[i] == Catch::Approx(expected[i]).margin(1e-12));

  auto single = weight_matrix({1, 1}, 123.0);
  CHECK(single == std::vector<double>{1.0, 1.0, 1.0, 1.0});

  // Doubling D scales exactly the dissimilar entries.
  auto d1 = weight_matrix({1, 2, 2, 0}, 7.0);
  auto d2 = weight_matrix({1, 2, 2, 0}, 14.0);
  std::vector<int> labels{1, 2, 2, 0};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      const std::size_t k = static_cast<std::size_t>(i) * 4 + j;
      if (labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)])
        CHECK(d2[k] == d1[k]);
      else
        CHECK(d2[k] == 2.0 * d1[k]);
    }

  CHECK_THROWS_AS(weight_matrix({1, 2}, 0.0), Error);

  // Halving a cluster's fraction quadruples its same-pair weight.
  auto big = weight_matrix({1, 1, 1, 1, 2, 2, 2, 2}, 5.0);   // cluster 1 spans 1/2
  auto small = weight_matrix({1, 1, 2, 2, 2, 2, 3, 3}, 5.0); // cluster 1 spans 1/4
  CHECK(small[0] == Catch::Approx(4.0 * big[0]).margin(1e-12));
}

TEST_CASE("mcl loss worked values") {
  const std::vector<int> labels{1, 1, 2};
  auto s = similarity_matrix(labels);
  auto w = weight_matrix(labels, 10.0);

  // Perfect prediction: loss only from the clamp.
  const double perfect = mcl_loss(s, s, w);
  double wsum = 0.0;
  for (double v : w) wsum += v;
  CHECK(perfect >= 0.0);
  CHECK(perfect <= wsum * std::abs(std::log(1.0 - 1e-7)) + 1e-12);

  // Uniform 0.5 estimate: every term is ln 2.
  SimilarityMatrix half;
  half.n = 3;
  half.entries.assign(9, 0.5);
  CHECK(mcl_loss(s, half, w) == Catch::Approx(std::log(2.0) * wsum).margin(1e-9));

  SimilarityMatrix wrong_shape;
  wrong_shape.n = 2;
  wrong_shape.entries.assign(4, 0.5);
  CHECK_THROWS_AS(mcl_loss(s, wrong_shape, w), Error);
}

TEST_CASE("mcl loss is exactly invariant under relabelling and permutation") {
  std::mt19937_64 rng(404);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 4 + static_cast<int>(bounded(rng, 12));
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (int& l : labels) l = static_cast<int>(bounded(rng, 4));
    std::vector<double> probs(static_cast<std::size_t>(n) * 4);
    for (double& p : probs) p = uniform01(rng) + 1e-3;
    for (int i = 0; i < n; ++i) {
      double sum = 0.0;
      for (int k = 0; k < 4; ++k) sum += probs[static_cast<std::size_t>(i) * 4 + k];
      for (int k = 0; k < 4; ++k) probs[static_cast<std::size_t>(i) * 4 + k] /= sum;
    }
    const double d = uniform_in(rng, 0.5, 60.0);
    auto s_hat = estimated_similarity(probs, n, 4);
    const double base = mcl_loss(similarity_matrix(labels), s_hat, weight_matrix(labels, d));

    // Injective relabelling of the targets.
    std::vector<int> relabelled = labels;
    for (int& l : relabelled) l = 3 * l + 11;
    const double relabel = mcl_loss(similarity_matrix(relabelled), s_hat, weight_matrix(relabelled, d));
    CHECK(relabel == base);

    // Consistent point permutation of targets and estimates.
    std::vector<int> perm(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
    deterministic_shuffle(perm, rng);
    std::vector<int> plabels(static_cast<std::size_t>(n));
    std::vector<double> pprobs(static_cast<std::size_t>(n) * 4);
    for (int i = 0; i < n; ++i) {
      plabels[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = labels[static_cast<std::size_t>(i)];
      for (int k = 0; k < 4; ++k)
        pprobs[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)]) * 4 + k] =
            probs[static_cast<std::size_t>(i) * 4 + k];
    }
    const double permuted = mcl_loss(similarity_matrix(plabels), estimated_similarity(pprobs, n, 4),
                                     weight_matrix(plabels, d));
    CHECK(permuted == base);
  }
}

TEST_CASE("noise loss worked values") {
  CHECK(noise_loss({1.0}, {0.5}) == Catch::Approx(0.9 * std::log(2.0)).margin(1e-12));
  CHECK(noise_loss({0.0}, {0.5}) == Catch::Approx(0.1 * std::log(2.0)).margin(1e-12));
  CHECK(noise_loss({1.0, 0.0}, {1.0 - 1e-9, 1e-9}) < 1e-6);
  CHECK_THROWS_AS(noise_loss({1.0, 0.0}, {0.5}), Error);
}

TEST_CASE("agreement loss worked values") {
  CHECK(agree_loss({0.3, 0.7}, {0.3, 0.7}) == 0.0);
  CHECK(agree_loss({0.5, 0.5}, {0.75, 0.25}) == Catch::Approx(0.25).margin(1e-12));
  CHECK(agree_loss({1.0, 0.0}, {0.5, 0.5}) == Catch::Approx(0.5).margin(1e-12));
  CHECK_THROWS_AS(agree_loss({0.1}, {0.1, 0.2}), Error);
}

TEST_CASE("total loss combination") {
  CHECK(total_loss(2.0, 3.0, 4.0) == Catch::Approx(7.2).margin(1e-12));
  CHECK(total_loss(0.0, 0.0, 0.0) == 0.0);
  // Linearity in each argument.
  CHECK(total_loss(4.0, 3.0, 4.0) - total_loss(2.0, 3.0, 4.0) == Catch::Approx(0.2).margin(1e-12));
  CHECK(total_loss(2.0, 5.0, 4.0) - total_loss(2.0, 3.0, 4.0) == Catch::Approx(2.0).margin(1e-12));
}

TEST_CASE("near-perfect confident prediction drives the total loss under 1e-3") {
  const int n = 6;
  std::vector<int> labels{1, 1, 2, 2, 0, 0};
  const int c = 3;
  std::vector<double> probs(static_cast<std::size_t>(n) * c, 1e-9);
  // One-hot rows matching the targets: cluster 1 -> channel 0, 2 -> 1,
  // noise points get an arbitrary confident channel.
  for (int i = 0; i < n; ++i) {
    const int channel = labels[static_cast<std::size_t>(i)] == 0 ? 2 : labels[static_cast<std::size_t>(i)] - 1;
    probs[static_cast<std::size_t>(i) * c + channel] = 1.0 - 2e-9;
  }
  auto s_hat = estimated_similarity(probs, n, c);
  auto nu = noise_indicator(labels);
  std::vector<double> nu_hat(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) nu_hat[static_cast<std::size_t>(i)] = nu[static_cast<std::size_t>(i)] == 1.0 ? 1.0 - 1e-9 : 1e-9;
  AgreementVector gamma(static_cast<std::size_t>(n), 0.8);
  const double total = total_loss(mcl_loss(similarity_matrix(labels), s_hat, weight_matrix(labels, 50.0)),
                                  noise_loss(nu, nu_hat), agree_loss(gamma, gamma));
  CHECK(total < 1e-3);
}

TEST_CASE("whole model plus loss matches finite differences") {
  const ModelConfig config = micro_config();
  ModelParams params = init_params(config, 99);
  std::mt19937_64 rng(6);
  const int n = 20;
  std::vector<Point2> pts;
  for (int i = 0; i < n; ++i) pts.push_back({uniform_in(rng, -1.0, 1.0), uniform_in(rng, -1.0, 1.0)});
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (int& l : labels) l = static_cast<int>(bounded(rng, 3));
  AgreementVector gamma(static_cast<std::size_t>(n));
  for (double& g : gamma) g = uniform_in(rng, 0.2, 0.95);

  auto target_s = similarity_matrix(labels);
  auto weights = weight_matrix(labels, 10.0);
  auto nu = noise_indicator(labels);

  auto build = [&](Tape& t, Tape::Id flat) {
    auto ids = params_from_flat(t, flat, params);
    auto f = forward_on_tape(t, pts, params, config, ids, 0);
    auto mcl = mcl_loss_on_tape(t, target_s.entries, weights, t.row_gram(f.cluster_probs));
    auto noise = noise_loss_on_tape(t, nu, f.noise_prob);
    auto agree = agree_loss_on_tape(t, gamma, f.agreement);
    return total_loss_on_tape(t, mcl, noise, agree);
  };
  const double err = ad::grad_check(build, flatten_params(params));
  CHECK(err < 1e-4);
}
