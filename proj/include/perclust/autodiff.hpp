#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "perclust/common.hpp"

namespace perclust::ad {

struct Tensor {
  std::vector<int> shape;
  std::vector<double> values;

  std::size_t numel() const { return values.size(); }
  int rows() const { return shape.empty() ? 1 : shape[0]; }
  int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  static Tensor zeros(std::vector<int> shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return Tensor{std::move(shape), std::vector<double>(n, 0.0)};
  }

  static Tensor scalar(double v) { return Tensor{{}, {v}}; }

  static Tensor matrix(int r, int c, std::vector<double> values) {
    if (values.size() != static_cast<std::size_t>(r) * static_cast<std::size_t>(c))
      throw Error::numeric("tensor: value count does not match shape");
    return Tensor{{r, c}, std::move(values)};
  }
};

// Reverse-mode tape. Each primitive appends one node holding the forward
// value and a closure that scatters the node's adjoint into its inputs.
// A tape is confined to one worker; parallelism happens across tapes.
class Tape {
 public:
  using Id = int;

  Id leaf(Tensor t, bool requires_grad = false) {
    nodes_.push_back(Node{std::move(t), {}, requires_grad, nullptr});
    return static_cast<Id>(nodes_.size() - 1);
  }

  const Tensor& value(Id id) const { return nodes_[check(id)].value; }
  double scalar_value(Id id) const {
    const Node& n = nodes_[check(id)];
    if (n.value.numel() != 1) throw Error::numeric("scalar_value: tensor is not a scalar");
    return n.value.values[0];
  }

  // Gradient of the last backward() target with respect to `id`.
  std::vector<double> grad(Id id) const {
    const Node& n = nodes_[check(id)];
    if (n.grad.empty()) return std::vector<double>(n.value.numel(), 0.0);
    return n.grad;
  }

  Id affine_shared(Id x, Id w, Id b) {
    const Tensor& xv = value(x);
    const Tensor& wv = value(w);
    const Tensor& bv = value(b);
    const int n = xv.rows(), fin = xv.cols(), fout = wv.cols();
    if (wv.rows() != fin || static_cast<int>(bv.numel()) != fout)
      throw Error::numeric("affine_shared: shape mismatch (" + shape_str(xv) + " x " + shape_str(wv) + " + " +
                           shape_str(bv) + ")");
    Tensor out = Tensor::zeros({n, fout});
    for (int i = 0; i < n; ++i) {
      double* yrow = &out.values[static_cast<std::size_t>(i) * fout];
      for (int o = 0; o < fout; ++o) yrow[o] = bv.values[static_cast<std::size_t>(o)];
      const double* xrow = &xv.values[static_cast<std::size_t>(i) * fin];
      for (int k = 0; k < fin; ++k) {
        const double xk = xrow[k];
        if (xk == 0.0) continue;
        const double* wrow = &wv.values[static_cast<std::size_t>(k) * fout];
        for (int o = 0; o < fout; ++o) yrow[o] += xk * wrow[o];
      }
    }
    return record({x, w, b}, std::move(out), [x, w, b, n, fin, fout](Tape& t, Id self) {
      const std::vector<double>& dy = t.nodes_[self].grad;
      const Tensor& xv = t.value(x);
      const Tensor& wv = t.value(w);
      if (t.wants_grad(x)) {
        std::vector<double>& dx = t.grad_buffer(x);
        for (int i = 0; i < n; ++i) {
          const double* dyrow = &dy[static_cast<std::size_t>(i) * fout];
          double* dxrow = &dx[static_cast<std::size_t>(i) * fin];
          for (int k = 0; k < fin; ++k) {
            const double* wrow = &wv.values[static_cast<std::size_t>(k) * fout];
            double acc = 0.0;
            for (int o = 0; o < fout; ++o) acc += dyrow[o] * wrow[o];
            dxrow[k] += acc;
          }
        }
      }
      if (t.wants_grad(w)) {
        std::vector<double>& dw = t.grad_buffer(w);
        for (int i = 0; i < n; ++i) {
          const double* dyrow = &dy[static_cast<std::size_t>(i) * fout];
          const double* xrow = &xv.values[static_cast<std::size_t>(i) * fin];
          for (int k = 0; k < fin; ++k) {
            const double xk = xrow[k];
            if (xk == 0.0) continue;
            double* dwrow = &dw[static_cast<std::size_t>(k) * fout];
            for (int o = 0; o < fout; ++o) dwrow[o] += xk * dyrow[o];
          }
        }
      }
      if (t.wants_grad(b)) {
        std::vector<double>& db = t.grad_buffer(b);
        for (int i = 0; i < n; ++i) {
          const double* dyrow = &dy[static_cast<std::size_t>(i) * fout];
          for (int o = 0; o < fout; ++o) db[static_cast<std::size_t>(o)] += dyrow[o];
        }
      }
    });
  }

  Id relu(Id x) {
    Tensor out = value(x);
    for (double& v : out.values) v = std::max(0.0, v);
    return record({x}, std::move(out), [x](Tape& t, Id self) {
      if (!t.wants_grad(x)) return;
      const std::vector<double>& dy = t.nodes_[self].grad;
      const Tensor& xv = t.value(x);
      std::vector<double>& dx = t.grad_buffer(x);
      for (std::size_t i = 0; i < dx.size(); ++i)
        if (xv.values[i] > 0.0) dx[i] += dy[i];
    });
  }

  Id sigmoid(Id x) {
    Tensor out = value(x);
    for (double& v : out.values) v = 1.0 / (1.0 + std::exp(-v));
    return record({x}, std::move(out), [x](Tape& t, Id self) {
      if (!t.wants_grad(x)) return;
      const std::vector<double>& dy = t.nodes_[self].grad;
      const std::vector<double>& y = t.nodes_[self].value.values;
      std::vector<double>& dx = t.grad_buffer(x);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * y[i] * (1.0 - y[i]);
    });
  }

  Id softmax_rows(Id x) {
    const Tensor& xv = value(x);
    const int n = xv.rows(), f = xv.cols();
    Tensor out = Tensor::zeros({n, f});
    for (int i = 0; i < n; ++i) {
      const double* row = &xv.values[static_cast<std::size_t>(i) * f];
      double* yrow = &out.values[static_cast<std::size_t>(i) * f];
      double mx = row[0];
      for (int j = 1; j < f; ++j) mx = std::max(mx, row[j]);
      double sum = 0.0;
      for (int j = 0; j < f; ++j) {
        yrow[j] = std::exp(row[j] - mx);
        sum += yrow[j];
      }
      for (int j = 0; j < f; ++j) yrow[j] /= sum;
    }
    return record({x}, std::move(out), [x, n, f](Tape& t, Id self) {
      if (!t.wants_grad(x)) return;
      const std::vector<double>& dy = t.nodes_[self].grad;
      const std::vector<double>& y = t.nodes_[self].value.values;
      std::vector<double>& dx = t.grad_buffer(x);
      for (int i = 0; i < n; ++i) {
        const std::size_t off = static_cast<std::size_t>(i) * f;
        double dot = 0.0;
        for (int j = 0; j < f; ++j) dot += dy[off + j] * y[off + j];
        for (int j = 0; j < f; ++j) dx[off + j] += y[off + j] * (dy[off + j] - dot);
      }
    });
  }

  // Max-pool over explicit member-row groups. Ties resolve to the lowest
  // member index; the recorded argmax routes the whole adjoint.
  Id max_over_group(Id x, const std::vector<std::vector<int>>& groups) {
    const Tensor& xv = value(x);
    const int f = xv.cols();
    const int g = static_cast<int>(groups.size());
    Tensor out = Tensor::zeros({g, f});
    auto argmax = std::make_shared<std::vector<int>>(static_cast<std::size_t>(g) * f, -1);
    for (int gi = 0; gi < g; ++gi) {
      if (groups[static_cast<std::size_t>(gi)].empty())
        throw Error::numeric("max_over_group: empty group " + std::to_string(gi));
      double* yrow = &out.values[static_cast<std::size_t>(gi) * f];
      for (int j = 0; j < f; ++j) yrow[j] = -std::numeric_limits<double>::infinity();
      for (int member : groups[static_cast<std::size_t>(gi)]) {
        const double* row = &xv.values[static_cast<std::size_t>(member) * f];
        for (int j = 0; j < f; ++j) {
          if (row[j] > yrow[j]) {
            yrow[j] = row[j];
            (*argmax)[static_cast<std::size_t>(gi) * f + j] = member;
          }
        }
      }
    }
    return record({x}, std::move(out), [x, argmax, g, f](Tape& t, Id self) {
      if (!t.wants_grad(x)) return;
      const std::vector<double>& dy = t.nodes_[self].grad;
      std::vector<double>& dx = t.grad_buffer(x);
      for (int gi = 0; gi < g; ++gi)
        for (int j = 0; j < f; ++j) {
          const int src = (*argmax)[static_cast<std::size_t>(gi) * f + j];
          dx[static_cast<std::size_t>(src) * f + j] += dy[static_cast<std::size_t>(gi) * f + j];
        }
    });
  }

  Id gather_rows(Id x, std::vector<int> rows) {
    const Tensor& xv = value(x);
    const int f = xv.cols();
    const int r = static_cast<int>(rows.size());
    Tensor out = Tensor::zeros({r, f});
    for (int i = 0; i < r; ++i) {
      if (rows[static_cast<std::size_t>(i)] < 0 || rows[static_cast<std::size_t>(i)] >= xv.rows())
        throw Error::numeric("gather_rows: index out of range");
      std::copy_n(&xv.values[static_cast<std::size_t>(rows[static_cast<std::size_t>(i)]) * f], f,
                  &out.values[static_cast<std::size_t>(i) * f]);
    }
    auto idx = std::make_shared<std::vector<int>>(std::move(rows));
    return record({x}, std::move(out), [x, idx, f](Tape& t, Id self) {
      if (!t.wants_grad(x)) return;
      const std::vector<double>& dy = t.nodes_[self].grad;
      std::vector<double>& dx = t.grad_buffer(x);
      for (std::size_t i = 0; i < idx->size(); ++i) {
        const std::size_t src = static_cast<std::size_t>((*idx)[i]) * f;
        const std::size_t dst = i * static_cast<std::size_t>(f);
        for (int j = 0; j < f; ++j) dx[src + j] += dy[dst + j];
      }
    });
  }

  Id concat_cols(Id a, Id b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (av.rows() != bv.rows()) throw Error::numeric("concat_cols: row count mismatch");
    const int n = av.rows(), p = av.cols(), q = bv.cols();
    Tensor out = Tensor::zeros({n, p + q});
    for (int i = 0; i < n; ++i) {
      std::copy_n(&av.values[static_cast<std::size_t>(i) * p], p,
                  &out.values[static_cast<std::size_t>(i) * (p + q)]);
      std::copy_n(&bv.values[static_cast<std::size_t>(i) * q], q,
                  &out.values[static_cast<std::size_t>(i) * (p + q) + p]);
    }
    return record({a, b}, std::move(out), [a, b, n, p, q](Tape& t, Id self) {
      const std::vector<double>& dy = t.nodes_[self].grad;
      if (t.wants_grad(a)) {
        std::vector<double>& da = t.grad_buffer(a);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < p; ++j)
            da[static_cast<std::size_t>(i) * p + j] += dy[static_cast<std::size_t>(i) * (p + q) + j];
      }
      if (t.wants_grad(b)) {
        std::vector<double>& db = t.grad_buffer(b);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < q; ++j)
            db[static_cast<std::size_t>(i) * q + j] += dy[static_cast<std::size_t>(i) * (p + q) + p + j];
      }
    });
  }

  Id reshape(Id x, std::vector<int> shape) {
    const Tensor& xv = value(x);
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    if (n != xv.numel()) throw Error::numeric("reshape: element count mismatch");
    Tensor out{std::move(shape), xv.values};
    return record({x}, std::move(out), [x](Tape& t, Id self) {
      if (!t.wants_grad(x)) return;
      const std::vector<double>& dy = t.nodes_[self].grad;
      std::vector<double>& dx = t.grad_buffer(x);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
    });
  }

  Id slice_cols(Id x, int begin, int end) {
    const Tensor& xv = value(x);
    const int n = xv.rows(), f = xv.cols();
    if (begin < 0 || end > f || begin >= end) throw Error::numeric("slice_cols: invalid column range");
    const int w = end - begin;
    Tensor out = Tensor::zeros({n, w});
    for (int i = 0; i < n; ++i)
      std::copy_n(&xv.values[static_cast<std::size_t>(i) * f + begin], w,
                  &out.values[static_cast<std::size_t>(i) * w]);
    return record({x}, std::move(out), [x, begin, n, f, w](Tape& t, Id self) {
      if (!t.wants_grad(x)) return;
      const std::vector<double>& dy = t.nodes_[self].grad;
      std::vector<double>& dx = t.grad_buffer(x);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < w; ++j)
          dx[static_cast<std::size_t>(i) * f + begin + j] += dy[static_cast<std::size_t>(i) * w + j];
    });
  }

  Id add(Id a, Id b) { return elementwise("add", a, b, [](double x, double y) { return x + y; },
                                          [](double, double) { return 1.0; },
                                          [](double, double) { return 1.0; }); }
  Id sub(Id a, Id b) { return elementwise("sub", a, b, [](double x, double y) { return x - y; },
                                          [](double, double) { return 1.0; },
                                          [](double, double) { return -1.0; }); }
  Id mul(Id a, Id b) { return elementwise("mul", a, b, [](double x, double y) { return x * y; },
                                          [](double, double y) { return y; },
                                          [](double x, double) { return x; }); }

  Id scale(Id x, double c) {
    Tensor out = value(x);
    for (double& v : out.values) v *= c;
    return record({x}, std::move(out), [x, c](Tape& t, Id self) {
      if (!t.wants_grad(x)) return;
      const std::vector<double>& dy = t.nodes_[self].grad;
      std::vector<double>& dx = t.grad_buffer(x);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += c * dy[i];
    });
  }

  Id sum(Id x) {
    const Tensor& xv = value(x);
    const double total = std::accumulate(xv.values.begin(), xv.values.end(), 0.0);
    return record({x}, Tensor::scalar(total), [x](Tape& t, Id self) {
      if (!t.wants_grad(x)) return;
      const double dy = t.nodes_[self].grad[0];
      std::vector<double>& dx = t.grad_buffer(x);
      for (double& v : dx) v += dy;
    });
  }

  Id mean(Id x) {
    const Tensor& xv = value(x);
    const double n = static_cast<double>(xv.numel());
    const double total = std::accumulate(xv.values.begin(), xv.values.end(), 0.0) / n;
    return record({x}, Tensor::scalar(total), [x, n](Tape& t, Id self) {
      if (!t.wants_grad(x)) return;
      const double dy = t.nodes_[self].grad[0] / n;
      std::vector<double>& dx = t.grad_buffer(x);
      for (double& v : dx) v += dy;
    });
  }

  // Y = X X^T; rows of X are per-point probability vectors.
  Id row_gram(Id x) {
    const Tensor& xv = value(x);
    const int n = xv.rows(), f = xv.cols();
    Tensor out = Tensor::zeros({n, n});
    for (int i = 0; i < n; ++i) {
      const double* xi = &xv.values[static_cast<std::size_t>(i) * f];
      for (int j = i; j < n; ++j) {
        const double* xj = &xv.values[static_cast<std::size_t>(j) * f];
        double acc = 0.0;
        for (int k = 0; k < f; ++k) acc += xi[k] * xj[k];
        out.values[static_cast<std::size_t>(i) * n + j] = acc;
        out.values[static_cast<std::size_t>(j) * n + i] = acc;
      }
    }
    return record({x}, std::move(out), [x, n, f](Tape& t, Id self) {
      if (!t.wants_grad(x)) return;
      const std::vector<double>& dy = t.nodes_[self].grad;
      const Tensor& xv = t.value(x);
      std::vector<double>& dx = t.grad_buffer(x);
      for (int i = 0; i < n; ++i) {
        double* dxi = &dx[static_cast<std::size_t>(i) * f];
        for (int j = 0; j < n; ++j) {
          const double g = dy[static_cast<std::size_t>(i) * n + j] + dy[static_cast<std::size_t>(j) * n + i];
          if (g == 0.0) continue;
          const double* xj = &xv.values[static_cast<std::size_t>(j) * f];
          for (int k = 0; k < f; ++k) dxi[k] += g * xj[k];
        }
      }
    });
  }

  // Inverse-distance-weighted interpolation of coarse features onto fine
  // positions using the k nearest coarse points (w = 1/d^2). An exact hit
  // (d < 1e-12) copies that coarse feature and the gradient flows only
  // through it. Positions are flattened (x, y) pairs and are not
  // differentiated.
  Id idw_interpolate(const std::vector<double>& coarse_pos, Id coarse_feat,
                     const std::vector<double>& fine_pos, int k = 3) {
    const Tensor& fv = value(coarse_feat);
    const int m = static_cast<int>(coarse_pos.size() / 2);
    const int n = static_cast<int>(fine_pos.size() / 2);
    const int f = fv.cols();
    if (fv.rows() != m) throw Error::numeric("idw_interpolate: feature/position count mismatch");
    if (m < 1) throw Error::numeric("idw_interpolate: no coarse points");
    const int kk = std::min(k, m);

    struct Neighbor {
      double d2;
      int idx;
    };
    auto weights = std::make_shared<std::vector<std::pair<int, double>>>();
    weights->reserve(static_cast<std::size_t>(n) * kk);
    auto counts = std::make_shared<std::vector<int>>(static_cast<std::size_t>(n), 0);

    Tensor out = Tensor::zeros({n, f});
    std::vector<Neighbor> best(static_cast<std::size_t>(kk));
    for (int i = 0; i < n; ++i) {
      const double px = fine_pos[static_cast<std::size_t>(i) * 2];
      const double py = fine_pos[static_cast<std::size_t>(i) * 2 + 1];
      int filled = 0;
      for (int j = 0; j < m; ++j) {
        const double dx = coarse_pos[static_cast<std::size_t>(j) * 2] - px;
        const double dy = coarse_pos[static_cast<std::size_t>(j) * 2 + 1] - py;
        Neighbor cand{dx * dx + dy * dy, j};
        int pos = filled;
        while (pos > 0 && (best[static_cast<std::size_t>(pos - 1)].d2 > cand.d2 ||
                           (best[static_cast<std::size_t>(pos - 1)].d2 == cand.d2 &&
                            best[static_cast<std::size_t>(pos - 1)].idx > cand.idx))) {
          if (pos < kk) best[static_cast<std::size_t>(pos)] = best[static_cast<std::size_t>(pos - 1)];
          --pos;
        }
        if (pos < kk) {
          best[static_cast<std::size_t>(pos)] = cand;
          if (filled < kk) ++filled;
        }
      }
      double* yrow = &out.values[static_cast<std::size_t>(i) * f];
      const double exact_hit = 1e-24;  // (1e-12)^2 on squared distances
      if (best[0].d2 < exact_hit) {
        const double* src = &fv.values[static_cast<std::size_t>(best[0].idx) * f];
        std::copy_n(src, f, yrow);
        weights->push_back({best[0].idx, 1.0});
        (*counts)[static_cast<std::size_t>(i)] = 1;
        continue;
      }
      double wsum = 0.0;
      for (int t = 0; t < filled; ++t) wsum += 1.0 / best[static_cast<std::size_t>(t)].d2;
      for (int t = 0; t < filled; ++t) {
        const double w = (1.0 / best[static_cast<std::size_t>(t)].d2) / wsum;
        const double* src = &fv.values[static_cast<std::size_t>(best[static_cast<std::size_t>(t)].idx) * f];
        for (int c = 0; c < f; ++c) yrow[c] += w * src[c];
        weights->push_back({best[static_cast<std::size_t>(t)].idx, w});
      }
      (*counts)[static_cast<std::size_t>(i)] = filled;
    }
    return record({coarse_feat}, std::move(out), [coarse_feat, weights, counts, f](Tape& t, Id self) {
      if (!t.wants_grad(coarse_feat)) return;
      const std::vector<double>& dy = t.nodes_[self].grad;
      std::vector<double>& dx = t.grad_buffer(coarse_feat);
      std::size_t cursor = 0;
      for (std::size_t i = 0; i < counts->size(); ++i) {
        for (int c = 0; c < (*counts)[i]; ++c) {
          const auto [idx, w] = (*weights)[cursor++];
          const double* dyrow = &dy[i * static_cast<std::size_t>(f)];
          double* dxrow = &dx[static_cast<std::size_t>(idx) * f];
          for (int j = 0; j < f; ++j) dxrow[j] += w * dyrow[j];
        }
      }
    });
  }

  // -sum_ij W_ij (S_ij log c(P_ij) + (1 - S_ij) log(1 - c(P_ij))) with the
  // estimate clamped to [eps, 1 - eps] before the logs. The terms are summed
  // in sorted order, which makes the value exactly invariant under any
  // consistent reordering of the entries (point permutation).
  Id weighted_pair_bce(std::vector<double> s, std::vector<double> w, Id s_hat) {
    const Tensor& pv = value(s_hat);
    if (s.size() != pv.numel() || w.size() != pv.numel())
      throw Error::numeric("weighted_pair_bce: shape mismatch");
    const double eps = 1e-7;
    std::vector<double> terms(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double p = std::clamp(pv.values[i], eps, 1.0 - eps);
      terms[i] = -w[i] * (s[i] * std::log(p) + (1.0 - s[i]) * std::log(1.0 - p));
    }
    std::sort(terms.begin(), terms.end());
    double loss = 0.0;
    for (double t : terms) loss += t;
    auto sp = std::make_shared<std::vector<double>>(std::move(s));
    auto wp = std::make_shared<std::vector<double>>(std::move(w));
    return record({s_hat}, Tensor::scalar(loss), [s_hat, sp, wp, eps](Tape& t, Id self) {
      if (!t.wants_grad(s_hat)) return;
      const double dl = t.nodes_[self].grad[0];
      const std::vector<double>& p = t.value(s_hat).values;
      std::vector<double>& dx = t.grad_buffer(s_hat);
      for (std::size_t i = 0; i < dx.size(); ++i) {
        if (p[i] <= eps || p[i] >= 1.0 - eps) continue;  // clamped region
        dx[i] -= dl * (*wp)[i] * ((*sp)[i] / p[i] - (1.0 - (*sp)[i]) / (1.0 - p[i]));
      }
    });
  }

  // -(1/N) sum_i pos_w t_i log c(p_i) + neg_w (1 - t_i) log(1 - c(p_i)).
  Id weighted_binary_ce(std::vector<double> target, Id pred, double pos_weight, double neg_weight) {
    const Tensor& pv = value(pred);
    if (target.size() != pv.numel()) throw Error::numeric("weighted_binary_ce: shape mismatch");
    const double eps = 1e-7;
    const double n = static_cast<double>(target.size());
    double loss = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
      const double p = std::clamp(pv.values[i], eps, 1.0 - eps);
      loss -= pos_weight * target[i] * std::log(p) + neg_weight * (1.0 - target[i]) * std::log(1.0 - p);
    }
    loss /= n;
    auto tp = std::make_shared<std::vector<double>>(std::move(target));
    return record({pred}, Tensor::scalar(loss), [pred, tp, pos_weight, neg_weight, eps, n](Tape& t, Id self) {
      if (!t.wants_grad(pred)) return;
      const double dl = t.nodes_[self].grad[0] / n;
      const std::vector<double>& p = t.value(pred).values;
      std::vector<double>& dx = t.grad_buffer(pred);
      for (std::size_t i = 0; i < dx.size(); ++i) {
        if (p[i] <= eps || p[i] >= 1.0 - eps) continue;
        dx[i] -= dl * (pos_weight * (*tp)[i] / p[i] - neg_weight * (1.0 - (*tp)[i]) / (1.0 - p[i]));
      }
    });
  }

  // (1/N) sum_i |p_i - t_i| with subgradient 0 at exact equality.
  Id mean_abs_error(std::vector<double> target, Id pred) {
    const Tensor& pv = value(pred);
    if (target.size() != pv.numel()) throw Error::numeric("mean_abs_error: shape mismatch");
    const double n = static_cast<double>(target.size());
    double loss = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) loss += std::abs(pv.values[i] - target[i]);
    loss /= n;
    auto tp = std::make_shared<std::vector<double>>(std::move(target));
    return record({pred}, Tensor::scalar(loss), [pred, tp, n](Tape& t, Id self) {
      if (!t.wants_grad(pred)) return;
      const double dl = t.nodes_[self].grad[0] / n;
      const std::vector<double>& p = t.value(pred).values;
      std::vector<double>& dx = t.grad_buffer(pred);
      for (std::size_t i = 0; i < dx.size(); ++i) {
        const double d = p[i] - (*tp)[i];
        if (d > 0.0) dx[i] += dl;
        else if (d < 0.0) dx[i] -= dl;
      }
    });
  }

  // Reverse sweep from a scalar loss; visits nodes in reverse execution
  // order exactly once.
  void backward(Id loss) {
    Node& l = nodes_[check(loss)];
    if (l.value.numel() != 1) throw Error::numeric("backward: loss must be a scalar");
    grad_buffer(loss)[0] += 1.0;
    for (Id i = loss; i >= 0; --i) {
      Node& node = nodes_[static_cast<std::size_t>(i)];
      if (node.backward && !node.grad.empty()) node.backward(*this, i);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::function<void(Tape&, Id)> backward;
  };

  std::vector<Node> nodes_;

  Id check(Id id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
      throw Error::numeric("tape: invalid tensor id");
    return id;
  }

  bool wants_grad(Id id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  std::vector<double>& grad_buffer(Id id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) n.grad.assign(n.value.numel(), 0.0);
    return n.grad;
  }

  static std::string shape_str(const Tensor& t) {
    std::string s = "[";
    for (std::size_t i = 0; i < t.shape.size(); ++i) s += (i ? "," : "") + std::to_string(t.shape[i]);
    return s + "]";
  }

  Id record(std::initializer_list<Id> inputs, Tensor value, std::function<void(Tape&, Id)> backward) {
    bool needs = false;
    for (Id in : inputs) needs = needs || nodes_[check(in)].requires_grad;
    nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(backward) : nullptr});
    return static_cast<Id>(nodes_.size() - 1);
  }

  template <typename F, typename Da, typename Db>
  Id elementwise(const char* name, Id a, Id b, F f, Da da, Db db) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (av.shape != bv.shape) throw Error::numeric(std::string(name) + ": shape mismatch");
    Tensor out = av;
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = f(av.values[i], bv.values[i]);
    return record({a, b}, std::move(out), [a, b, da, db](Tape& t, Id self) {
      const std::vector<double>& dy = t.nodes_[self].grad;
      const std::vector<double>& avv = t.value(a).values;
      const std::vector<double>& bvv = t.value(b).values;
      if (t.wants_grad(a)) {
        std::vector<double>& dx = t.grad_buffer(a);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * da(avv[i], bvv[i]);
      }
      if (t.wants_grad(b)) {
        std::vector<double>& dx = t.grad_buffer(b);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * db(avv[i], bvv[i]);
      }
    });
  }
};

// Max relative error between the tape gradient and central finite
// differences, |analytic - fd| / max(1, |analytic|), maximized over
// coordinates. `f` builds a scalar loss from a leaf holding `point`.
inline double grad_check(const std::function<Tape::Id(Tape&, Tape::Id)>& f,
                         const std::vector<double>& point, double step = 1e-5) {
  const int n = static_cast<int>(point.size());
  Tape tape;
  const Tape::Id x = tape.leaf(Tensor{{n}, point}, true);
  const Tape::Id loss = f(tape, x);
  tape.backward(loss);
  const std::vector<double> analytic = tape.grad(x);

  auto eval = [&](const std::vector<double>& p) {
    Tape t;
    const Tape::Id xv = t.leaf(Tensor{{n}, p}, false);
    return t.scalar_value(f(t, xv));
  };

  double worst = 0.0;
  std::vector<double> perturbed = point;
  for (int i = 0; i < n; ++i) {
    perturbed[static_cast<std::size_t>(i)] = point[static_cast<std::size_t>(i)] + step;
    const double hi = eval(perturbed);
    perturbed[static_cast<std::size_t>(i)] = point[static_cast<std::size_t>(i)] - step;
    const double lo = eval(perturbed);
    perturbed[static_cast<std::size_t>(i)] = point[static_cast<std::size_t>(i)];
    const double fd = (hi - lo) / (2.0 * step);
    const double err = std::abs(analytic[static_cast<std::size_t>(i)] - fd) /
                       std::max(1.0, std::abs(analytic[static_cast<std::size_t>(i)]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace perclust::ad
