#pragma once

// Multi-layer LSTM with dropout on non-recurrent connections.
//
//   (i, f, o, g) = (sigm, sigm, sigm, tanh)( W^T [D(x); h_prev] + b )
//   c = f * c_prev + i * g
//   h = o * tanh(c)
//
// W is 2n x 4n with gate columns ordered (i, f, o, g). All cell functions
// work on a batch: vectors are n x B matrices, one column per lane.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "slimlm/random.hpp"
#include "slimlm/tensor.hpp"

namespace slimlm {

struct LstmLayerParams {
  Matrix weight;  // 2n x 4n
  Vector bias;    // 4n

  LstmLayerParams() = default;
  explicit LstmLayerParams(std::size_t n)
      : weight(Matrix::Zero(2 * static_cast<Eigen::Index>(n), 4 * static_cast<Eigen::Index>(n))),
        bias(Vector::Zero(4 * static_cast<Eigen::Index>(n))) {}

  std::size_t width() const noexcept { return static_cast<std::size_t>(bias.size() / 4); }
};

using LstmGrads = LstmLayerParams;

// Inverted dropout: entries are 0 or 1/keep_prob. An empty mask is the
// identity (evaluation, or drop probability 0).
struct DropoutMask {
  Matrix scale;
  double keep_prob = 1.0;

  bool active() const noexcept { return scale.size() > 0; }
};

inline DropoutMask make_dropout_mask(Eigen::Index rows, Eigen::Index cols, double drop_prob,
                                     SplitMix64& rng) {
  if (drop_prob < 0.0 || drop_prob >= 1.0)
    throw std::invalid_argument("dropout probability must be in [0, 1)");
  DropoutMask m;
  if (drop_prob == 0.0) return m;
  m.keep_prob = 1.0 - drop_prob;
  m.scale.resize(rows, cols);
  const double inv = 1.0 / m.keep_prob;
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m.scale(r, c) = rng.uniform() < drop_prob ? 0.0 : inv;
  return m;
}

inline Matrix apply_dropout(const Matrix& x, const DropoutMask& mask) {
  if (!mask.active()) return x;
  if (mask.scale.rows() != x.rows() || mask.scale.cols() != x.cols())
    throw std::invalid_argument("dropout mask shape mismatch");
  return x.cwiseProduct(mask.scale);
}

struct CellCache {
  Matrix x;  // D(x)
  Matrix h_prev, c_prev;
  Matrix i, f, o, g;
  Matrix c, tanh_c;
  DropoutMask mask;
};

struct CellOutput {
  Matrix h;
  Matrix c;
  CellCache cache;
};

namespace detail {

inline Matrix sigm(const Matrix& x) { return (1.0 + (-x.array()).exp()).inverse().matrix(); }

inline void check_cell_dims(const LstmLayerParams& p, const Matrix& x, const Matrix& h,
                            const Matrix& c) {
  const auto n = static_cast<Eigen::Index>(p.width());
  if (p.weight.rows() != 2 * n || p.weight.cols() != 4 * n)
    throw std::invalid_argument("LSTM weight must be 2n x 4n");
  if (x.rows() != n || h.rows() != n || c.rows() != n)
    throw std::invalid_argument("LSTM input/state width " + std::to_string(x.rows()) + " != n=" +
                                std::to_string(n));
  if (x.cols() != h.cols() || x.cols() != c.cols())
    throw std::invalid_argument("LSTM batch width mismatch");
}

}  // namespace detail

inline CellOutput lstm_cell_forward(const LstmLayerParams& params, const Matrix& x,
                                    const Matrix& h_prev, const Matrix& c_prev,
                                    const DropoutMask& mask = {}) {
  detail::check_cell_dims(params, x, h_prev, c_prev);
  if (!x.allFinite() || !h_prev.allFinite() || !c_prev.allFinite())
    throw std::domain_error("non-finite LSTM input");
  const auto n = static_cast<Eigen::Index>(params.width());

  CellOutput out;
  CellCache& k = out.cache;
  k.x = apply_dropout(x, mask);
  k.mask = mask;
  k.h_prev = h_prev;
  k.c_prev = c_prev;

  Matrix pre(4 * n, x.cols());
  pre.noalias() = params.weight.topRows(n).transpose() * k.x;
  pre.noalias() += params.weight.bottomRows(n).transpose() * h_prev;
  pre.colwise() += params.bias;

  k.i = detail::sigm(pre.middleRows(0, n));
  k.f = detail::sigm(pre.middleRows(n, n));
  k.o = detail::sigm(pre.middleRows(2 * n, n));
  k.g = pre.middleRows(3 * n, n).array().tanh().matrix();
  k.c = k.f.cwiseProduct(c_prev) + k.i.cwiseProduct(k.g);
  k.tanh_c = k.c.array().tanh().matrix();
  out.h = k.o.cwiseProduct(k.tanh_c);
  out.c = k.c;
  return out;
}

struct CellGrads {
  Matrix x;
  Matrix h_prev;
  Matrix c_prev;
};

// Reverse of lstm_cell_forward; parameter gradients are added to `acc`.
inline CellGrads lstm_cell_backward_into(const LstmLayerParams& params, const CellCache& k,
                                         const Matrix& grad_h, const Matrix& grad_c,
                                         LstmGrads& acc) {
  const auto n = static_cast<Eigen::Index>(params.width());
  if (grad_h.rows() != n || grad_c.rows() != n || grad_h.cols() != k.h_prev.cols() ||
      grad_c.cols() != k.h_prev.cols() || k.i.rows() != n)
    throw std::invalid_argument("LSTM cache/gradient shape mismatch");

  const Matrix dc = grad_c.array() +
                    grad_h.array() * k.o.array() * (1.0 - k.tanh_c.array().square());
  Matrix dpre(4 * n, grad_h.cols());
  dpre.middleRows(0, n) = (dc.array() * k.g.array() * k.i.array() * (1.0 - k.i.array())).matrix();
  dpre.middleRows(n, n) =
      (dc.array() * k.c_prev.array() * k.f.array() * (1.0 - k.f.array())).matrix();
  dpre.middleRows(2 * n, n) =
      (grad_h.array() * k.tanh_c.array() * k.o.array() * (1.0 - k.o.array())).matrix();
  dpre.middleRows(3 * n, n) = (dc.array() * k.i.array() * (1.0 - k.g.array().square())).matrix();

  acc.weight.topRows(n).noalias() += k.x * dpre.transpose();
  acc.weight.bottomRows(n).noalias() += k.h_prev * dpre.transpose();
  acc.bias += dpre.rowwise().sum();

  CellGrads g;
  g.x.noalias() = params.weight.topRows(n) * dpre;
  if (k.mask.active()) g.x = g.x.cwiseProduct(k.mask.scale);
  g.h_prev.noalias() = params.weight.bottomRows(n) * dpre;
  g.c_prev = dc.cwiseProduct(k.f);
  return g;
}

struct CellBackward {
  CellGrads grads;
  LstmGrads params;
};

inline CellBackward lstm_cell_backward(const LstmLayerParams& params, const CellCache& cache,
                                       const Matrix& grad_h, const Matrix& grad_c) {
  CellBackward out;
  out.params = LstmGrads(params.width());
  out.grads = lstm_cell_backward_into(params, cache, grad_h, grad_c, out.params);
  return out;
}

struct LstmStack {
  std::vector<LstmLayerParams> layers;

  std::size_t depth() const noexcept { return layers.size(); }
  std::size_t width() const noexcept { return layers.empty() ? 0 : layers.front().width(); }
};

struct LstmState {
  std::vector<Matrix> h;
  std::vector<Matrix> c;

  static LstmState zeros(std::size_t layers, std::size_t n, std::size_t batch) {
    LstmState s;
    for (std::size_t l = 0; l < layers; ++l) {
      s.h.push_back(Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(batch)));
      s.c.push_back(Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(batch)));
    }
    return s;
  }
};

// Masks for one window: input[t][l] feeds layer l at step t (layer 0's is
// the embedding connection), output[t] sits between the top layer and the
// output layer. Empty vectors mean no dropout.
struct StackMasks {
  std::vector<std::vector<DropoutMask>> input;
  std::vector<DropoutMask> output;
};

inline StackMasks make_stack_masks(std::size_t layers, std::size_t n, std::size_t batch,
                                   std::size_t steps, double drop_embed, double drop_hidden,
                                   SplitMix64& rng) {
  StackMasks m;
  if (drop_embed == 0.0 && drop_hidden == 0.0) return m;
  const auto rows = static_cast<Eigen::Index>(n);
  const auto cols = static_cast<Eigen::Index>(batch);
  m.input.resize(steps);
  m.output.resize(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t l = 0; l < layers; ++l)
      m.input[t].push_back(make_dropout_mask(rows, cols, l == 0 ? drop_embed : drop_hidden, rng));
    m.output[t] = make_dropout_mask(rows, cols, drop_hidden, rng);
  }
  return m;
}

struct StackCache {
  std::vector<std::vector<CellCache>> cells;  // [t][l]
  std::vector<DropoutMask> output_masks;
};

struct StackForward {
  std::vector<Matrix> top;  // after output dropout
  LstmState state;
  StackCache cache;
};

inline StackForward stack_forward(const LstmStack& stack, const std::vector<Matrix>& inputs,
                                  const LstmState& state, const StackMasks& masks = {}) {
  const std::size_t L = stack.depth();
  if (state.h.size() != L || state.c.size() != L)
    throw std::invalid_argument("LSTM state depth does not match stack");
  const bool dropout = !masks.input.empty();
  if (dropout && (masks.input.size() != inputs.size() || masks.output.size() != inputs.size()))
    throw std::invalid_argument("dropout masks do not cover the window");

  StackForward out;
  out.state = state;
  out.cache.cells.resize(inputs.size());
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    const Matrix* x = &inputs[t];
    for (std::size_t l = 0; l < L; ++l) {
      static const DropoutMask kNone;
      const DropoutMask& mask = dropout ? masks.input[t][l] : kNone;
      CellOutput cell = lstm_cell_forward(stack.layers[l], *x, out.state.h[l], out.state.c[l], mask);
      out.state.h[l] = std::move(cell.h);
      out.state.c[l] = std::move(cell.c);
      out.cache.cells[t].push_back(std::move(cell.cache));
      x = &out.state.h[l];
    }
    if (dropout) {
      out.top.push_back(apply_dropout(*x, masks.output[t]));
      out.cache.output_masks.push_back(masks.output[t]);
    } else {
      out.top.push_back(*x);
    }
  }
  return out;
}

struct StackBackward {
  std::vector<Matrix> grad_inputs;
  std::vector<LstmGrads> grads;
};

// Truncated BPTT over the cached window; gradients w.r.t. the incoming
// state are dropped.
inline StackBackward stack_backward(const LstmStack& stack, const StackCache& cache,
                                    const std::vector<Matrix>& grad_top) {
  const std::size_t L = stack.depth();
  const std::size_t T = cache.cells.size();
  if (grad_top.size() != T) throw std::invalid_argument("gradient window length mismatch");
  StackBackward out;
  for (const auto& layer : stack.layers) out.grads.emplace_back(layer.width());
  out.grad_inputs.resize(T);
  if (T == 0) return out;

  const Eigen::Index n = static_cast<Eigen::Index>(stack.width());
  const Eigen::Index B = grad_top.front().cols();
  std::vector<Matrix> dh(L, Matrix::Zero(n, B));
  std::vector<Matrix> dc(L, Matrix::Zero(n, B));
  for (std::size_t t = T; t-- > 0;) {
    const bool masked = !cache.output_masks.empty() && cache.output_masks[t].active();
    Matrix down = masked ? Matrix(grad_top[t].cwiseProduct(cache.output_masks[t].scale)) : grad_top[t];
    for (std::size_t l = L; l-- > 0;) {
      const Matrix gh = down + dh[l];
      CellGrads g = lstm_cell_backward_into(stack.layers[l], cache.cells[t][l], gh, dc[l], out.grads[l]);
      dh[l] = std::move(g.h_prev);
      dc[l] = std::move(g.c_prev);
      down = std::move(g.x);
    }
    out.grad_inputs[t] = std::move(down);
  }
  return out;
}

}  // namespace slimlm
