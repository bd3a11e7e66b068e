#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "speakerprof/rng.hpp"
#include "speakerprof/tensor.hpp"

// Differentiable operations. Apart from the bias add in linear/conv1d there is
// no broadcasting: every other shape disagreement throws ShapeError naming
// both shapes.
namespace spkr::ad {

template <typename Real>
TensorT<Real> matmul(const TensorT<Real> &a, const TensorT<Real> &b);

// x[B,I] * W[I,O] + b[O]
template <typename Real>
TensorT<Real> linear(const TensorT<Real> &x, const TensorT<Real> &weight, const TensorT<Real> &bias);

template <typename Real>
TensorT<Real> add(const TensorT<Real> &a, const TensorT<Real> &b);
template <typename Real>
TensorT<Real> sub(const TensorT<Real> &a, const TensorT<Real> &b);
template <typename Real>
TensorT<Real> mul(const TensorT<Real> &a, const TensorT<Real> &b);
template <typename Real>
TensorT<Real> scale(const TensorT<Real> &a, Real factor);

template <typename Real>
TensorT<Real> relu(const TensorT<Real> &x);
template <typename Real>
TensorT<Real> sigmoid(const TensorT<Real> &x);
template <typename Real>
TensorT<Real> tanh(const TensorT<Real> &x);

template <typename Real>
TensorT<Real> sum(const TensorT<Real> &x);
template <typename Real>
TensorT<Real> mean(const TensorT<Real> &x);

// Cross-correlation of x[B,Cin,T] with kernel[Cout,Cin,W] plus bias[Cout].
// Output length is (T + 2*padding - W) / stride + 1.
template <typename Real>
TensorT<Real> conv1d(const TensorT<Real> &x, const TensorT<Real> &kernel, const TensorT<Real> &bias,
                     std::size_t stride = 1, std::size_t padding = 1);

// Max over windows of x[B,C,T]. Backward routes to the first maximal index.
template <typename Real>
TensorT<Real> maxpool1d(const TensorT<Real> &x, std::size_t kernel = 2, std::size_t stride = 2);

template <typename Real>
struct BatchNormStats {
    std::vector<Real> running_mean;
    std::vector<Real> running_var;
};

// Per-feature normalization of x[B,F]. Training mode normalizes with the
// biased batch variance and updates the running statistics (unbiased
// variance); eval mode is the affine map defined by the running statistics.
template <typename Real>
TensorT<Real> batchnorm1d(const TensorT<Real> &x, const TensorT<Real> &gamma, const TensorT<Real> &beta,
                          BatchNormStats<Real> &stats, bool training, Real momentum = Real(0.1),
                          Real eps = Real(1e-5));

// Inverted dropout: zeroes with probability p and scales survivors by
// 1/(1-p) in training mode; identity in eval mode.
template <typename Real>
TensorT<Real> dropout(const TensorT<Real> &x, double p, bool training, Rng &rng);

// Mean over the batch of -log softmax(logits)[target].
template <typename Real>
TensorT<Real> softmax_cross_entropy(const TensorT<Real> &logits, std::span<const std::size_t> targets);

// Row-wise softmax, no graph.
template <typename Real>
std::vector<Real> softmax_rows(const TensorT<Real> &logits);

// pred[B,1] against targets[B]; both reduce by the batch mean.
template <typename Real>
TensorT<Real> mse_loss(const TensorT<Real> &pred, std::span<const Real> targets);
template <typename Real>
TensorT<Real> l1_loss(const TensorT<Real> &pred, std::span<const Real> targets);

// Columns [begin, end) of x[B,N].
template <typename Real>
TensorT<Real> slice_cols(const TensorT<Real> &x, std::size_t begin, std::size_t end);

// x[B,T,I] at step t -> [B,I].
template <typename Real>
TensorT<Real> time_step(const TensorT<Real> &x, std::size_t t);

// T tensors of shape [B,H] -> [B,T,H].
template <typename Real>
TensorT<Real> stack_time(const std::vector<TensorT<Real>> &steps);

// [B,C,T] -> [B,T,C].
template <typename Real>
TensorT<Real> transpose12(const TensorT<Real> &x);

// Row b of the result is taken from `a` where keep[b], else from `b`.
template <typename Real>
TensorT<Real> select_rows(const std::vector<bool> &keep, const TensorT<Real> &a, const TensorT<Real> &b);

// Zeroes x[B,C,T] at steps t >= lengths[b].
template <typename Real>
TensorT<Real> mask_time(const TensorT<Real> &x, std::span<const std::size_t> lengths);

// Mean of x[B,C,T] over the first lengths[b] steps -> [B,C].
template <typename Real>
TensorT<Real> masked_mean_time(const TensorT<Real> &x, std::span<const std::size_t> lengths);

template <typename Real>
struct LstmLayer {
    TensorT<Real> w_ih;  // [I, 4H], gate order i, f, g, o
    TensorT<Real> w_hh;  // [H, 4H]
    TensorT<Real> bias;  // [4H]

    std::size_t hidden() const { return bias.numel() / 4; }
};

template <typename Real>
struct LstmResult {
    TensorT<Real> outputs;  // [B,T,H] of the top layer
    TensorT<Real> h;        // [B,H] top-layer state after each row's last valid step
    TensorT<Real> c;
};

// Stacked LSTM over x[B,T,I] from a zero state, unrolled on the tape so the
// sweep is full backpropagation through time. With `lengths`, row b stops
// updating after lengths[b] steps, so `h` is its state at the true last step.
template <typename Real>
LstmResult<Real> lstm_forward(const TensorT<Real> &x, std::span<const LstmLayer<Real>> layers,
                              std::span<const std::size_t> lengths = {});

}  // namespace spkr::ad
