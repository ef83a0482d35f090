#pragma once

// Forward and backward kernels for every layer type used by the network.
//
// Forward functions optionally fill a cache object; the matching backward
// function consumes it. A default-constructed cache is "missing" and makes
// the backward call throw UsageError.

#include <span>
#include <utility>
#include <vector>

#include "lsseg/tensor.hpp"

namespace lsseg::ops {

enum class Mode { Train, Eval };

// ---------------------------------------------------------------------------
// 3x3 convolution (cross-correlation)

template <class T>
struct ConvCache {
    Tensor<T> input;
    Tensor<T> weight;
    int stride = 1;
    int pad = 0;
    bool valid = false;
};

template <class T>
struct ConvGrads {
    Tensor<T> input;   // empty when not requested
    Tensor<T> weight;  // same dims as the forward weight
    std::vector<T> bias;
};

/// weight is (co, ci, 3, 3); bias has co entries (or is empty for no bias).
/// Output spatial size is floor((h + 2*pad - 3) / stride) + 1.
template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weight,
                         std::span<const T> bias, int stride, int pad,
                         ConvCache<T>* cache = nullptr);

template <class T>
ConvGrads<T> conv2d_backward(const ConvCache<T>& cache, const Tensor<T>& grad_out,
                             bool need_input_grad = true);

// ---------------------------------------------------------------------------
// 2x2 stride-2 transposed convolution

template <class T>
struct TransposedConvCache {
    Tensor<T> input;
    Tensor<T> weight;
    bool valid = false;
};

/// weight is (ci, co, 2, 2); output is (n, co, 2h, 2w). Only stride 2 is
/// supported.
template <class T>
Tensor<T> transposed_conv2d_forward(const Tensor<T>& input, const Tensor<T>& weight,
                                    std::span<const T> bias, int stride = 2,
                                    TransposedConvCache<T>* cache = nullptr);

template <class T>
ConvGrads<T> transposed_conv2d_backward(const TransposedConvCache<T>& cache,
                                        const Tensor<T>& grad_out);

// ---------------------------------------------------------------------------
// Batch normalization

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Running per-channel mean and (unbiased) variance. Empty until initialized.
template <class T>
struct BatchNormStats {
    std::vector<T> mean;
    std::vector<T> var;

    bool empty() const { return mean.empty(); }
    /// mean 0, variance 1
    static BatchNormStats initial(int channels);
};

template <class T>
struct BatchNormCache {
    Tensor<T> xhat;
    std::vector<T> inv_std;
    std::vector<T> gamma;
    bool valid = false;
};

template <class T>
struct BatchNormGrads {
    Tensor<T> input;
    std::vector<T> gamma;
    std::vector<T> beta;
};

/// Train mode: normalize with batch statistics over (n, h, w) and blend them
/// into `stats` with weight `momentum`.
template <class T>
Tensor<T> batchnorm_forward_train(const Tensor<T>& input, std::span<const T> gamma,
                                  std::span<const T> beta, BatchNormStats<T>& stats,
                                  double momentum = kBatchNormMomentum,
                                  double epsilon = kBatchNormEpsilon,
                                  BatchNormCache<T>* cache = nullptr);

/// Eval mode: per-channel affine map from the running statistics.
template <class T>
Tensor<T> batchnorm_forward_eval(const Tensor<T>& input, std::span<const T> gamma,
                                 std::span<const T> beta, const BatchNormStats<T>& stats,
                                 double epsilon = kBatchNormEpsilon);

template <class T>
Tensor<T> batchnorm_forward(const Tensor<T>& input, std::span<const T> gamma,
                            std::span<const T> beta, BatchNormStats<T>& stats, Mode mode,
                            double momentum = kBatchNormMomentum,
                            double epsilon = kBatchNormEpsilon,
                            BatchNormCache<T>* cache = nullptr);

template <class T>
BatchNormGrads<T> batchnorm_backward(const BatchNormCache<T>& cache, const Tensor<T>& grad_out);

// ---------------------------------------------------------------------------
// PReLU

inline constexpr double kPreluInitialSlope = 0.25;

template <class T>
struct PreluCache {
    Tensor<T> input;
    std::vector<T> slope;
    bool valid = false;
};

template <class T>
struct PreluGrads {
    Tensor<T> input;
    std::vector<T> slope;
};

template <class T>
Tensor<T> prelu_forward(const Tensor<T>& input, std::span<const T> slope,
                        PreluCache<T>* cache = nullptr);

template <class T>
PreluGrads<T> prelu_backward(const PreluCache<T>& cache, const Tensor<T>& grad_out);

// ---------------------------------------------------------------------------
// Softmax and loss

/// Softmax across channels at every pixel, with max subtraction.
template <class T>
Tensor<T> softmax_channels(const Tensor<T>& logits);

template <class T>
struct LossResult {
    double loss = 0.0;
    Tensor<T> grad_logits;
};

/// Weighted cross-entropy -(1/N) sum_i w[y_i] log P_i[y_i] over all N pixels,
/// with the exact gradient with respect to the logits that produced `probs`.
template <class T>
LossResult<T> weighted_ce_loss(const Tensor<T>& probs, const LabelMap& labels,
                               const ClassWeights& weights);

// ---------------------------------------------------------------------------
// Skip connections

template <class T>
Tensor<T> add_elementwise(const Tensor<T>& a, const Tensor<T>& b);

/// Concatenate along channels, a's channels first.
template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

/// Inverse of concat_channels: the first `channels_a` channels and the rest.
template <class T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& t, int channels_a);

}  // namespace lsseg::ops
