#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lsseg/ops.hpp"
#include "lsseg/tensor.hpp"

namespace lsseg {

enum class Downsample { StridedConv };

/// Declarative description of the encoder/decoder family.
///
/// Level l of the encoder works at 1/2^l of the input resolution with
/// level_channels[l] feature maps. Level 0 starts with a conv from in_slices
/// to level_channels[0]; the remaining encoder convs of every level form a
/// residual block. Deeper levels are entered through a 3x3 stride-2 conv.
/// Each decoder level upsamples with a 2x2 transposed conv, concatenates the
/// same-level encoder output and runs a residual conv block whose identity
/// branch is the upsampled tensor. A final 3x3 conv produces class logits.
struct NetSpec {
    int in_slices = 5;
    int num_classes = 3;
    std::vector<int> level_channels{64, 128, 256, 512, 512};
    std::vector<int> encoder_convs{2, 2, 3, 3, 3};
    std::vector<int> decoder_convs{3, 3, 2, 2};  // indexed by level, 0 = full resolution
    Downsample downsample = Downsample::StridedConv;
    int crop_train = 320;

    int levels() const { return static_cast<int>(level_channels.size()); }
    /// Spatial dims of every input must be a multiple of this.
    int size_multiple() const { return 1 << (levels() - 1); }

    /// Throws ConfigError naming the violated invariant.
    void validate() const;

    /// key=value lines; parse(serialize()) reproduces the spec.
    std::string serialize() const;
    static NetSpec parse(const std::string& text);

    friend bool operator==(const NetSpec&, const NetSpec&) = default;
};

/// Number of parameterized conv-type layers (convs, strided convs,
/// transposed convs and the classifier).
int weighted_layer_count(const NetSpec& spec);

/// Number of trainable scalars (weights, biases, batch-norm affine terms and
/// PReLU slopes).
std::size_t parameter_count(const NetSpec& spec);

enum class UnitKind { Conv, Down, Up, Head };

/// One weighted layer: conv (or transposed conv), then batch norm and PReLU
/// for everything except the classifier head.
template <class T>
struct ConvUnit {
    std::string name;
    UnitKind kind = UnitKind::Conv;
    int in_channels = 0;
    int out_channels = 0;
    Param<T> weight;
    Param<T> bias;
    Param<T> gamma;
    Param<T> beta;
    Param<T> slope;
    ops::BatchNormStats<T> stats;

    bool normalized() const { return kind != UnitKind::Head; }
};

template <class T>
struct NamedParam {
    std::string name;
    Param<T>* param;
    int rank;  // 4 for kernels, 1 for per-channel vectors
};

template <class T>
struct NamedStats {
    std::string name;
    std::vector<T>* values;
};

template <class T>
struct UnitCache {
    ops::ConvCache<T> conv;
    ops::TransposedConvCache<T> up;
    ops::BatchNormCache<T> bn;
    ops::PreluCache<T> prelu;
};

/// Forward activations kept for one backward pass.
template <class T>
struct ActivationCache {
    std::vector<UnitCache<T>> units;
    const void* owner = nullptr;
    std::uint64_t version = 0;
    bool valid = false;
};

template <class T>
class Network {
public:
    Network() = default;

    /// He-initialized weights (PReLU gain), zero biases, unit BN affine terms,
    /// PReLU slopes 0.25, running stats (0, 1).
    static Network build(const NetSpec& spec, std::uint64_t seed);

    const NetSpec& spec() const { return spec_; }

    /// Eval-mode forward. Safe to call concurrently on a shared network.
    Tensor<T> forward(const Tensor<T>& input) const;

    /// Train mode updates the batch-norm running statistics and, when a cache
    /// is given, records what backward needs. Eval mode ignores `cache`.
    Tensor<T> forward(const Tensor<T>& input, ops::Mode mode, ActivationCache<T>* cache = nullptr);

    /// Accumulates parameter gradients for the forward pass recorded in
    /// `cache`. The cache is consumed.
    void backward(ActivationCache<T>& cache, const Tensor<T>& grad_logits);

    /// Eval-mode encoder outputs, one per level.
    std::vector<Tensor<T>> encoder_features(const Tensor<T>& input) const;

    std::vector<NamedParam<T>> parameters();
    std::vector<NamedStats<T>> running_stats();
    std::vector<ConvUnit<T>>& units() { return units_; }
    const std::vector<ConvUnit<T>>& units() const { return units_; }

    void zero_grad();
    /// Invalidates outstanding activation caches; call after parameter updates.
    void mark_updated() { ++version_; }
    std::uint64_t version() const { return version_; }

    template <class U>
    Network<U> cast() const;

private:
    template <class U>
    friend class Network;

    Tensor<T> run(const Tensor<T>& input, ops::Mode mode, ActivationCache<T>* cache,
                  std::vector<Tensor<T>>* features);
    Tensor<T> unit_forward(int id, const Tensor<T>& x, ops::Mode mode, ActivationCache<T>* cache);
    Tensor<T> unit_backward(int id, UnitCache<T>& c, const Tensor<T>& grad, bool need_input_grad);
    void check_input(const Tensor<T>& input) const;

    NetSpec spec_;
    std::vector<ConvUnit<T>> units_;
    int first_ = -1;
    std::vector<int> down_;                  // per level, -1 at level 0
    std::vector<std::vector<int>> enc_block_;
    std::vector<int> up_;                    // per decoder level
    std::vector<std::vector<int>> dec_block_;
    int head_ = -1;
    std::uint64_t version_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr char kCheckpointMagic[] = "LSNET1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Writes spec, parameters and running statistics (float32 for Network<float>,
/// float64 for Network<double>).
template <class T>
void save_checkpoint(const Network<T>& net, const std::filesystem::path& path);

/// Reads a checkpoint; values are converted to T. Throws FormatError with the
/// byte offset of the first problem.
template <class T>
Network<T> load_checkpoint(const std::filesystem::path& path);

/// One decoded checkpoint record, exposed for inspection tools and tests.
struct CheckpointEntry {
    std::string name;
    std::uint8_t dtype = 0;  // 0 f32, 1 f64, 2 raw bytes
    std::vector<std::uint32_t> dims;
    std::vector<double> values;  // numeric payload
    std::string bytes;           // dtype 2 payload
};

std::vector<CheckpointEntry> read_checkpoint_entries(const std::filesystem::path& path);

extern template class Network<float>;
extern template class Network<double>;

}  // namespace lsseg
