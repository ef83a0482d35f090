#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "lsseg/network.hpp"
#include "lsseg/volume.hpp"

namespace lsseg {

struct TrainConfig {
    double lr0 = 0.001;
    double lr_gamma = 0.9;  // per epoch
    int epochs = 50;
    double weight_decay = 0.0005;
    double momentum = 0.9;
    int batch_size = 4;
    int crop = 320;
    double flip_prob = 0.5;
    std::uint64_t seed = 0;
    ClassWeights class_weights = ClassWeights::three_class();

    void validate() const;
};

struct EpochReport {
    int epoch = 0;
    double mean_loss = 0.0;
    double lr = 0.0;
    int samples = 0;
};

/// lr0 * gamma^epoch for 0 <= epoch < epochs.
double lr_at_epoch(const TrainConfig& cfg, int epoch);

/// v = momentum * v + lr * (grad + weight_decay * value); value -= v; grads
/// are zeroed afterwards. Non-finite gradients raise TrainingError.
template <class T>
void sgd_step(std::vector<NamedParam<T>>& params, double lr, double momentum, double weight_decay);

/// Same over every parameter of `net`; also invalidates its caches.
template <class T>
void sgd_step(Network<T>& net, double lr, double momentum, double weight_decay);

/// One training volume: normalized intensities, labels in [0, num_classes),
/// and the slice positions it contributes to an epoch.
struct TrainingCase {
    Volume image;
    Volume labels;
    std::vector<int> slices;
};

struct TrainingSet {
    std::vector<TrainingCase> cases;
    int num_classes = 0;

    std::size_t positions() const;
};

struct CasePair {
    Volume image;   // raw HU
    Volume labels;  // 0 / 1 / 2
};

/// First cascade stage: resampled to `coarse_spacing`, lesion merged into
/// liver, two classes, every slice eligible.
TrainingSet make_liver_dataset(const std::vector<CasePair>& cases, const Spacing3& coarse_spacing);

/// Second stage: original resolution, three classes, only slices inside the
/// liver's z-range.
TrainingSet make_lesion_dataset(const std::vector<CasePair>& cases);

struct TrainingSample {
    Tensor<float> input;  // (1, k, crop, crop)
    LabelMap target;      // (1, crop, crop), centre slice
    int z = 0;
    int x0 = 0;
    int y0 = 0;
    bool flipped = false;
};

/// Random in-plane crop around slice z, mirrored along the width axis with
/// probability flip_prob. Throws DataError when the slice is smaller than the crop.
TrainingSample sample_training_stack(const Volume& image, const Volume& labels, int z, int crop, int slab,
                                     double flip_prob, std::mt19937_64& rng);

/// As above with a uniformly random centre slice.
TrainingSample sample_training_stack(const Volume& image, const Volume& labels, int crop, int slab,
                                     double flip_prob, std::mt19937_64& rng);

/// Mirror input and target along the width axis.
void flip_sample(TrainingSample& s);

using EpochCallback = std::function<void(const EpochReport&)>;

/// SGD over `epochs` shuffled passes of every eligible (case, slice) position.
std::vector<EpochReport> train_model(Network<float>& net, const TrainingSet& data, const TrainConfig& cfg,
                                     const EpochCallback& on_epoch = {});

/// "epoch <i> lr <lr> mean_loss <loss>"
std::string format_epoch_line(const EpochReport& r);

}  // namespace lsseg
