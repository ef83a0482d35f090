#pragma once

#include <vector>

#include "lsseg/morpho.hpp"
#include "lsseg/network.hpp"
#include "lsseg/volume.hpp"

namespace lsseg {

struct CascadeConfig {
    Spacing3 coarse_spacing{1.0, 1.0, 2.5};
    int window = 480;
    int window_overlap = 32;
    double roi_margin_mm = 10.0;
    double lesion_prob_threshold = 0.80;
    int connectivity = 26;

    void validate() const;
};

/// Per-voxel class probabilities on a volume grid, accumulated from
/// overlapping predictions and averaged by finalize().
class ProbVolume {
public:
    ProbVolume() = default;
    ProbVolume(Dims3 dims, Spacing3 spacing, int classes);

    const Dims3& dims() const { return dims_; }
    const Spacing3& spacing() const { return spacing_; }
    int classes() const { return classes_; }
    std::size_t voxels() const { return dims_.count(); }
    bool finalized() const { return finalized_; }

    /// Adds one prediction for voxel i with unit weight.
    void add(std::size_t i, const float* probs, std::size_t class_stride);

    /// Divides by the accumulated weight and renormalizes each voxel to sum to
    /// one. Voxels that received nothing become background with probability 1.
    void finalize();

    float prob(int c, std::size_t i) const { return data_[static_cast<std::size_t>(c) * voxels() + i]; }
    float& prob(int c, std::size_t i) { return data_[static_cast<std::size_t>(c) * voxels() + i]; }
    float weight(std::size_t i) const { return weight_[i]; }

    /// Most probable class per voxel (ties go to the lower class) as a label volume.
    Volume argmax() const;

    /// Probability of class c as an f32 intensity volume.
    Volume channel(int c) const;

private:
    Dims3 dims_{};
    Spacing3 spacing_{};
    int classes_ = 0;
    std::vector<float> data_;    // class-major
    std::vector<float> weight_;
    bool finalized_ = false;
};

/// Window origins along one axis of length `len`. A single origin when the
/// axis fits in one window; otherwise stride window-overlap with the last
/// window aligned to the end.
std::vector<int> window_origins(int len, int window, int overlap);

/// Softmax probabilities (1, C, region.height, region.width) for slice z of
/// a normalized volume. Windows overlapping a pixel are averaged uniformly.
/// Regions smaller than the window use one window padded to the network's
/// size multiple (edge-replicated beyond the volume).
Tensor<float> sliding_window_slice_inference(const Network<float>& net, const Volume& normalized, int z,
                                             int window, int overlap, const Region2D& region);
Tensor<float> sliding_window_slice_inference(const Network<float>& net, const Volume& normalized, int z,
                                             int window, int overlap);

/// First stage: liver mask (0/1) on the coarse grid, largest component only.
Volume segment_liver_coarse(const Network<float>& net_a, const Volume& clipped, const CascadeConfig& cfg);

struct RoiResult {
    ProbVolume probs;  // 3 classes, original grid, finalized
    Box3 roi;
    int slices_processed = 0;
};

/// Second stage: three-class probabilities inside the coarse liver's box
/// (plus margin) on the original grid; background elsewhere.
RoiResult refine_in_roi(const Network<float>& net_b, const Volume& clipped, const Volume& coarse_liver,
                        const CascadeConfig& cfg);

/// Removes every lesion component whose maximal lesion probability is below
/// `threshold`.
Volume suppress_low_confidence_lesions(const Volume& lesion_mask, const ProbVolume& probs, double threshold,
                                       int connectivity = 26);

struct FinalMasks {
    Volume liver;   // 0/1, includes lesion voxels
    Volume lesion;  // 0/1, subset of liver
};

FinalMasks merge_and_finalize(const ProbVolume& probs, const CascadeConfig& cfg);

/// 0 background, 1 liver, 2 lesion.
Volume combine_masks(const FinalMasks& m);

struct CascadeResult {
    Volume liver;
    Volume lesion;
    ProbVolume probs;
};

/// clip -> coarse liver -> ROI refinement -> merge and suppression. Errors
/// are re-raised with the failing stage's name.
CascadeResult run_cascade(const Network<float>& net_a, const Network<float>& net_b, const Volume& raw,
                          const CascadeConfig& cfg);

}  // namespace lsseg
