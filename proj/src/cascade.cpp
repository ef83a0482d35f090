#include "lsseg/cascade.hpp"

#include <algorithm>
#include <utility>

namespace lsseg {

void CascadeConfig::validate() const {
    if (!(coarse_spacing.x > 0 && coarse_spacing.y > 0 && coarse_spacing.z > 0))
        throw ConfigError("cascade.coarse_spacing must be positive");
    if (window < 16 || window % 16 != 0) throw ConfigError("cascade.window must be a positive multiple of 16");
    if (window_overlap < 0 || window_overlap >= window)
        throw ConfigError("cascade.window_overlap must be in [0, window)");
    if (!(roi_margin_mm >= 0)) throw ConfigError("cascade.roi_margin_mm must be >= 0");
    if (!(lesion_prob_threshold > 0 && lesion_prob_threshold < 1))
        throw ConfigError("cascade.lesion_prob_threshold must be in (0, 1)");
    if (connectivity != 6 && connectivity != 26) throw ConfigError("cascade.connectivity must be 6 or 26");
}

// ---------------------------------------------------------------------------

ProbVolume::ProbVolume(Dims3 dims, Spacing3 spacing, int classes)
    : dims_(dims), spacing_(spacing), classes_(classes),
      data_(static_cast<std::size_t>(classes) * dims.count(), 0.0f), weight_(dims.count(), 0.0f) {
    if (classes < 2) throw UsageError("ProbVolume needs at least two classes");
}

void ProbVolume::add(std::size_t i, const float* probs, std::size_t class_stride) {
    if (finalized_) throw UsageError("ProbVolume already finalized");
    for (int c = 0; c < classes_; ++c) prob(c, i) += probs[c * class_stride];
    weight_[i] += 1.0f;
}

void ProbVolume::finalize() {
    if (finalized_) return;
    const std::size_t n = voxels();
    for (std::size_t i = 0; i < n; ++i) {
        if (weight_[i] == 0.0f) {
            prob(0, i) = 1.0f;
            for (int c = 1; c < classes_; ++c) prob(c, i) = 0.0f;
            continue;
        }
        double sum = 0.0;
        for (int c = 0; c < classes_; ++c) sum += prob(c, i);
        for (int c = 0; c < classes_; ++c) prob(c, i) = static_cast<float>(prob(c, i) / sum);
    }
    finalized_ = true;
}

Volume ProbVolume::argmax() const {
    if (!finalized_) throw UsageError("ProbVolume must be finalized before argmax");
    Volume out(dims_, spacing_, VolumeKind::Labels, ScalarType::U8);
    for (std::size_t i = 0; i < voxels(); ++i) {
        int best = 0;
        for (int c = 1; c < classes_; ++c)
            if (prob(c, i) > prob(best, i)) best = c;
        out[i] = static_cast<float>(std::min(best, kLesion));
    }
    return out;
}

Volume ProbVolume::channel(int c) const {
    if (c < 0 || c >= classes_) throw UsageError("class index out of range");
    std::vector<float> v(data_.begin() + static_cast<std::ptrdiff_t>(c * voxels()),
                         data_.begin() + static_cast<std::ptrdiff_t>((c + 1) * voxels()));
    return Volume(dims_, spacing_, VolumeKind::Intensity, ScalarType::F32, std::move(v));
}

// ---------------------------------------------------------------------------

std::vector<int> window_origins(int len, int window, int overlap) {
    if (len <= window) return {0};
    const int stride = window - overlap;
    std::vector<int> o;
    for (int p = 0;; p += stride) {
        if (p + window >= len) {
            o.push_back(len - window);
            break;
        }
        o.push_back(p);
    }
    return o;
}

Tensor<float> sliding_window_slice_inference(const Network<float>& net, const Volume& normalized, int z,
                                             int window, int overlap, const Region2D& region) {
    const NetSpec& spec = net.spec();
    const int m = spec.size_multiple();
    if (window % m != 0)
        throw ConfigError("window " + std::to_string(window) + " is not a multiple of " + std::to_string(m));
    if (region.width < 1 || region.height < 1) throw UsageError("inference region must be non-empty");
    const int C = spec.num_classes;
    auto tile_size = [&](int len) { return len <= window ? (len + m - 1) / m * m : window; };
    const int tw = tile_size(region.width);
    const int th = tile_size(region.height);
    const auto ox = window_origins(region.width, window, overlap);
    const auto oy = window_origins(region.height, window, overlap);

    Tensor<float> acc({1, C, region.height, region.width});
    std::vector<float> count(static_cast<std::size_t>(region.width) * region.height, 0.0f);
    for (int y0 : oy) {
        for (int x0 : ox) {
            const auto slab = extract_slab(normalized, z, spec.in_slices, Region2D{region.x0 + x0, region.y0 + y0, tw, th});
            const Tensor<float> p = ops::softmax_channels(net.forward(slab.slices));
            const int h = std::min(th, region.height - y0);
            const int w = std::min(tw, region.width - x0);
            for (int c = 0; c < C; ++c) {
                const float* src = p.plane(0, c);
                float* dst = acc.plane(0, c);
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x) dst[(y0 + y) * region.width + x0 + x] += src[y * tw + x];
            }
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) count[(y0 + y) * region.width + x0 + x] += 1.0f;
        }
    }
    const std::size_t plane = count.size();
    for (std::size_t i = 0; i < plane; ++i) {
        double sum = 0.0;
        for (int c = 0; c < C; ++c) sum += acc[c * plane + i];
        for (int c = 0; c < C; ++c) acc[c * plane + i] = static_cast<float>(acc[c * plane + i] / sum);
    }
    return acc;
}

Tensor<float> sliding_window_slice_inference(const Network<float>& net, const Volume& normalized, int z,
                                             int window, int overlap) {
    return sliding_window_slice_inference(net, normalized, z, window, overlap,
                                          Region2D{0, 0, normalized.dims().x, normalized.dims().y});
}

// ---------------------------------------------------------------------------

Volume segment_liver_coarse(const Network<float>& net_a, const Volume& clipped, const CascadeConfig& cfg) {
    cfg.validate();
    if (net_a.spec().num_classes != 2)
        throw ConfigError("liver model must have 2 output classes, has " + std::to_string(net_a.spec().num_classes));
    const Volume coarse = normalize_hu(resample_trilinear(clipped, cfg.coarse_spacing));
    const Dims3& d = coarse.dims();
    const std::size_t plane = static_cast<std::size_t>(d.x) * d.y;
    std::vector<std::uint8_t> liver(coarse.size(), 0);
    for (int z = 0; z < d.z; ++z) {
        const Tensor<float> p = sliding_window_slice_inference(net_a, coarse, z, cfg.window, cfg.window_overlap);
        const float* bg = p.plane(0, 0);
        const float* fg = p.plane(0, 1);
        for (std::size_t i = 0; i < plane; ++i) liver[z * plane + i] = fg[i] > bg[i];
    }
    const auto cm = connected_components_3d(liver, d, cfg.connectivity, coarse.spacing());
    if (cm.count() == 0) throw PipelineError("liver not found");
    return largest_component(cm);
}

RoiResult refine_in_roi(const Network<float>& net_b, const Volume& clipped, const Volume& coarse_liver,
                        const CascadeConfig& cfg) {
    cfg.validate();
    if (net_b.spec().num_classes != 3)
        throw ConfigError("lesion model must have 3 output classes, has " + std::to_string(net_b.spec().num_classes));
    const Volume on_grid = resample_to_grid(coarse_liver, clipped.dims(), clipped.spacing());
    bool any = false;
    for (float v : on_grid.data())
        if (v != 0.0f) {
            any = true;
            break;
        }
    if (!any) throw PipelineError("initial liver mask is empty");

    RoiResult r;
    r.roi = bounding_box(on_grid, cfg.roi_margin_mm, clipped.spacing());
    const Volume input = normalize_hu(clipped);
    const Dims3& d = clipped.dims();
    r.probs = ProbVolume(d, clipped.spacing(), 3);
    const Region2D region{r.roi.x0, r.roi.y0, r.roi.width(), r.roi.height()};
    const std::size_t rp = static_cast<std::size_t>(region.width) * region.height;
    for (int z = r.roi.z0; z <= r.roi.z1; ++z) {
        const Tensor<float> p = sliding_window_slice_inference(net_b, input, z, cfg.window, cfg.window_overlap, region);
        for (int y = 0; y < region.height; ++y)
            for (int x = 0; x < region.width; ++x)
                r.probs.add(clipped.index(region.x0 + x, region.y0 + y, z), p.data().data() + y * region.width + x, rp);
        ++r.slices_processed;
    }
    r.probs.finalize();
    return r;
}

Volume suppress_low_confidence_lesions(const Volume& lesion_mask, const ProbVolume& probs, double threshold,
                                       int connectivity) {
    if (!(threshold > 0 && threshold < 1)) throw ConfigError("lesion probability threshold must be in (0, 1)");
    if (lesion_mask.dims() != probs.dims()) throw ShapeError("lesion mask and probabilities are on different grids");
    if (probs.classes() < 3) throw UsageError("lesion suppression needs three-class probabilities");
    const auto cm = connected_components_3d(lesion_mask, connectivity);
    std::vector<float> peak(cm.count() + 1, 0.0f);
    for (std::size_t i = 0; i < cm.labels.size(); ++i)
        if (cm.labels[i]) peak[cm.labels[i]] = std::max(peak[cm.labels[i]], probs.prob(kLesion, i));
    Volume out = Volume::labels_like(lesion_mask);
    for (std::size_t i = 0; i < cm.labels.size(); ++i)
        if (cm.labels[i] && !(static_cast<double>(peak[cm.labels[i]]) < threshold)) out[i] = 1.0f;
    return out;
}

FinalMasks merge_and_finalize(const ProbVolume& probs, const CascadeConfig& cfg) {
    cfg.validate();
    const Volume labels = probs.argmax();
    Volume any = Volume::labels_like(labels);
    for (std::size_t i = 0; i < labels.size(); ++i) any[i] = labels[i] != 0.0f;
    const auto cm = connected_components_3d(any, cfg.connectivity);
    if (cm.count() == 0) throw PipelineError("liver not found");
    FinalMasks m;
    m.liver = largest_component(cm);
    Volume lesion = Volume::labels_like(labels);
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == static_cast<float>(kLesion) && m.liver[i] != 0.0f) lesion[i] = 1.0f;
    m.lesion = suppress_low_confidence_lesions(lesion, probs, cfg.lesion_prob_threshold, cfg.connectivity);
    return m;
}

Volume combine_masks(const FinalMasks& m) {
    Volume out = Volume::labels_like(m.liver);
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = m.lesion[i] != 0.0f ? kLesion : (m.liver[i] != 0.0f ? kLiver : kBackground);
    return out;
}

namespace {

template <class F>
auto stage(const char* name, F&& f) {
    return with_error_prefix(std::string("stage ") + name + ": ", std::forward<F>(f));
}

}  // namespace

CascadeResult run_cascade(const Network<float>& net_a, const Network<float>& net_b, const Volume& raw,
                          const CascadeConfig& cfg) {
    cfg.validate();
    if (raw.kind() != VolumeKind::Intensity) throw UsageError("cascade input must be an intensity volume");
    const Volume clipped = clip_hu(raw);
    const Volume coarse = stage("liver", [&] { return segment_liver_coarse(net_a, clipped, cfg); });
    RoiResult roi = stage("refine", [&] { return refine_in_roi(net_b, clipped, coarse, cfg); });
    FinalMasks m = stage("finalize", [&] { return merge_and_finalize(roi.probs, cfg); });
    return {std::move(m.liver), std::move(m.lesion), std::move(roi.probs)};
}

}  // namespace lsseg
