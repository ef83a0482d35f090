#include "lsseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace lsseg {

void TrainConfig::validate() const {
    if (!(lr0 > 0)) throw ConfigError("train.lr0 must be > 0");
    if (!(lr_gamma > 0)) throw ConfigError("train.lr_gamma must be > 0");
    if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
    if (!(weight_decay >= 0)) throw ConfigError("train.weight_decay must be >= 0");
    if (!(momentum >= 0 && momentum < 1)) throw ConfigError("train.momentum must be in [0, 1)");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (crop < 16 || crop % 16 != 0) throw ConfigError("train.crop must be a positive multiple of 16");
    if (!(flip_prob >= 0 && flip_prob <= 1)) throw ConfigError("train.flip_prob must be in [0, 1]");
    if (class_weights.size() == 0) throw ConfigError("train.class_weights must not be empty");
}

double lr_at_epoch(const TrainConfig& cfg, int epoch) {
    if (epoch < 0 || epoch >= cfg.epochs)
        throw UsageError("epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(cfg.epochs) + ")");
    // extended precision keeps the result within one ulp of lr0 * gamma^epoch
    const long double v = static_cast<long double>(cfg.lr0) * std::pow(static_cast<long double>(cfg.lr_gamma), epoch);
    return static_cast<double>(v);
}

template <class T>
void sgd_step(std::vector<NamedParam<T>>& params, double lr, double momentum, double weight_decay) {
    for (auto& p : params) {
        for (T g : p.param->grad.data())
            if (!std::isfinite(g)) throw TrainingError("non-finite gradient in parameter '" + p.name + "'");
    }
    const T m = static_cast<T>(momentum);
    const T a = static_cast<T>(lr);
    const T wd = static_cast<T>(weight_decay);
    for (auto& p : params) {
        auto w = p.param->value.data();
        auto g = p.param->grad.data();
        auto v = p.param->momentum.data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            v[i] = m * v[i] + a * (g[i] + wd * w[i]);
            w[i] -= v[i];
        }
        p.param->zero_grad();
    }
}

template <class T>
void sgd_step(Network<T>& net, double lr, double momentum, double weight_decay) {
    auto params = net.parameters();
    sgd_step(params, lr, momentum, weight_decay);
    net.mark_updated();
}

template void sgd_step(std::vector<NamedParam<float>>&, double, double, double);
template void sgd_step(std::vector<NamedParam<double>>&, double, double, double);
template void sgd_step(Network<float>&, double, double, double);
template void sgd_step(Network<double>&, double, double, double);

// ---------------------------------------------------------------------------

std::size_t TrainingSet::positions() const {
    std::size_t n = 0;
    for (const auto& c : cases) n += c.slices.size();
    return n;
}

namespace {

void check_pair(const CasePair& c, std::size_t i) {
    if (c.image.kind() != VolumeKind::Intensity || c.labels.kind() != VolumeKind::Labels)
        throw DataError("training case " + std::to_string(i) + ": expected an intensity and a label volume");
    if (!c.image.same_grid(c.labels))
        throw DataError("training case " + std::to_string(i) + ": image and labels are on different grids");
}

}  // namespace

TrainingSet make_liver_dataset(const std::vector<CasePair>& cases, const Spacing3& coarse_spacing) {
    TrainingSet set;
    set.num_classes = 2;
    for (std::size_t i = 0; i < cases.size(); ++i) {
        check_pair(cases[i], i);
        TrainingCase tc;
        tc.image = normalize_hu(resample_trilinear(clip_hu(cases[i].image), coarse_spacing));
        tc.labels = resample_trilinear(merge_labels(cases[i].labels), coarse_spacing);
        tc.slices.resize(tc.image.dims().z);
        for (int z = 0; z < tc.image.dims().z; ++z) tc.slices[z] = z;
        set.cases.push_back(std::move(tc));
    }
    if (set.positions() == 0) throw DataError("liver training set is empty");
    return set;
}

TrainingSet make_lesion_dataset(const std::vector<CasePair>& cases) {
    TrainingSet set;
    set.num_classes = 3;
    for (std::size_t i = 0; i < cases.size(); ++i) {
        check_pair(cases[i], i);
        TrainingCase tc;
        tc.image = normalize_hu(cases[i].image);
        tc.labels = cases[i].labels;
        const auto [lo, hi] = liver_region_slices(tc.labels);
        for (int z = lo; z <= hi; ++z) tc.slices.push_back(z);
        set.cases.push_back(std::move(tc));
    }
    if (set.positions() == 0) throw DataError("lesion training set is empty");
    return set;
}

void flip_sample(TrainingSample& s) {
    const Shape4 sh = s.input.shape();
    for (int c = 0; c < sh.c; ++c) {
        float* p = s.input.plane(0, c);
        for (int y = 0; y < sh.h; ++y) std::reverse(p + y * sh.w, p + (y + 1) * sh.w);
    }
    for (int y = 0; y < s.target.h; ++y) {
        auto row = s.target.labels.begin() + static_cast<std::ptrdiff_t>(y) * s.target.w;
        std::reverse(row, row + s.target.w);
    }
    s.flipped = !s.flipped;
}

TrainingSample sample_training_stack(const Volume& image, const Volume& labels, int z, int crop, int slab,
                                     double flip_prob, std::mt19937_64& rng) {
    const Dims3& d = image.dims();
    if (!image.same_grid(labels)) throw DataError("training image and labels are on different grids");
    if (d.x < crop || d.y < crop)
        throw DataError("slice " + std::to_string(d.x) + "x" + std::to_string(d.y) + " is smaller than crop " +
                        std::to_string(crop));
    TrainingSample s;
    s.z = z;
    s.x0 = std::uniform_int_distribution<int>(0, d.x - crop)(rng);
    s.y0 = std::uniform_int_distribution<int>(0, d.y - crop)(rng);
    s.input = extract_slab(image, z, slab, Region2D{s.x0, s.y0, crop, crop}).slices;
    s.target = LabelMap(1, crop, crop);
    for (int y = 0; y < crop; ++y)
        for (int x = 0; x < crop; ++x)
            s.target.at(0, y, x) = static_cast<std::int32_t>(labels.at(s.x0 + x, s.y0 + y, z));
    if (std::bernoulli_distribution(flip_prob)(rng)) flip_sample(s);
    return s;
}

TrainingSample sample_training_stack(const Volume& image, const Volume& labels, int crop, int slab,
                                     double flip_prob, std::mt19937_64& rng) {
    if (image.dims().z < 1) throw DataError("empty training volume");
    const int z = std::uniform_int_distribution<int>(0, image.dims().z - 1)(rng);
    return sample_training_stack(image, labels, z, crop, slab, flip_prob, rng);
}

std::string format_epoch_line(const EpochReport& r) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "epoch %d lr %.6g mean_loss %.6f", r.epoch, r.lr, r.mean_loss);
    return buf;
}

std::vector<EpochReport> train_model(Network<float>& net, const TrainingSet& data, const TrainConfig& cfg,
                                     const EpochCallback& on_epoch) {
    cfg.validate();
    const NetSpec& spec = net.spec();
    if (data.num_classes != spec.num_classes)
        throw ConfigError("dataset has " + std::to_string(data.num_classes) + " classes but the network outputs " +
                          std::to_string(spec.num_classes));
    if (cfg.class_weights.size() != static_cast<std::size_t>(spec.num_classes))
        throw ConfigError("train.class_weights has " + std::to_string(cfg.class_weights.size()) +
                          " entries, network has " + std::to_string(spec.num_classes) + " classes");
    if (cfg.crop % spec.size_multiple() != 0)
        throw ConfigError("train.crop must be a multiple of " + std::to_string(spec.size_multiple()));
    std::vector<EpochReport> reports;
    if (cfg.epochs == 0) return reports;
    if (data.positions() == 0) throw DataError("training set is empty");

    std::vector<std::pair<int, int>> positions;
    for (std::size_t c = 0; c < data.cases.size(); ++c)
        for (int z : data.cases[c].slices) positions.emplace_back(static_cast<int>(c), z);

    std::mt19937_64 rng(cfg.seed);
    const int k = spec.in_slices;
    const int crop = cfg.crop;
    const std::size_t plane = static_cast<std::size_t>(crop) * crop;
    ActivationCache<float> cache;
    net.zero_grad();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at_epoch(cfg, epoch);
        std::shuffle(positions.begin(), positions.end(), rng);
        double loss_sum = 0.0;
        int step = 0;
        for (std::size_t start = 0; start < positions.size(); start += cfg.batch_size, ++step) {
            const int b = static_cast<int>(std::min<std::size_t>(cfg.batch_size, positions.size() - start));
            Tensor<float> input({b, k, crop, crop});
            LabelMap target(b, crop, crop);
            for (int i = 0; i < b; ++i) {
                const auto [c, z] = positions[start + i];
                const TrainingCase& tc = data.cases[c];
                const TrainingSample s = sample_training_stack(tc.image, tc.labels, z, crop, k, cfg.flip_prob, rng);
                std::copy(s.input.data().begin(), s.input.data().end(), input.plane(i, 0));
                std::copy(s.target.labels.begin(), s.target.labels.end(), target.labels.begin() + i * plane);
            }
            const Tensor<float> logits = net.forward(input, ops::Mode::Train, &cache);
            const auto loss = ops::weighted_ce_loss(ops::softmax_channels(logits), target, cfg.class_weights);
            if (!std::isfinite(loss.loss))
                throw TrainingError("training diverged: non-finite loss at epoch " + std::to_string(epoch) + " step " +
                                    std::to_string(step));
            net.backward(cache, loss.grad_logits);
            try {
                sgd_step(net, lr, cfg.momentum, cfg.weight_decay);
            } catch (const TrainingError& e) {
                throw TrainingError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + " step " +
                                    std::to_string(step));
            }
            loss_sum += loss.loss * b;
        }
        EpochReport r;
        r.epoch = epoch;
        r.lr = lr;
        r.samples = static_cast<int>(positions.size());
        r.mean_loss = loss_sum / r.samples;
        if (!std::isfinite(r.mean_loss))
            throw TrainingError("training diverged: mean loss is not finite at epoch " + std::to_string(epoch));
        reports.push_back(r);
        if (on_epoch) on_epoch(r);
    }
    return reports;
}

}  // namespace lsseg
