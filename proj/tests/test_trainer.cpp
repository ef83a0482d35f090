#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <random>

#include "lsseg/trainer.hpp"

using namespace lsseg;

namespace {

// Distance in units in the last place between two doubles of equal sign.
std::int64_t ulp_distance(double a, double b) {
    std::int64_t ia, ib;
    std::memcpy(&ia, &a, 8);
    std::memcpy(&ib, &b, 8);
    return ia > ib ? ia - ib : ib - ia;
}

NetSpec toy_spec(int classes) {
    NetSpec s;
    s.in_slices = 5;
    s.num_classes = classes;
    s.level_channels = {8, 16};
    s.encoder_convs = {2, 2};
    s.decoder_convs = {2};
    s.crop_train = 32;
    return s;
}

}  // namespace

TEST_CASE("learning-rate schedule is exactly geometric") {
    TrainConfig cfg;
    CHECK(lr_at_epoch(cfg, 0) == 0.001);
    CHECK(lr_at_epoch(cfg, 1) == doctest::Approx(0.0009).epsilon(1e-15));
    CHECK(lr_at_epoch(cfg, 10) == doctest::Approx(3.48678e-4).epsilon(1e-5));
    // oracle: repeated multiplication in extended precision
    long double acc = 0.001;
    for (int k = 0; k < 50; ++k) {
        CHECK(ulp_distance(lr_at_epoch(cfg, k), static_cast<double>(acc)) <= 1);
        acc *= static_cast<long double>(0.9);
    }
    CHECK_THROWS_AS(lr_at_epoch(cfg, 50), UsageError);
    CHECK_THROWS_AS(lr_at_epoch(cfg, -1), UsageError);
}

TEST_CASE("sgd with momentum: hand-computed updates") {
    Param<double> p(Tensor<double>({1, 1, 1, 1}, 1.0));
    std::vector<NamedParam<double>> params{{"w", &p, 1}};
    p.grad[0] = 0.5;
    sgd_step(params, 0.1, 0.9, 0.0);
    CHECK(p.momentum[0] == doctest::Approx(0.05));
    CHECK(p.value[0] == doctest::Approx(0.95));
    CHECK(p.grad[0] == 0.0);
    p.grad[0] = 0.5;
    sgd_step(params, 0.1, 0.9, 0.0);
    CHECK(p.momentum[0] == doctest::Approx(0.095));
    CHECK(p.value[0] == doctest::Approx(0.855));

    Param<double> q(Tensor<double>({1, 1, 1, 1}, 2.0));
    std::vector<NamedParam<double>> qs{{"q", &q, 1}};
    sgd_step(qs, 0.1, 0.9, 0.0005);
    CHECK(q.value[0] == doctest::Approx(2.0 - 0.1 * 0.0005 * 2.0).epsilon(1e-14));

    Param<double> z(Tensor<double>({1, 1, 2, 2}, 3.0));
    std::vector<NamedParam<double>> zs{{"z", &z, 4}};
    sgd_step(zs, 0.1, 0.9, 0.0);
    for (double v : z.value.data()) CHECK(v == 3.0);

    z.grad[2] = std::nan("");
    CHECK_THROWS_WITH_AS(sgd_step(zs, 0.1, 0.9, 0.0), doctest::Contains("'z'"), TrainingError);
}

TEST_CASE("sgd on a network invalidates caches") {
    auto net = Network<float>::build(toy_spec(2), 1);
    ActivationCache<float> cache;
    auto y = net.forward(Tensor<float>({1, 5, 32, 32}, 0.1f), ops::Mode::Train, &cache);
    sgd_step(net, 0.01, 0.9, 0.0);
    CHECK_THROWS_AS(net.backward(cache, Tensor<float>(y.shape())), UsageError);
}

TEST_CASE("training crops: determinism, flips, errors") {
    const auto ph = generate_phantom(3);
    const Volume img = normalize_hu(ph.image);
    std::mt19937_64 a(11), b(11);
    for (int i = 0; i < 20; ++i) {
        auto sa = sample_training_stack(img, ph.labels, 32, 5, 0.5, a);
        auto sb = sample_training_stack(img, ph.labels, 32, 5, 0.5, b);
        CHECK(sa.x0 == sb.x0);
        CHECK(sa.y0 == sb.y0);
        CHECK(sa.z == sb.z);
        CHECK(sa.input == sb.input);
        CHECK(sa.input.shape() == Shape4{1, 5, 32, 32});
        // target is the centre slice of the crop
        const int tx = sa.flipped ? 31 : 0;
        CHECK(sa.target.at(0, 5, tx) == static_cast<int>(ph.labels.at(sa.x0, sa.y0 + 5, sa.z)));
        CHECK(sa.input.at(0, 2, 5, tx) == img.at(sa.x0, sa.y0 + 5, sa.z));
    }

    std::mt19937_64 r(12);
    auto s = sample_training_stack(img, ph.labels, 20, 48, 5, 0.0, r);
    auto twice = s;
    flip_sample(twice);
    CHECK_FALSE(twice.input == s.input);
    flip_sample(twice);
    CHECK(twice.input == s.input);
    CHECK(twice.target.labels == s.target.labels);

    CHECK_THROWS_AS(sample_training_stack(img, ph.labels, 3, 80, 5, 0.5, r), DataError);
}

TEST_CASE("flip frequency within 3 sigma over 10000 draws") {
    Volume img(Dims3{16, 16, 3}, Spacing3{}, VolumeKind::Intensity, ScalarType::F32);
    Volume lab = Volume::labels_like(img);
    for (double p : {0.5, 0.2}) {
        std::mt19937_64 rng(13);
        int flips = 0;
        const int n = 10000;
        for (int i = 0; i < n; ++i) flips += sample_training_stack(img, lab, 1, 16, 5, p, rng).flipped;
        const double sigma = std::sqrt(n * p * (1 - p));
        CHECK(std::abs(flips - n * p) <= 3 * sigma);
    }
}

TEST_CASE("datasets follow the stage rules") {
    std::vector<CasePair> cases;
    for (int i = 0; i < 2; ++i) {
        auto ph = generate_phantom(100 + i);
        cases.push_back({ph.image, ph.labels});
    }
    const auto liver = make_liver_dataset(cases, {1, 1, 2.5});
    CHECK(liver.num_classes == 2);
    CHECK(liver.cases[0].image.spacing() == Spacing3{1, 1, 2.5});
    CHECK(liver.cases[0].image.dims() == Dims3{96, 96, 38});
    for (float v : liver.cases[0].labels.data()) CHECK(v <= 1.0f);
    for (float v : liver.cases[0].image.data()) CHECK(std::abs(v) <= 1.0f);
    CHECK(liver.positions() == 2u * 38u);

    const auto lesion = make_lesion_dataset(cases);
    CHECK(lesion.num_classes == 3);
    const auto [lo, hi] = liver_region_slices(cases[0].labels);
    CHECK(lesion.cases[0].slices.front() == lo);
    CHECK(lesion.cases[0].slices.back() == hi);
    CHECK_THROWS_AS(make_lesion_dataset({}), DataError);
}

TEST_CASE("training reduces the loss and is reproducible") {
    std::vector<CasePair> cases;
    auto ph = generate_phantom(7);
    cases.push_back({ph.image, ph.labels});
    auto data = make_lesion_dataset(cases);
    data.cases[0].slices.resize(10);
    const auto [lo, hi] = liver_region_slices(ph.labels);
    for (int i = 0; i < 10; ++i) data.cases[0].slices[i] = lo + i * (hi - lo) / 9;

    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.crop = 32;
    cfg.batch_size = 2;
    cfg.lr0 = 0.01;
    cfg.seed = 5;
    auto run = [&] {
        auto net = Network<float>::build(toy_spec(3), 1);
        std::vector<std::string> lines;
        auto reports = train_model(net, data, cfg, [&](const EpochReport& r) { lines.push_back(format_epoch_line(r)); });
        return std::tuple{std::move(net), reports, lines};
    };
    auto [net, reports, lines] = run();
    REQUIRE(reports.size() == 5);
    for (int e = 0; e < 5; ++e) {
        CHECK(reports[e].lr == lr_at_epoch(cfg, e));
        CHECK(reports[e].samples == 10);
    }
    MESSAGE("loss epoch 1 " << reports[0].mean_loss << " epoch 5 " << reports[4].mean_loss);
    CHECK(reports[4].mean_loss <= 0.7 * reports[0].mean_loss);
    CHECK(lines[1].rfind("epoch 1 lr 0.009", 0) == 0);

    auto [net2, reports2, lines2] = run();
    auto pa = net.parameters();
    auto pb = net2.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].param->value == pb[i].param->value);

    TrainConfig none = cfg;
    none.epochs = 0;
    auto fresh = Network<float>::build(toy_spec(3), 1);
    auto untouched = Network<float>::build(toy_spec(3), 1);
    CHECK(train_model(fresh, data, none).empty());
    CHECK(fresh.parameters()[0].param->value == untouched.parameters()[0].param->value);

    CHECK_THROWS_AS(train_model(fresh, data, [] {
        TrainConfig c;
        c.crop = 32;
        c.class_weights = ClassWeights::two_class();
        return c;
    }()),
                    ConfigError);
}
