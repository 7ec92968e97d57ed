#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

#include "doctest.h"
#include "stitchnet/classifier.hpp"
#include "stitchnet/errors.hpp"
#include "support.hpp"

using namespace stitchnet;

namespace {

// 16x16 input -> 64-d flatten, same contract as the reference network at small scale.
ClassifierConfig small_config() {
    using namespace nn;
    ClassifierConfig cfg;
    cfg.input_size = 16;
    cfg.architecture = {Conv2d{1, 4, 3, 1, 1}, Relu{}, MaxPool{2, 2}, Conv2d{4, 4, 3, 1, 1}, Relu{},
                        MaxPool{2, 2}, Flatten{}, Dense{kFeatureDim, 1}};
    cfg.epochs = 50;
    cfg.batch_size = 4;
    cfg.seed = 3;
    cfg.optimizer.lr = 1e-2;
    return cfg;
}

std::vector<Example> bright_dark(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> jitter(-0.1, 0.1);
    std::vector<Example> out;
    for (std::size_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(i % 2);
        nn::Tensor x({1, 16, 16});
        for (auto& v : x.data) v = (label ? 0.8 : 0.2) + jitter(rng);
        out.push_back({std::move(x), label});
    }
    return out;
}

std::vector<Example> noise_with_random_labels(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % 2);
    std::shuffle(labels.begin(), labels.end(), rng);
    std::vector<Example> out;
    for (std::size_t i = 0; i < n; ++i) {
        nn::Tensor x({1, 16, 16});
        for (auto& v : x.data) v = u(rng);
        out.push_back({std::move(x), labels[i]});
    }
    return out;
}

} // namespace

TEST_SUITE("classifier") {
    TEST_CASE("label rule with the tie labelled above") {
        CHECK(label_from_score(61, 60) == 1);
        CHECK(label_from_score(59, 60) == 0);
        CHECK(label_from_score(60, 60) == 1);
        CHECK_THROWS_AS(label_from_score(std::nan(""), 60), DataError);
        int prev = 0;
        for (double s = 39.0; s <= 75.0; s += 0.25) {
            const int l = label_from_score(s, 60);
            CHECK(l >= prev);
            prev = l;
        }
    }

    TEST_CASE("reference architecture shape and parameter budget") {
        const auto cfg = ClassifierConfig::reference();
        const auto net = make_classifier_network(cfg);
        std::size_t expected = 0;
        std::vector<std::size_t> per_layer;
        for (const auto& layer : net.layers()) {
            if (const auto* c = std::get_if<nn::Conv2d>(&layer))
                per_layer.push_back(c->out_channels * c->in_channels * c->kernel * c->kernel + c->out_channels);
            else if (const auto* d = std::get_if<nn::Dense>(&layer))
                per_layer.push_back(d->out_features * d->in_features + d->out_features);
        }
        for (auto p : per_layer) expected += p;
        CHECK(per_layer == std::vector<std::size_t>{40, 222, 220, 65});
        CHECK(expected == 547);
        CHECK(net.parameter_count() == 547);
        CHECK(net.input_shape() == nn::Shape{1, 256, 256});
        CHECK(net.layer_output_shape(9) == nn::Shape{64});
        CHECK(net.output_shape() == nn::Shape{1});
        CHECK(model_summary(cfg).find("trainable parameters: 547") != std::string::npos);
    }

    TEST_CASE("architectures violating the contract are rejected") {
        auto cfg = small_config();
        cfg.architecture.back() = nn::Dense{kFeatureDim, 2};
        CHECK_THROWS_WITH_AS(make_classifier_network(cfg), doctest::Contains("single logit"), DataError);
        cfg = small_config();
        cfg.input_size = 20;
        CHECK_THROWS_AS(make_classifier_network(cfg), DataError);
        cfg = small_config();
        cfg.architecture.erase(cfg.architecture.end() - 2);
        CHECK_THROWS_AS(make_classifier_network(cfg), DataError);
    }

    TEST_CASE("separable toy set is learned") {
        const auto data = bright_dark(20, 1);
        const auto model = train(data, small_config());
        CHECK(accuracy(model, data) == 1.0);
        CHECK(model.training_log.size() == 50);
        CHECK(model.param_count() == model.network.parameter_count());
    }

    TEST_CASE("training is bit-reproducible per seed") {
        const auto data = bright_dark(12, 2);
        auto cfg = small_config();
        cfg.epochs = 5;
        const auto a = train(data, cfg);
        const auto b = train(data, cfg);
        CHECK(a.network.parameters() == b.network.parameters());
        CHECK(a.training_log == b.training_log);
        cfg.seed = 4;
        CHECK(train(data, cfg).network.parameters() != a.network.parameters());
    }

    TEST_CASE("training preconditions") {
        auto data = bright_dark(6, 3);
        for (auto& ex : data) ex.label = 1;
        CHECK_THROWS_WITH_AS(train(data, small_config()), doctest::Contains("2 examples per class"), DataError);
    }

    TEST_CASE("prediction and feature extraction") {
        auto cfg = small_config();
        cfg.epochs = 2;
        const auto data = bright_dark(8, 4);
        const auto model = train(data, cfg);
        for (const auto& ex : data) {
            const auto p = predict(model, ex.input);
            CHECK(p.probability == nn::sigmoid(p.logit));
            CHECK(p.probability > 0.0);
            CHECK(p.probability < 1.0);
            const auto again = predict(model, ex.input);
            CHECK(again.logit == p.logit);

            const auto f = extract_features(model, ex.input);
            CHECK(f.size() == kFeatureDim);
            const auto fwd = model.network.forward(ex.input);
            CHECK(f == fwd.cache.activations[model.feature_activation()].data);
        }
        const nn::Tensor zeros({1, 16, 16});
        CHECK(extract_features(model, zeros) == extract_features(model, zeros));
        CHECK_THROWS_AS(predict(model, nn::Tensor({1, 8, 8})), DataError);

        const auto a = predict(model, data[0].input), b = predict(model, data[1].input);
        if (a.logit != b.logit) CHECK(extract_features(model, data[0].input) != extract_features(model, data[1].input));
    }

    TEST_CASE("a zero-logit network predicts one half") {
        auto cfg = small_config();
        TrainedClassifier model{cfg, make_classifier_network(cfg), {}, {}};
        for (auto& p : model.network.parameters()) std::fill(p.data.begin(), p.data.end(), 0.0);
        CHECK(predict(model, nn::Tensor({1, 16, 16}, 0.3)).probability == 0.5);
    }

    TEST_CASE("stratified folds partition the records") {
        std::vector<int> labels(100);
        for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i < 40 ? 1 : 0;
        const auto folds = stratified_folds(labels, 5, 9);
        REQUIRE(folds.size() == 5);
        std::set<std::size_t> seen;
        for (const auto& f : folds) {
            CHECK(f.size() == 20);
            std::size_t ones = 0;
            for (auto i : f) {
                CHECK(seen.insert(i).second);
                ones += labels[i];
            }
            CHECK(ones >= 7);
            CHECK(ones <= 9);
        }
        CHECK(seen.size() == 100);
        CHECK(stratified_folds(labels, 5, 9) == folds);
    }

    TEST_CASE("grouped records share a fold") {
        std::vector<int> labels;
        std::vector<std::string> groups;
        for (std::size_t s = 0; s < 30; ++s)
            for (std::size_t visit = 0; visit < 1 + s % 3; ++visit) {
                labels.push_back(static_cast<int>(s % 2));
                groups.push_back("sub-" + std::to_string(s));
            }
        const auto folds = stratified_folds(labels, 5, 1, groups);
        std::map<std::string, std::size_t> fold_of;
        for (std::size_t f = 0; f < folds.size(); ++f)
            for (auto i : folds[f]) {
                auto [it, inserted] = fold_of.try_emplace(groups[i], f);
                CHECK(it->second == f);
            }
        CHECK(fold_of.size() == 30);
    }

    TEST_CASE("folds need enough records per class") {
        const std::vector<int> labels{0, 0, 0, 0, 0, 0, 1, 1, 1};
        CHECK_THROWS_WITH_AS(stratified_folds(labels, 5, 1), doctest::Contains("class 1"), DataError);
    }

    TEST_CASE("stratified split keeps proportions") {
        std::vector<int> labels(200);
        for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 2);
        const auto [train_idx, test_idx] = stratified_split(labels, 40, 7);
        CHECK(test_idx.size() == 40);
        CHECK(train_idx.size() == 160);
        std::size_t ones = 0;
        for (auto i : test_idx) ones += labels[i];
        CHECK(ones == 20);
        std::set<std::size_t> all(train_idx.begin(), train_idx.end());
        all.insert(test_idx.begin(), test_idx.end());
        CHECK(all.size() == 200);
    }

    TEST_CASE("cross-validation on separable data is perfect") {
        auto cfg = small_config();
        cfg.epochs = 30;
        const auto report = cross_validate(bright_dark(30, 5), cfg, 5);
        CHECK(report.fold_accuracy.size() == 5);
        CHECK(report.mean_accuracy == 1.0);
    }

    TEST_CASE("cross-validation on shuffled labels is near chance") {
        auto cfg = small_config();
        cfg.epochs = 10;
        const auto report = cross_validate(noise_with_random_labels(100, 6), cfg, 5);
        CHECK(report.mean_accuracy == doctest::Approx(0.5).epsilon(0.2));
    }

    TEST_CASE("checkpoint round trip is byte exact") {
        auto cfg = small_config();
        cfg.epochs = 3;
        const auto data = bright_dark(8, 7);
        auto model = train(data, cfg);
        model.intensity_range = {-0.5, 2.25};
        const auto bytes = encode_checkpoint(model);
        REQUIRE(bytes.size() > 16);
        CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "SNET");

        const auto back = decode_checkpoint(bytes);
        CHECK(encode_checkpoint(back) == bytes);
        CHECK(back.network.parameters() == model.network.parameters());
        CHECK(back.training_log == model.training_log);
        CHECK(back.intensity_range.min == -0.5);
        CHECK(back.intensity_range.max == 2.25);
        for (const auto& ex : data) CHECK(predict(back, ex.input).logit == predict(model, ex.input).logit);

        testing::TempDir dir("ckpt");
        save_checkpoint(model, dir / "m.snet");
        CHECK(encode_checkpoint(load_checkpoint(dir / "m.snet")) == bytes);
    }

    TEST_CASE("corrupt checkpoints are rejected") {
        auto cfg = small_config();
        cfg.epochs = 1;
        const auto bytes = encode_checkpoint(train(bright_dark(8, 8), cfg));
        auto bad_magic = bytes;
        bad_magic[0] = 'X';
        CHECK_THROWS_AS(decode_checkpoint(bad_magic), DataError);
        auto bad_version = bytes;
        bad_version[4] = 9;
        CHECK_THROWS_AS(decode_checkpoint(bad_version), DataError);
        const std::vector<unsigned char> truncated(bytes.begin(), bytes.end() - 5);
        CHECK_THROWS_AS(decode_checkpoint(truncated), DataError);
        auto trailing = bytes;
        trailing.push_back(0);
        CHECK_THROWS_AS(decode_checkpoint(trailing), DataError);
        testing::TempDir dir("ckpt");
        CHECK_THROWS_AS(load_checkpoint(dir / "missing.snet"), DataError);
    }
}
