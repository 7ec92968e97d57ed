#include "stitchnet/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "stitchnet/errors.hpp"

namespace stitchnet {

namespace {

std::vector<std::size_t> shuffled_indices(std::size_t n, std::mt19937_64& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    return idx;
}

std::size_t find_feature_layer(const std::vector<nn::LayerSpec>& layers) {
    for (std::size_t i = layers.size(); i-- > 0;)
        if (std::holds_alternative<nn::Flatten>(layers[i])) return i;
    throw DataError("classifier architecture has no flatten layer");
}

} // namespace

ClassifierConfig ClassifierConfig::reference() {
    ClassifierConfig cfg;
    cfg.architecture = build_reference_architecture();
    return cfg;
}

int label_from_score(double score, double threshold) {
    if (!std::isfinite(score)) throw DataError("label_from_score: non-finite score");
    return score >= threshold ? 1 : 0;
}

std::vector<nn::LayerSpec> build_reference_architecture() {
    using namespace nn;
    return {
        Conv2d{1, 4, 3, 1, 1}, Relu{}, MaxPool{4, 4},
        Conv2d{4, 6, 3, 1, 1}, Relu{}, MaxPool{4, 4},
        Conv2d{6, 4, 3, 1, 1}, Relu{}, MaxPool{4, 4},
        Flatten{}, Dense{kFeatureDim, 1},
    };
}

nn::Tensor to_input(const Grid2D& image) { return nn::Tensor({1, image.rows, image.cols}, image.data); }

std::size_t TrainedClassifier::feature_activation() const { return find_feature_layer(network.layers()) + 1; }

nn::Network make_classifier_network(const ClassifierConfig& cfg) {
    auto layers = cfg.architecture.empty() ? build_reference_architecture() : cfg.architecture;
    nn::Network net({1, cfg.input_size, cfg.input_size}, layers);
    const auto feature_layer = find_feature_layer(net.layers());
    const auto& feature_shape = net.layer_output_shape(feature_layer);
    if (nn::shape_size(feature_shape) != kFeatureDim)
        throw DataError(fmt::format("classifier penultimate representation has {} dimensions, expected {}",
                                    nn::shape_size(feature_shape), kFeatureDim));
    if (net.output_shape() != nn::Shape{1})
        throw DataError(fmt::format("classifier output must be a single logit, got {}", nn::to_string(net.output_shape())));
    if (net.parameter_count() > 1000)
        throw DataError(fmt::format("classifier has {} parameters; the budget is 1000", net.parameter_count()));
    return net;
}

TrainedClassifier train(std::span<const Example> dataset, const ClassifierConfig& cfg) {
    std::size_t counts[2] = {0, 0};
    for (const auto& ex : dataset) {
        if (ex.label != 0 && ex.label != 1) throw DataError("training labels must be 0 or 1");
        ++counts[ex.label];
    }
    if (counts[0] < 2 || counts[1] < 2)
        throw DataError(fmt::format("training needs at least 2 examples per class (have {} / {})", counts[0], counts[1]));
    if (cfg.batch_size < 1) throw UsageError("batch_size must be >= 1");

    TrainedClassifier model;
    model.config = cfg;
    if (model.config.architecture.empty()) model.config.architecture = build_reference_architecture();
    model.network = make_classifier_network(model.config);
    model.network.initialize(cfg.seed);

    auto& net = model.network;
    auto adam = nn::AdamState::for_params(net.parameters(), cfg.optimizer);
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

    nn::Workspace ws;
    std::vector<nn::Tensor> batch_grads;
    nn::Tensor output_grad({1});
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto order = shuffled_indices(dataset.size(), rng);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const auto stop = std::min(order.size(), start + cfg.batch_size);
            // accumulate in batch order so the reduction is reproducible
            for (std::size_t b = start; b < stop; ++b) {
                const auto& ex = dataset[order[b]];
                const double logit = net.forward(ex.input, ws).data[0];
                const auto l = nn::bce_with_logits(logit, ex.label);
                if (!std::isfinite(l.loss))
                    throw NumericError(fmt::format("non-finite loss in epoch {} (logit {})", epoch, logit));
                loss_sum += l.loss;
                if ((logit >= 0.0 ? 1 : 0) == ex.label) ++correct;
                output_grad.data[0] = l.grad;
                const auto& g = net.backward(ws, output_grad, false);
                if (b == start) {
                    batch_grads = g.params;
                } else {
                    for (std::size_t p = 0; p < batch_grads.size(); ++p)
                        for (std::size_t j = 0; j < batch_grads[p].size(); ++j)
                            batch_grads[p].data[j] += g.params[p].data[j];
                }
            }
            const double scale = 1.0 / static_cast<double>(stop - start);
            for (auto& g : batch_grads)
                for (auto& v : g.data) v *= scale;
            nn::adam_step(net.parameters(), batch_grads, adam);
        }
        model.training_log.push_back({loss_sum / static_cast<double>(dataset.size()),
                                      static_cast<double>(correct) / static_cast<double>(dataset.size())});
    }
    return model;
}

Prediction predict(const TrainedClassifier& model, const nn::Tensor& x) {
    const double logit = model.network.infer(x).data.at(0);
    return {nn::sigmoid(logit), logit};
}

std::vector<double> extract_features(const TrainedClassifier& model, const nn::Tensor& x) {
    auto fwd = model.network.forward(x);
    return std::move(fwd.cache.activations.at(model.feature_activation()).data);
}

double accuracy(const TrainedClassifier& model, std::span<const Example> dataset) {
    if (dataset.empty()) return 0.0;
    std::size_t correct = 0;
    for (const auto& ex : dataset)
        if ((predict(model, ex.input).logit >= 0.0 ? 1 : 0) == ex.label) ++correct;
    return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

std::vector<std::vector<std::size_t>> stratified_folds(std::span<const int> labels, std::size_t k, std::uint64_t seed,
                                                       std::span<const std::string> groups) {
    if (k < 2) throw UsageError("cross-validation needs k >= 2");
    if (!groups.empty() && groups.size() != labels.size()) throw DataError("group ids must match labels in length");

    // units are groups of records that must share a fold; without group ids each record is its own unit
    std::vector<std::vector<std::size_t>> units;
    std::vector<int> unit_label;
    if (groups.empty()) {
        for (std::size_t i = 0; i < labels.size(); ++i) {
            units.push_back({i});
            unit_label.push_back(labels[i]);
        }
    } else {
        std::map<std::string, std::size_t> unit_of;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            auto [it, inserted] = unit_of.try_emplace(groups[i], units.size());
            if (inserted) {
                units.emplace_back();
                unit_label.push_back(labels[i]);
            }
            units[it->second].push_back(i);
        }
    }

    std::mt19937_64 rng(seed);
    std::vector<std::size_t> dealt;
    for (int cls : {0, 1}) {
        std::vector<std::size_t> members;
        for (std::size_t u = 0; u < units.size(); ++u)
            if (unit_label[u] == cls) members.push_back(u);
        if (members.size() < k)
            throw DataError(fmt::format("class {} has {} subjects; {}-fold cross-validation needs at least {}", cls,
                                        members.size(), k, k));
        std::shuffle(members.begin(), members.end(), rng);
        dealt.insert(dealt.end(), members.begin(), members.end());
    }

    std::vector<std::vector<std::size_t>> folds(k);
    for (std::size_t i = 0; i < dealt.size(); ++i)
        for (auto record : units[dealt[i]]) folds[i % k].push_back(record);
    for (auto& f : folds) std::sort(f.begin(), f.end());
    return folds;
}

CrossValidationReport cross_validate(std::span<const Example> dataset, const ClassifierConfig& cfg, std::size_t k,
                                     std::span<const std::string> groups) {
    std::vector<int> labels;
    labels.reserve(dataset.size());
    for (const auto& ex : dataset) labels.push_back(ex.label);

    CrossValidationReport report;
    report.folds = stratified_folds(labels, k, cfg.seed, groups);
    for (const auto& fold : report.folds) {
        std::vector<bool> held(dataset.size(), false);
        for (auto i : fold) held[i] = true;
        std::vector<Example> train_set, valid_set;
        for (std::size_t i = 0; i < dataset.size(); ++i) (held[i] ? valid_set : train_set).push_back(dataset[i]);
        const auto model = train(train_set, cfg);
        report.fold_accuracy.push_back(accuracy(model, valid_set));
    }
    report.mean_accuracy = std::accumulate(report.fold_accuracy.begin(), report.fold_accuracy.end(), 0.0) /
                           static_cast<double>(report.fold_accuracy.size());
    return report;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(std::span<const int> labels,
                                                                               std::size_t test_count,
                                                                               std::uint64_t seed) {
    if (test_count >= labels.size()) throw DataError("test split must leave training records");
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> by_class[2];
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i] != 0 ? 1 : 0].push_back(i);
    for (auto& members : by_class) std::shuffle(members.begin(), members.end(), rng);

    // proportional allocation, remainder to the larger class
    const auto n = static_cast<double>(labels.size());
    auto test1 = static_cast<std::size_t>(std::llround(static_cast<double>(test_count) *
                                                       static_cast<double>(by_class[1].size()) / n));
    test1 = std::min(test1, by_class[1].size());
    const auto test0 = std::min(test_count - test1, by_class[0].size());

    std::vector<std::size_t> train_idx, test_idx;
    for (int cls : {0, 1}) {
        const auto take = cls == 0 ? test0 : test1;
        for (std::size_t j = 0; j < by_class[cls].size(); ++j)
            (j < take ? test_idx : train_idx).push_back(by_class[cls][j]);
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(test_idx.begin(), test_idx.end());
    return {train_idx, test_idx};
}

std::string model_summary(const ClassifierConfig& cfg) {
    const auto net = make_classifier_network(cfg);
    std::string out = fmt::format("{:<4} {:<8} {:<14} {:>8}\n", "#", "layer", "output", "params");
    out += fmt::format("{:<4} {:<8} {:<14} {:>8}\n", "-", "input", nn::to_string(net.input_shape()), 0);
    std::size_t p = 0;
    for (std::size_t i = 0; i < net.layers().size(); ++i) {
        std::size_t count = 0;
        const auto& layer = net.layers()[i];
        if (std::holds_alternative<nn::Conv2d>(layer) || std::holds_alternative<nn::Dense>(layer)) {
            count = net.parameters()[p].size() + net.parameters()[p + 1].size();
            p += 2;
        }
        out += fmt::format("{:<4} {:<8} {:<14} {:>8}\n", i, nn::kind_name(layer), nn::to_string(net.layer_output_shape(i)),
                           count);
    }
    out += fmt::format("trainable parameters: {}\n", net.parameter_count());
    out += fmt::format("feature dimension: {}\n", kFeatureDim);
    return out;
}

std::string model_summary(const TrainedClassifier& model) { return model_summary(model.config); }

} // namespace stitchnet
