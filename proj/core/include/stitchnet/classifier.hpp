#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stitchnet/nn.hpp"
#include "stitchnet/volume.hpp"

namespace stitchnet {

inline constexpr std::size_t kFeatureDim = 64;

struct ClassifierConfig {
    std::size_t input_size = 256;
    double threshold = 60.0;
    std::vector<nn::LayerSpec> architecture;
    std::size_t epochs = 30;
    std::size_t batch_size = 8;
    std::uint64_t seed = 1;
    nn::AdamHyper optimizer{3e-3, 0.9, 0.999, 1e-8};

    /// Reference architecture at the default input size.
    static ClassifierConfig reference();
};

/// Score at or above the threshold is class 1.
int label_from_score(double score, double threshold);

/// conv3x3(1->4) relu pool4, conv3x3(4->6) relu pool4, conv3x3(6->4) relu pool4,
/// flatten(64), dense(64->1). 547 trainable parameters at 256x256.
std::vector<nn::LayerSpec> build_reference_architecture();

struct Example {
    nn::Tensor input; // (1, size, size)
    int label = 0;
};

nn::Tensor to_input(const Grid2D& image);

struct EpochLog {
    double loss = 0.0;
    double accuracy = 0.0;
    friend bool operator==(const EpochLog&, const EpochLog&) = default;
};

struct TrainedClassifier {
    ClassifierConfig config;
    nn::Network network;
    std::vector<EpochLog> training_log;
    IntensityRange intensity_range; // cohort normalization applied to inputs

    std::size_t param_count() const noexcept { return network.parameter_count(); }
    /// Index into ForwardCache::activations holding the 64-d representation.
    std::size_t feature_activation() const;
};

/// Builds the network for cfg and checks the 64-d penultimate and scalar-logit contract.
nn::Network make_classifier_network(const ClassifierConfig& cfg);

/// Mini-batch Adam on BCE-with-logits. Bit-reproducible for a given cfg.seed.
TrainedClassifier train(std::span<const Example> dataset, const ClassifierConfig& cfg);

struct Prediction {
    double probability = 0.5;
    double logit = 0.0;
};

Prediction predict(const TrainedClassifier& model, const nn::Tensor& x);
std::vector<double> extract_features(const TrainedClassifier& model, const nn::Tensor& x);
double accuracy(const TrainedClassifier& model, std::span<const Example> dataset);

/// Validation indices per fold. Records sharing a group id are kept in one fold;
/// classes are dealt round-robin after a seeded shuffle so folds stay stratified.
std::vector<std::vector<std::size_t>> stratified_folds(std::span<const int> labels, std::size_t k, std::uint64_t seed,
                                                       std::span<const std::string> groups = {});

struct CrossValidationReport {
    std::vector<double> fold_accuracy;
    double mean_accuracy = 0.0;
    std::vector<std::vector<std::size_t>> folds;
};

CrossValidationReport cross_validate(std::span<const Example> dataset, const ClassifierConfig& cfg, std::size_t k = 5,
                                     std::span<const std::string> groups = {});

/// Seeded stratified split into (train, test) index lists with test_count test records.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(std::span<const int> labels,
                                                                               std::size_t test_count,
                                                                               std::uint64_t seed);

// SNET checkpoint: "SNET", u32 version, u64 metadata length, JSON metadata,
// then every weight tensor as (u32 rank, u64 dims[rank], f64 values), little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<unsigned char> encode_checkpoint(const TrainedClassifier& model);
TrainedClassifier decode_checkpoint(std::span<const unsigned char> bytes);
void save_checkpoint(const TrainedClassifier& model, const std::filesystem::path& path);
TrainedClassifier load_checkpoint(const std::filesystem::path& path);

/// Human-readable layer table with per-layer shapes and parameter counts.
std::string model_summary(const TrainedClassifier& model);
std::string model_summary(const ClassifierConfig& cfg);

} // namespace stitchnet
