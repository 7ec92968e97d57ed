#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "stitchnet/analysis.hpp"
#include "stitchnet/classifier.hpp"
#include "stitchnet/config.hpp"
#include "stitchnet/regressor.hpp"
#include "stitchnet/synthdata.hpp"

namespace stitchnet {

enum class LogLevel { Error = 0, Info = 1, Debug = 2 };

/// Reads STITCHNET_LOG (error, info, debug); defaults to info.
LogLevel log_level_from_env();
void log(LogLevel level, const std::string& message);

struct PipelineConfig {
    std::filesystem::path data_dir = "cohort";
    std::filesystem::path out_dir = "out";

    std::size_t synth_n = 200;
    std::uint64_t synth_seed = 7;

    ClassifierConfig classifier = ClassifierConfig::reference();
    std::size_t folds = 5;
    std::size_t test_count = 40;
    std::uint64_t split_seed = 7;

    RegressorConfig regressor;
    std::vector<FeatureSet> feature_sets{FeatureSet::Baseline, FeatureSet::Img, FeatureSet::Demo,
                                         FeatureSet::DemoImg, FeatureSet::DemoLesion, FeatureSet::DemoLesionImg};

    int saliency_class = 0; // 0 = below threshold, 1 = above
    ProjectionMode projection = ProjectionMode::Max;
    std::uint64_t noise_seed = 11;

    static PipelineConfig from(const KeyValueConfig& kv);
    static PipelineConfig load(const std::filesystem::path& path);
};

/// Cohort volumes turned into classifier inputs.
struct PreparedCohort {
    std::vector<SubjectRecord> records;
    std::vector<nn::Tensor> inputs;
    std::vector<int> labels;
    MosaicLayout layout;
    Dims3 dims;
    Spacing3 spacing;
    IntensityRange range;
};

/// Loads subjects.csv and every volume, validates alignment, and stitches,
/// normalizes and resizes each scan. Uses the cohort's own intensity range
/// unless one is supplied.
PreparedCohort prepare_cohort(const PipelineConfig& cfg, std::optional<IntensityRange> range = std::nullopt);

/// Stitch, normalize and resize one volume to the classifier input.
nn::Tensor prepare_input(const Volume& v, const IntensityRange& range, std::size_t input_size);

struct OutputFiles {
    std::filesystem::path checkpoint;
    std::filesystem::path cv_report;
    std::filesystem::path split;
    std::filesystem::path features;
    std::filesystem::path evaluation;
    std::filesystem::path pca;
    std::filesystem::path dcor;
    std::filesystem::path mosaics;

    std::filesystem::path saliency_prefix(int which_class) const;
};

OutputFiles output_files(const std::filesystem::path& out_dir);

struct TrainSummary {
    CrossValidationReport cv;
    double test_accuracy = 0.0;
    std::size_t param_count = 0;
};

struct SaliencySummary {
    std::size_t subjects = 0;
    std::optional<double> lesion_ratio; // mean inside lesions / mean over other brain voxels
};

struct AnalyzeSummary {
    double dcor_tissue = 0.0;
    double dcor_noise = 0.0;
    double pca_threshold_accuracy = 0.0;
};

CohortFiles cmd_synth(std::size_t n, std::uint64_t seed, const std::filesystem::path& out_dir);
std::size_t cmd_stitch(const PipelineConfig& cfg);
TrainSummary cmd_train_classifier(const PipelineConfig& cfg);
Matrix cmd_extract_features(const PipelineConfig& cfg);
std::vector<EvalReport> cmd_evaluate(const PipelineConfig& cfg);
SaliencySummary cmd_saliency(const PipelineConfig& cfg);
AnalyzeSummary cmd_analyze(const PipelineConfig& cfg);
std::string cmd_model_summary(const PipelineConfig& cfg);
Prediction cmd_predict(const PipelineConfig& cfg, const std::filesystem::path& volume_path);

/// Best single-threshold accuracy on either projection axis.
double best_threshold_accuracy(const Matrix& projections, std::span<const int> labels);

/// Mean attribution inside the lesion masks over mean attribution on other brain voxels.
/// Pools (subject, voxel) pairs: each subject contributes its own lesion and non-lesion brain voxels.
double lesion_attribution_ratio(const SaliencyVolume& v, std::span<const std::vector<std::uint8_t>> lesion_masks,
                                std::span<const std::vector<std::uint8_t>> brain_masks);

} // namespace stitchnet
