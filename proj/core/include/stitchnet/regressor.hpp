#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stitchnet/nn.hpp"

namespace stitchnet {

/// Demographic fields a-j. Lesion laterality (f) is two binary flags.
struct Demographics {
    double a_years_stroke_to_scan = 0.0;
    int b_vision_affected = 0;
    int c_hearing_affected = 0;
    int d_gender = 0;
    int e_lesion_count = 0;
    int f_lesion_side_left = 0;
    int f_lesion_side_right = 0;
    double g_education_years = 0.0;
    double h_age_at_stroke = 0.0;
    double i_years_since_stroke = 0.0;
    int j_handedness = 0;

    static constexpr std::size_t kFullWidth = 11;
    static constexpr std::size_t kBaselineWidth = 4;

    void validate() const;
    /// a, b, c, d, e, f_left, f_right, g, h, i, j
    std::vector<double> full() const;
    /// a, d, h, j
    std::vector<double> baseline() const;

    friend bool operator==(const Demographics&, const Demographics&) = default;
};

enum class FeatureSet { Baseline, Img, Demo, DemoLesion, DemoLesionImg, DemoImg };

std::string tag_name(FeatureSet set);
FeatureSet parse_feature_set(const std::string& tag);

struct FeatureBundle {
    std::optional<std::vector<double>> image_features;
    std::optional<Demographics> demographics;
    std::optional<std::vector<double>> lesion_features;
    bool baseline_only = false; // demographics restricted to a, d, h, j
};

/// [image(64) | demographics(11, or 4 for baseline) | lesion(k)], absent parts skipped.
std::vector<double> assemble_features(const FeatureBundle& bundle);

struct SubjectRecord {
    std::string subject_id;
    double score = 0.0;
    std::optional<Demographics> demographics;
    std::vector<double> lesion_features;
};

FeatureBundle make_bundle(const SubjectRecord& record, FeatureSet set, std::span<const double> image_features = {});

std::vector<SubjectRecord> read_subject_table(const std::filesystem::path& path);
void write_subject_table(std::span<const SubjectRecord> records, const std::filesystem::path& path);

using Matrix = std::vector<std::vector<double>>;

/// Per-column z-scoring from training statistics; zero-variance columns keep std 1.
struct Standardizer {
    std::vector<double> means;
    std::vector<double> stds;

    static Standardizer fit(const Matrix& rows);
    std::vector<double> transform(std::span<const double> row) const;
    Matrix transform(const Matrix& rows) const;
};

struct RegressorConfig {
    std::size_t hidden_units = 16;
    std::size_t epochs = 300;
    std::size_t batch_size = 16;
    std::uint64_t seed = 1;
    nn::AdamHyper optimizer{};
};

struct TrainedRegressor {
    RegressorConfig config;
    Standardizer input_scaler;
    double target_mean = 0.0;
    double target_std = 1.0;
    nn::Network network;

    double predict(std::span<const double> features) const;
    std::vector<double> predict(const Matrix& rows) const;
};

/// dense(in -> hidden) relu dense(hidden -> 1), Adam on MSE of the standardized target.
TrainedRegressor train_regressor(const Matrix& features, std::span<const double> scores, const RegressorConfig& cfg);

double r_squared(std::span<const double> y_true, std::span<const double> y_pred);
double pearson_r(std::span<const double> x, std::span<const double> y);

struct EvalReport {
    std::string feature_set;
    double r_squared = 0.0;
    double pearson_r = 0.0;
    std::size_t n = 0;
    std::uint64_t seed = 0;
};

/// Trains one regressor per feature set on train_idx and scores it on test_idx.
/// image_features is indexed like records (may be empty when no tag needs it).
std::vector<EvalReport> evaluate_feature_sets(std::span<const SubjectRecord> records, const Matrix& image_features,
                                              std::span<const FeatureSet> sets, std::span<const std::size_t> train_idx,
                                              std::span<const std::size_t> test_idx, const RegressorConfig& cfg);

void write_eval_reports(std::span<const EvalReport> reports, const std::filesystem::path& path);

} // namespace stitchnet
