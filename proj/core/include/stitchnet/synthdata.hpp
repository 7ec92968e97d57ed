#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "stitchnet/regressor.hpp"
#include "stitchnet/volume.hpp"

namespace stitchnet {

enum class Hemisphere { Left, Right };

std::string to_string(Hemisphere h);

/// Synthetic lesioned-brain phantom parameters.
///
/// Subjects alternate between a mild and a severe lesion draw (even ids mild),
/// which keeps the threshold-60 classes balanced. The fixed_* overrides pin a
/// single phantom for tests.
struct PhantomSpec {
    Dims3 dims{64, 64, 32};
    double gray_intensity = 0.5;
    double white_intensity = 0.8;
    double background = 0.0;
    double lesion_intensity = 0.2;
    std::array<double, 2> mild_fraction{0.01, 0.06};
    std::array<double, 2> severe_fraction{0.14, 0.26};
    double noise_std = 2.0;        // score noise, CAT units
    double image_noise_std = 0.02; // voxel noise inside the brain
    std::uint64_t seed = 7;

    std::optional<double> fixed_fraction;
    std::optional<Hemisphere> fixed_hemisphere;

    void validate() const;
};

inline constexpr double kMinScore = 39.0;
inline constexpr double kMaxScore = 75.0;
inline constexpr std::size_t kTissueRegions = 8; // octants of the volume

struct GroundTruth {
    std::string subject_id;
    double lesion_volume_fraction = 0.0;
    std::array<double, 3> lesion_centroid{};
    Hemisphere hemisphere = Hemisphere::Right;
    /// gray fraction then white fraction of each octant's brain voxels (16 values)
    std::vector<double> tissue_fraction_vector;
    double true_score = kMaxScore;
};

struct Phantom {
    Volume volume;
    GroundTruth truth;
    Demographics demographics;
    std::vector<std::uint8_t> brain_mask;
    std::vector<std::uint8_t> lesion_mask;
};

/// clamp(75 - 120 f - 6 [left] + noise, 39, 75)
double score_from_lesion(double lesion_fraction, Hemisphere hemisphere, double noise);

std::string subject_name(std::size_t id);

/// Deterministic in (spec.seed, id).
Phantom generate_phantom(const PhantomSpec& spec, std::size_t id);

/// Gray/white fractions per octant, classifying brain voxels by nearest tissue intensity.
std::vector<double> tissue_fractions(const Volume& v, const PhantomSpec& spec);

struct CohortFiles {
    std::filesystem::path volume_dir;
    std::filesystem::path subject_table;
    std::filesystem::path ground_truth;
    std::filesystem::path manifest;
};

CohortFiles cohort_files(const std::filesystem::path& dir);

/// Writes n raw-grid volumes, the subject table, the ground-truth table and a
/// manifest recording the generator settings.
CohortFiles generate_cohort(const PhantomSpec& spec, std::size_t n, const std::filesystem::path& dir);

void write_ground_truth(const std::vector<GroundTruth>& truths, const std::filesystem::path& path);
std::vector<GroundTruth> read_ground_truth(const std::filesystem::path& path);

/// Generator settings of a cohort directory, if its manifest exists.
std::optional<std::pair<PhantomSpec, std::size_t>> read_manifest(const std::filesystem::path& dir);

} // namespace stitchnet
