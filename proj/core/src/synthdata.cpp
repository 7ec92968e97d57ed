#include "stitchnet/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include <fmt/format.h>

#include "stitchnet/config.hpp"
#include "stitchnet/csv.hpp"
#include "stitchnet/errors.hpp"

namespace stitchnet {

namespace {

constexpr double kWhiteCoreRadius = 0.65; // normalized ellipsoid radius of the white-matter core

struct Ellipsoid {
    std::array<double, 3> center;
    std::array<double, 3> semi_axes;

    double radius(double x, double y, double z) const {
        const double dx = (x - center[0]) / semi_axes[0];
        const double dy = (y - center[1]) / semi_axes[1];
        const double dz = (z - center[2]) / semi_axes[2];
        return std::sqrt(dx * dx + dy * dy + dz * dz);
    }
};

Ellipsoid brain_shape(const Dims3& d) {
    return {{(static_cast<double>(d.nx) - 1) / 2, (static_cast<double>(d.ny) - 1) / 2, (static_cast<double>(d.nz) - 1) / 2},
            {0.42 * static_cast<double>(d.nx), 0.45 * static_cast<double>(d.ny), 0.42 * static_cast<double>(d.nz)}};
}

std::mt19937_64 subject_stream(std::uint64_t seed, std::size_t id) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(id), static_cast<std::uint32_t>(static_cast<std::uint64_t>(id) >> 32)};
    return std::mt19937_64(seq);
}

float to_float(double v) { return static_cast<float>(v); }

} // namespace

std::string to_string(Hemisphere h) { return h == Hemisphere::Left ? "left" : "right"; }

void PhantomSpec::validate() const {
    for (double v : {gray_intensity, white_intensity, background, lesion_intensity})
        if (!(v >= 0.0 && v <= 1.0)) throw UsageError("phantom intensities must lie in [0, 1]");
    if (dims.nx < 8 || dims.ny < 8 || dims.nz < 8) throw UsageError("phantom dims must be >= 8 per axis");
    if (!(noise_std >= 0.0) || !(image_noise_std >= 0.0)) throw UsageError("phantom noise must be >= 0");
    for (const auto& r : {mild_fraction, severe_fraction})
        if (!(r[0] >= 0.0 && r[0] <= r[1])) throw UsageError("lesion fraction ranges must satisfy 0 <= lo <= hi");
    const double largest = fixed_fraction.value_or(std::max(mild_fraction[1], severe_fraction[1]));
    if (largest < 0.0) throw UsageError("lesion fraction must be >= 0");
    if (largest >= 1.0) throw UsageError("lesion larger than brain: volume fraction must be < 1");
}

double score_from_lesion(double lesion_fraction, Hemisphere hemisphere, double noise) {
    const double raw = 75.0 - 120.0 * lesion_fraction - (hemisphere == Hemisphere::Left ? 6.0 : 0.0) + noise;
    return std::clamp(raw, kMinScore, kMaxScore);
}

std::string subject_name(std::size_t id) { return fmt::format("sub-{:04d}", id); }

Phantom generate_phantom(const PhantomSpec& spec, std::size_t id) {
    spec.validate();
    auto rng = subject_stream(spec.seed, id);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    const auto& d = spec.dims;
    const auto brain = brain_shape(d);

    const bool severe = id % 2 == 1;
    const auto& range = severe ? spec.severe_fraction : spec.mild_fraction;
    const double target = spec.fixed_fraction.value_or(range[0] + (range[1] - range[0]) * unit(rng));
    Hemisphere hemi = unit(rng) < 0.5 ? Hemisphere::Left : Hemisphere::Right;
    if (spec.fixed_hemisphere) hemi = *spec.fixed_hemisphere;

    // lesion is a scaled copy of the brain ellipsoid, offset into one hemisphere
    const double scale = std::cbrt(target);
    const double room = 1.0 - scale;
    const double ux = 0.35 + 0.5 * unit(rng);
    const double uy = unit(rng) * 2.0 - 1.0;
    const double uz = unit(rng) * 2.0 - 1.0;
    // smaller x is the left hemisphere
    const double side = hemi == Hemisphere::Left ? -1.0 : 1.0;
    Ellipsoid lesion{{brain.center[0] + side * room * ux * brain.semi_axes[0],
                      brain.center[1] + 0.5 * room * uy * brain.semi_axes[1],
                      brain.center[2] + 0.5 * room * uz * brain.semi_axes[2]},
                     {scale * brain.semi_axes[0], scale * brain.semi_axes[1], scale * brain.semi_axes[2]}};

    Phantom p;
    p.volume = Volume(d, Spacing3{1.0, 1.0, 1.0}, subject_name(id));
    p.brain_mask.assign(d.count(), 0);
    p.lesion_mask.assign(d.count(), 0);

    std::size_t brain_voxels = 0, lesion_voxels = 0;
    std::array<double, 3> centroid{0, 0, 0};
    for (std::size_t z = 0; z < d.nz; ++z) {
        for (std::size_t y = 0; y < d.ny; ++y) {
            for (std::size_t x = 0; x < d.nx; ++x) {
                const auto idx = p.volume.index(x, y, z);
                const double fx = static_cast<double>(x), fy = static_cast<double>(y), fz = static_cast<double>(z);
                const double r = brain.radius(fx, fy, fz);
                if (r > 1.0) {
                    p.volume.data[idx] = spec.background;
                    continue;
                }
                ++brain_voxels;
                p.brain_mask[idx] = 1;
                double value = r < kWhiteCoreRadius ? spec.white_intensity : spec.gray_intensity;
                if (target > 0.0 && lesion.radius(fx, fy, fz) <= 1.0) {
                    value = spec.lesion_intensity;
                    p.lesion_mask[idx] = 1;
                    ++lesion_voxels;
                    centroid[0] += fx;
                    centroid[1] += fy;
                    centroid[2] += fz;
                }
                if (spec.image_noise_std > 0.0) value += spec.image_noise_std * gauss(rng);
                p.volume.data[idx] = to_float(std::clamp(value, 0.0, 1.0));
            }
        }
    }
    if (lesion_voxels > 0)
        for (auto& c : centroid) c /= static_cast<double>(lesion_voxels);

    auto& truth = p.truth;
    truth.subject_id = p.volume.subject_id;
    truth.lesion_volume_fraction = static_cast<double>(lesion_voxels) / static_cast<double>(brain_voxels);
    truth.lesion_centroid = centroid;
    truth.hemisphere = hemi;
    truth.true_score = score_from_lesion(truth.lesion_volume_fraction, hemi, spec.noise_std * gauss(rng));

    // tissue fractions from the noise-free labels
    std::vector<double> counts(2 * kTissueRegions, 0.0), totals(kTissueRegions, 0.0);
    for (std::size_t z = 0; z < d.nz; ++z)
        for (std::size_t y = 0; y < d.ny; ++y)
            for (std::size_t x = 0; x < d.nx; ++x) {
                const auto idx = p.volume.index(x, y, z);
                if (!p.brain_mask[idx]) continue;
                const auto region = (z * 2 / d.nz) * 4 + (y * 2 / d.ny) * 2 + (x * 2 / d.nx);
                totals[region] += 1.0;
                if (p.lesion_mask[idx]) continue;
                const bool white = brain.radius(static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)) <
                                   kWhiteCoreRadius;
                counts[2 * region + (white ? 1 : 0)] += 1.0;
            }
    for (std::size_t r = 0; r < kTissueRegions; ++r) {
        counts[2 * r] /= std::max(totals[r], 1.0);
        counts[2 * r + 1] /= std::max(totals[r], 1.0);
    }
    truth.tissue_fraction_vector = std::move(counts);

    // demographics with a weak dependence on outcome: older patients score lower
    auto& demo = p.demographics;
    const double years_to_scan = std::round(10.0 * 8.0 * unit(rng)) / 10.0;
    demo.a_years_stroke_to_scan = years_to_scan;
    demo.b_vision_affected = unit(rng) < 0.2 ? 1 : 0;
    demo.c_hearing_affected = unit(rng) < 0.1 ? 1 : 0;
    demo.d_gender = unit(rng) < 0.68 ? 1 : 0;
    demo.e_lesion_count = lesion_voxels > 0 ? 1 : 0;
    demo.f_lesion_side_left = lesion_voxels > 0 && hemi == Hemisphere::Left ? 1 : 0;
    demo.f_lesion_side_right = lesion_voxels > 0 && hemi == Hemisphere::Right ? 1 : 0;
    demo.g_education_years = std::clamp(std::round(13.0 + 3.0 * gauss(rng)), 6.0, 22.0);
    demo.h_age_at_stroke =
        std::clamp(std::round(55.5 - 0.4 * (truth.true_score - 60.0) + 9.0 * gauss(rng)), 18.0, 95.0);
    demo.i_years_since_stroke = std::round(10.0 * (years_to_scan + unit(rng))) / 10.0;
    demo.j_handedness = unit(rng) < 0.9 ? 1 : 0;
    return p;
}

std::vector<double> tissue_fractions(const Volume& v, const PhantomSpec& spec) {
    const auto& d = v.dims;
    std::vector<double> counts(2 * kTissueRegions, 0.0), totals(kTissueRegions, 0.0);
    const double brain_floor = (spec.background + std::min(spec.lesion_intensity, spec.gray_intensity)) / 2.0;
    for (std::size_t z = 0; z < d.nz; ++z)
        for (std::size_t y = 0; y < d.ny; ++y)
            for (std::size_t x = 0; x < d.nx; ++x) {
                const double value = v.at(x, y, z);
                if (value <= brain_floor) continue;
                const auto region = (z * 2 / d.nz) * 4 + (y * 2 / d.ny) * 2 + (x * 2 / d.nx);
                totals[region] += 1.0;
                const double dg = std::abs(value - spec.gray_intensity);
                const double dw = std::abs(value - spec.white_intensity);
                const double dl = std::abs(value - spec.lesion_intensity);
                if (dl < dg && dl < dw) continue;
                counts[2 * region + (dw < dg ? 1 : 0)] += 1.0;
            }
    for (std::size_t r = 0; r < kTissueRegions; ++r) {
        counts[2 * r] /= std::max(totals[r], 1.0);
        counts[2 * r + 1] /= std::max(totals[r], 1.0);
    }
    return counts;
}

CohortFiles cohort_files(const std::filesystem::path& dir) {
    return {dir / "volumes", dir / "subjects.csv", dir / "ground_truth.csv", dir / "cohort.cfg"};
}

CohortFiles generate_cohort(const PhantomSpec& spec, std::size_t n, const std::filesystem::path& dir) {
    if (n < 2) throw UsageError("need >= 2 subjects");
    spec.validate();
    const auto files = cohort_files(dir);
    std::filesystem::create_directories(files.volume_dir);

    std::vector<SubjectRecord> records;
    std::vector<GroundTruth> truths;
    for (std::size_t id = 0; id < n; ++id) {
        const auto p = generate_phantom(spec, id);
        save_raw_grid(p.volume, files.volume_dir / (p.volume.subject_id + ".rawgrid"));
        SubjectRecord rec;
        rec.subject_id = p.volume.subject_id;
        rec.score = p.truth.true_score;
        rec.demographics = p.demographics;
        // stand-in for expert lesion descriptors: volume fraction and centroid
        rec.lesion_features = {p.truth.lesion_volume_fraction, p.truth.lesion_centroid[0], p.truth.lesion_centroid[1],
                               p.truth.lesion_centroid[2]};
        records.push_back(std::move(rec));
        truths.push_back(p.truth);
    }
    write_subject_table(records, files.subject_table);
    write_ground_truth(truths, files.ground_truth);

    KeyValueConfig manifest;
    manifest.set("n", std::to_string(n));
    manifest.set("seed", std::to_string(spec.seed));
    manifest.set("nx", std::to_string(spec.dims.nx));
    manifest.set("ny", std::to_string(spec.dims.ny));
    manifest.set("nz", std::to_string(spec.dims.nz));
    manifest.set("noise_std", csv::format_double(spec.noise_std));
    manifest.set("image_noise_std", csv::format_double(spec.image_noise_std));
    std::ofstream out(files.manifest, std::ios::trunc);
    out << manifest.dump();
    return files;
}

void write_ground_truth(const std::vector<GroundTruth>& truths, const std::filesystem::path& path) {
    csv::Table t;
    t.header = {"subject_id", "lesion_volume_fraction", "cx", "cy", "cz", "hemisphere", "true_score"};
    for (const auto& g : truths)
        t.rows.push_back({g.subject_id, csv::format_double(g.lesion_volume_fraction),
                          csv::format_double(g.lesion_centroid[0]), csv::format_double(g.lesion_centroid[1]),
                          csv::format_double(g.lesion_centroid[2]), to_string(g.hemisphere),
                          csv::format_double(g.true_score)});
    csv::write(t, path);
}

std::vector<GroundTruth> read_ground_truth(const std::filesystem::path& path) {
    const auto t = csv::read(path);
    const char* names[] = {"subject_id", "lesion_volume_fraction", "cx", "cy", "cz", "hemisphere", "true_score"};
    std::vector<std::size_t> cols;
    for (const char* name : names) {
        const int c = t.column(name);
        if (c < 0) throw DataError(fmt::format("{}: missing column {}", path.string(), name));
        cols.push_back(static_cast<std::size_t>(c));
    }
    std::vector<GroundTruth> out;
    for (const auto& row : t.rows) {
        GroundTruth g;
        g.subject_id = row[cols[0]];
        g.lesion_volume_fraction = csv::to_double(row[cols[1]], path.string());
        for (int k = 0; k < 3; ++k) g.lesion_centroid[k] = csv::to_double(row[cols[2 + k]], path.string());
        g.hemisphere = row[cols[5]] == "left" ? Hemisphere::Left : Hemisphere::Right;
        g.true_score = csv::to_double(row[cols[6]], path.string());
        out.push_back(std::move(g));
    }
    return out;
}

std::optional<std::pair<PhantomSpec, std::size_t>> read_manifest(const std::filesystem::path& dir) {
    const auto path = cohort_files(dir).manifest;
    if (!std::filesystem::exists(path)) return std::nullopt;
    const auto cfg = KeyValueConfig::load(path);
    PhantomSpec spec;
    spec.seed = cfg.get_uint("seed", spec.seed);
    spec.dims = {cfg.get_uint("nx", 64), cfg.get_uint("ny", 64), cfg.get_uint("nz", 32)};
    spec.noise_std = cfg.get_double("noise_std", spec.noise_std);
    spec.image_noise_std = cfg.get_double("image_noise_std", spec.image_noise_std);
    return std::make_pair(spec, static_cast<std::size_t>(cfg.get_uint("n", 0)));
}

} // namespace stitchnet
