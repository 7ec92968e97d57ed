#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace stitchnet {

struct Dims3 {
    std::size_t nx = 1;
    std::size_t ny = 1;
    std::size_t nz = 1;

    std::size_t count() const noexcept { return nx * ny * nz; }
    friend bool operator==(const Dims3&, const Dims3&) = default;
};

struct Spacing3 {
    double sx = 1.0;
    double sy = 1.0;
    double sz = 1.0;

    friend bool operator==(const Spacing3&, const Spacing3&) = default;
};

struct Voxel {
    std::size_t x = 0;
    std::size_t y = 0;
    std::size_t z = 0;

    friend bool operator==(const Voxel&, const Voxel&) = default;
};

/// Dense row-major 2D scalar grid.
struct Grid2D {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Grid2D() = default;
    Grid2D(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    friend bool operator==(const Grid2D&, const Grid2D&) = default;
};

/// Aligned 3D scan. Voxels are stored slice-major: x fastest, then y, then z.
struct Volume {
    Dims3 dims;
    Spacing3 spacing;
    std::vector<double> data;
    std::string subject_id;

    Volume() = default;
    Volume(Dims3 d, Spacing3 s = {}, std::string id = {})
        : dims(d), spacing(s), data(d.count(), 0.0), subject_id(std::move(id)) {}

    std::size_t index(std::size_t x, std::size_t y, std::size_t z) const noexcept {
        return (z * dims.ny + y) * dims.nx + x;
    }
    double& at(std::size_t x, std::size_t y, std::size_t z) { return data[index(x, y, z)]; }
    double at(std::size_t x, std::size_t y, std::size_t z) const { return data[index(x, y, z)]; }

    /// Throws DataError when dims, data length or finiteness invariants fail.
    void validate() const;

    friend bool operator==(const Volume&, const Volume&) = default;
};

/// Placement of axial slices on a square grid, ascending z in row-major order.
struct MosaicLayout {
    std::size_t slice_nx = 1;
    std::size_t slice_ny = 1;
    std::size_t n_slices = 1;
    std::size_t grid_rows = 1;
    std::size_t grid_cols = 1;

    static MosaicLayout for_dims(const Dims3& dims);

    std::size_t mosaic_rows() const noexcept { return grid_rows * slice_ny; }
    std::size_t mosaic_cols() const noexcept { return grid_cols * slice_nx; }
    Dims3 volume_dims() const noexcept { return {slice_nx, slice_ny, n_slices}; }

    /// Mosaic pixel (row, col) of voxel v.
    std::pair<std::size_t, std::size_t> pixel_of(const Voxel& v) const noexcept;
    /// Inverse of pixel_of; nullopt for padding cells.
    std::optional<Voxel> voxel_of(std::size_t row, std::size_t col) const noexcept;

    friend bool operator==(const MosaicLayout&, const MosaicLayout&) = default;
};

struct Mosaic {
    MosaicLayout layout;
    Grid2D pixels;
    std::string subject_id;
};

enum class VolumeFormat { RawGrid, NiftiSubset };

/// Guess the format from the extension: .nii is NIfTI, everything else raw-grid.
VolumeFormat format_from_path(const std::filesystem::path& path);

Volume load_volume(const std::filesystem::path& path, VolumeFormat format);
Volume load_volume(const std::filesystem::path& path);

/// Voxels are written as float32; values that are not float-representable are rounded.
void save_raw_grid(const Volume& v, const std::filesystem::path& path);
void save_nifti(const Volume& v, const std::filesystem::path& path);

/// Shared dims of an aligned cohort. Throws DataError naming the subjects whose
/// dims or spacing disagree with the first volume.
Dims3 validate_cohort(std::span<const Volume> volumes);

Mosaic stitch(const Volume& v);

/// Inverse of stitch. Padding cells are discarded whatever their contents.
Volume unstitch(const Mosaic& m, std::optional<Spacing3> spacing = std::nullopt);

/// Bilinear resampling with corner-aligned sample positions.
Grid2D resize_bilinear(const Grid2D& g, std::size_t rows, std::size_t cols);
inline Grid2D resize_bilinear(const Mosaic& m, std::size_t rows, std::size_t cols) {
    return resize_bilinear(m.pixels, rows, cols);
}

Mosaic upsample_to_mosaic(const Grid2D& g, const MosaicLayout& layout);

struct IntensityRange {
    double min = 0.0;
    double max = 1.0;
};

/// Global min/max across every voxel of the cohort.
IntensityRange cohort_range(std::span<const Volume> volumes);

/// Maps range.min -> 0 and range.max -> 1. A degenerate range maps everything to 0.
void normalize_intensities(Volume& v, const IntensityRange& range);

/// P5 greymap with the rescale round(255 * (x - min) / (max - min)); constant images map to 0.
void write_pgm(const Grid2D& g, const std::filesystem::path& path);
std::vector<unsigned char> encode_pgm(const Grid2D& g);

} // namespace stitchnet
