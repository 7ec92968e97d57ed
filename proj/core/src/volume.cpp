#include "stitchnet/volume.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "binary_io.hpp"
#include "stitchnet/errors.hpp"

namespace stitchnet {

namespace {

constexpr std::int32_t kNiftiHeaderSize = 348;
constexpr std::int16_t kDtUint8 = 2;
constexpr std::int16_t kDtInt16 = 4;
constexpr std::int16_t kDtFloat32 = 16;

std::size_t ceil_sqrt(std::size_t n) {
    auto r = static_cast<std::size_t>(std::sqrt(static_cast<double>(n)));
    while (r * r < n) ++r;
    while (r > 1 && (r - 1) * (r - 1) >= n) --r;
    return std::max<std::size_t>(r, 1);
}

std::ifstream open_binary(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(fmt::format("cannot open '{}'", path.string()));
    return in;
}

Volume read_raw_grid(const std::filesystem::path& path) {
    auto in = open_binary(path);
    std::string header;
    if (!std::getline(in, header)) throw DataError(fmt::format("{}: missing RAWGRID header", path.string()));

    std::istringstream hs(header);
    std::string magic, version;
    long long nx = 0, ny = 0, nz = 0;
    double sx = 0, sy = 0, sz = 0;
    hs >> magic >> version;
    if (magic != "RAWGRID" || version != "v1")
        throw DataError(fmt::format("{}: bad header magic '{} {}'", path.string(), magic, version));
    if (!(hs >> nx >> ny >> nz)) throw DataError(fmt::format("{}: malformed header field dims", path.string()));
    if (!(hs >> sx >> sy >> sz)) throw DataError(fmt::format("{}: malformed header field spacing", path.string()));
    if (nx < 1 || ny < 1 || nz < 1)
        throw DataError(fmt::format("{}: header field dims must be >= 1 (got {} {} {})", path.string(), nx, ny, nz));

    Volume v(Dims3{static_cast<std::size_t>(nx), static_cast<std::size_t>(ny), static_cast<std::size_t>(nz)},
             Spacing3{sx, sy, sz}, path.stem().string());

    const auto start = in.tellg();
    in.seekg(0, std::ios::end);
    const auto payload = static_cast<std::size_t>(in.tellg() - start);
    in.seekg(start);
    if (payload != v.data.size() * sizeof(float))
        throw DataError(fmt::format("{}: data length mismatch: header dims need {} floats, file holds {} bytes",
                                    path.string(), v.data.size(), payload));

    for (auto& value : v.data) value = detail::read_le<float>(in, "voxel data");
    v.validate();
    return v;
}

struct NiftiHeader {
    std::int16_t dim[8]{};
    std::int16_t datatype = 0;
    std::int16_t bitpix = 0;
    float pixdim[8]{};
    float vox_offset = 0;
    float scl_slope = 0;
    float scl_inter = 0;
};

template <typename T>
T load_field(const unsigned char* raw, std::size_t offset, bool swap) {
    T value;
    std::memcpy(&value, raw + offset, sizeof(T));
    value = detail::to_little(value);
    return swap ? detail::byteswap_value(value) : value;
}

Volume read_nifti(const std::filesystem::path& path) {
    auto in = open_binary(path);
    unsigned char raw[kNiftiHeaderSize];
    if (!in.read(reinterpret_cast<char*>(raw), kNiftiHeaderSize)) {
        if (in.gcount() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b)
            throw DataError(fmt::format("{}: compressed NIfTI is not supported", path.string()));
        throw DataError(fmt::format("{}: truncated NIfTI header", path.string()));
    }
    if (raw[0] == 0x1f && raw[1] == 0x8b)
        throw DataError(fmt::format("{}: compressed NIfTI is not supported", path.string()));

    bool swap = false;
    auto sizeof_hdr = load_field<std::int32_t>(raw, 0, false);
    if (sizeof_hdr != kNiftiHeaderSize) {
        if (detail::byteswap_value(sizeof_hdr) != kNiftiHeaderSize)
            throw DataError(fmt::format("{}: header field sizeof_hdr is {}, expected 348", path.string(), sizeof_hdr));
        swap = true;
    }
    if (std::memcmp(raw + 344, "n+1\0", 4) != 0)
        throw DataError(fmt::format("{}: header field magic is not 'n+1' (single-file NIfTI-1 only)", path.string()));

    NiftiHeader h;
    for (int i = 0; i < 8; ++i) {
        h.dim[i] = load_field<std::int16_t>(raw, 40 + 2 * i, swap);
        h.pixdim[i] = load_field<float>(raw, 76 + 4 * i, swap);
    }
    h.datatype = load_field<std::int16_t>(raw, 70, swap);
    h.bitpix = load_field<std::int16_t>(raw, 72, swap);
    h.vox_offset = load_field<float>(raw, 108, swap);
    h.scl_slope = load_field<float>(raw, 112, swap);
    h.scl_inter = load_field<float>(raw, 116, swap);

    if (h.dim[0] != 3) throw DataError(fmt::format("{}: header field dim[0] is {}, expected 3", path.string(), h.dim[0]));
    for (int i = 1; i <= 3; ++i)
        if (h.dim[i] < 1) throw DataError(fmt::format("{}: header field dim[{}] is {}", path.string(), i, h.dim[i]));

    std::size_t elem = 0;
    switch (h.datatype) {
    case kDtUint8: elem = 1; break;
    case kDtInt16: elem = 2; break;
    case kDtFloat32: elem = 4; break;
    default:
        throw DataError(fmt::format("{}: unsupported datatype code {} (supported: 2, 4, 16)", path.string(), h.datatype));
    }
    if (h.vox_offset < kNiftiHeaderSize)
        throw DataError(fmt::format("{}: header field vox_offset {} is inside the header", path.string(), h.vox_offset));

    auto pix = [](float p) { return p > 0 && std::isfinite(p) ? static_cast<double>(p) : 1.0; };
    Volume v(Dims3{static_cast<std::size_t>(h.dim[1]), static_cast<std::size_t>(h.dim[2]),
                   static_cast<std::size_t>(h.dim[3])},
             Spacing3{pix(h.pixdim[1]), pix(h.pixdim[2]), pix(h.pixdim[3])}, path.stem().string());

    in.seekg(0, std::ios::end);
    const auto file_size = static_cast<std::size_t>(in.tellg());
    const auto offset = static_cast<std::size_t>(h.vox_offset);
    if (file_size < offset + v.data.size() * elem)
        throw DataError(fmt::format("{}: data length mismatch: dims need {} bytes after offset {}, file has {}",
                                    path.string(), v.data.size() * elem, offset, file_size - std::min(file_size, offset)));
    in.seekg(static_cast<std::streamoff>(offset));

    std::vector<unsigned char> buffer(v.data.size() * elem);
    in.read(reinterpret_cast<char*>(buffer.data()), static_cast<std::streamsize>(buffer.size()));
    const double slope = (h.scl_slope != 0 && std::isfinite(h.scl_slope)) ? h.scl_slope : 1.0;
    const double inter = (h.scl_slope != 0 && std::isfinite(h.scl_inter)) ? h.scl_inter : 0.0;
    for (std::size_t i = 0; i < v.data.size(); ++i) {
        double value = 0;
        switch (h.datatype) {
        case kDtUint8: value = buffer[i]; break;
        case kDtInt16: value = load_field<std::int16_t>(buffer.data(), 2 * i, swap); break;
        default: value = load_field<float>(buffer.data(), 4 * i, swap); break;
        }
        v.data[i] = value * slope + inter;
    }
    v.validate();
    return v;
}

} // namespace

void Volume::validate() const {
    if (dims.nx < 1 || dims.ny < 1 || dims.nz < 1)
        throw DataError(fmt::format("volume '{}': dims must be >= 1", subject_id));
    if (data.size() != dims.count())
        throw DataError(fmt::format("volume '{}': data length mismatch ({} values for dims {}x{}x{})", subject_id,
                                    data.size(), dims.nx, dims.ny, dims.nz));
    for (double value : data)
        if (!std::isfinite(value)) throw DataError(fmt::format("volume '{}': non-finite intensity", subject_id));
}

MosaicLayout MosaicLayout::for_dims(const Dims3& dims) {
    const auto side = ceil_sqrt(dims.nz);
    return MosaicLayout{dims.nx, dims.ny, dims.nz, side, side};
}

std::pair<std::size_t, std::size_t> MosaicLayout::pixel_of(const Voxel& v) const noexcept {
    const auto cell_row = v.z / grid_cols;
    const auto cell_col = v.z % grid_cols;
    return {cell_row * slice_ny + v.y, cell_col * slice_nx + v.x};
}

std::optional<Voxel> MosaicLayout::voxel_of(std::size_t row, std::size_t col) const noexcept {
    const auto cell_row = row / slice_ny;
    const auto cell_col = col / slice_nx;
    const auto z = cell_row * grid_cols + cell_col;
    if (cell_row >= grid_rows || cell_col >= grid_cols || z >= n_slices) return std::nullopt;
    return Voxel{col % slice_nx, row % slice_ny, z};
}

VolumeFormat format_from_path(const std::filesystem::path& path) {
    return path.extension() == ".nii" ? VolumeFormat::NiftiSubset : VolumeFormat::RawGrid;
}

Volume load_volume(const std::filesystem::path& path, VolumeFormat format) {
    return format == VolumeFormat::NiftiSubset ? read_nifti(path) : read_raw_grid(path);
}

Volume load_volume(const std::filesystem::path& path) { return load_volume(path, format_from_path(path)); }

void save_raw_grid(const Volume& v, const std::filesystem::path& path) {
    v.validate();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(fmt::format("cannot write '{}'", path.string()));
    out << fmt::format("RAWGRID v1 {} {} {} {} {} {}\n", v.dims.nx, v.dims.ny, v.dims.nz, v.spacing.sx,
                       v.spacing.sy, v.spacing.sz);
    for (double value : v.data) detail::write_le(out, static_cast<float>(value));
}

void save_nifti(const Volume& v, const std::filesystem::path& path) {
    v.validate();
    if (v.dims.nx > 32767 || v.dims.ny > 32767 || v.dims.nz > 32767)
        throw DataError("volume too large for a NIfTI-1 header");
    unsigned char raw[kNiftiHeaderSize]{};
    auto put = [&raw](std::size_t offset, auto value) {
        value = detail::to_little(value);
        std::memcpy(raw + offset, &value, sizeof(value));
    };
    put(0, kNiftiHeaderSize);
    const std::int16_t dim[8] = {3, static_cast<std::int16_t>(v.dims.nx), static_cast<std::int16_t>(v.dims.ny),
                                 static_cast<std::int16_t>(v.dims.nz), 1, 1, 1, 1};
    const float pixdim[8] = {1.0f, static_cast<float>(v.spacing.sx), static_cast<float>(v.spacing.sy),
                             static_cast<float>(v.spacing.sz), 0, 0, 0, 0};
    for (int i = 0; i < 8; ++i) {
        put(40 + 2 * i, dim[i]);
        put(76 + 4 * i, pixdim[i]);
    }
    put(70, kDtFloat32);
    put(72, std::int16_t{32});
    put(108, 352.0f);
    put(112, 1.0f);
    put(116, 0.0f);
    std::memcpy(raw + 344, "n+1\0", 4);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(fmt::format("cannot write '{}'", path.string()));
    out.write(reinterpret_cast<const char*>(raw), kNiftiHeaderSize);
    const char extension[4] = {0, 0, 0, 0};
    out.write(extension, 4);
    for (double value : v.data) detail::write_le(out, static_cast<float>(value));
}

Dims3 validate_cohort(std::span<const Volume> volumes) {
    if (volumes.empty()) throw DataError("cohort is empty");
    const auto& ref = volumes.front();
    std::vector<std::string> offenders;
    for (const auto& v : volumes) {
        v.validate();
        if (v.dims != ref.dims || v.spacing != ref.spacing) offenders.push_back(v.subject_id);
    }
    if (!offenders.empty()) {
        throw DataError(fmt::format("cohort alignment error: {} volume(s) disagree with '{}' ({}x{}x{}): {}",
                                    offenders.size(), ref.subject_id, ref.dims.nx, ref.dims.ny, ref.dims.nz,
                                    fmt::join(offenders, ", ")));
    }
    return ref.dims;
}

Mosaic stitch(const Volume& v) {
    v.validate();
    Mosaic m;
    m.layout = MosaicLayout::for_dims(v.dims);
    m.subject_id = v.subject_id;
    m.pixels = Grid2D(m.layout.mosaic_rows(), m.layout.mosaic_cols());
    for (std::size_t z = 0; z < v.dims.nz; ++z) {
        for (std::size_t y = 0; y < v.dims.ny; ++y) {
            const auto [row, col] = m.layout.pixel_of({0, y, z});
            std::copy_n(v.data.begin() + static_cast<std::ptrdiff_t>(v.index(0, y, z)), v.dims.nx,
                        m.pixels.data.begin() + static_cast<std::ptrdiff_t>(row * m.pixels.cols + col));
        }
    }
    return m;
}

Volume unstitch(const Mosaic& m, std::optional<Spacing3> spacing) {
    const auto& layout = m.layout;
    if (layout.grid_rows * layout.grid_cols < layout.n_slices || layout.slice_nx == 0 || layout.slice_ny == 0)
        throw DataError("mosaic layout error: grid cannot hold the declared slices");
    if (m.pixels.rows != layout.mosaic_rows() || m.pixels.cols != layout.mosaic_cols() ||
        m.pixels.data.size() != m.pixels.rows * m.pixels.cols)
        throw DataError(fmt::format("mosaic layout error: pixel grid {}x{} does not match layout {}x{}", m.pixels.rows,
                                    m.pixels.cols, layout.mosaic_rows(), layout.mosaic_cols()));

    Volume v(layout.volume_dims(), spacing.value_or(Spacing3{}), m.subject_id);
    for (std::size_t z = 0; z < v.dims.nz; ++z) {
        for (std::size_t y = 0; y < v.dims.ny; ++y) {
            const auto [row, col] = layout.pixel_of({0, y, z});
            std::copy_n(m.pixels.data.begin() + static_cast<std::ptrdiff_t>(row * m.pixels.cols + col), v.dims.nx,
                        v.data.begin() + static_cast<std::ptrdiff_t>(v.index(0, y, z)));
        }
    }
    return v;
}

Grid2D resize_bilinear(const Grid2D& g, std::size_t rows, std::size_t cols) {
    if (rows < 1 || cols < 1) throw DataError("resize target dims must be >= 1");
    if (g.rows < 1 || g.cols < 1) throw DataError("cannot resize an empty grid");
    if (rows == g.rows && cols == g.cols) return g;

    auto axis = [](std::size_t out, std::size_t in) {
        // (lower index, weight of upper index) per output sample
        std::vector<std::pair<std::size_t, double>> samples(out);
        for (std::size_t i = 0; i < out; ++i) {
            const double pos = out == 1 ? 0.0 : static_cast<double>(i) * static_cast<double>(in - 1) /
                                                    static_cast<double>(out - 1);
            auto lo = static_cast<std::size_t>(std::floor(pos));
            if (lo >= in - 1) lo = in > 1 ? in - 2 : 0;
            const double w = in == 1 ? 0.0 : pos - static_cast<double>(lo);
            samples[i] = {lo, w};
        }
        return samples;
    };
    const auto rs = axis(rows, g.rows);
    const auto cs = axis(cols, g.cols);

    Grid2D out(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        const auto [r0, wr] = rs[r];
        const auto r1 = g.rows == 1 ? r0 : r0 + 1;
        for (std::size_t c = 0; c < cols; ++c) {
            const auto [c0, wc] = cs[c];
            const auto c1 = g.cols == 1 ? c0 : c0 + 1;
            const double top = g.at(r0, c0) + wc * (g.at(r0, c1) - g.at(r0, c0));
            const double bottom = g.at(r1, c0) + wc * (g.at(r1, c1) - g.at(r1, c0));
            double value = top + wr * (bottom - top);
            // clamp away rounding excursions so the output stays within the local input range
            const double lo = std::min({g.at(r0, c0), g.at(r0, c1), g.at(r1, c0), g.at(r1, c1)});
            const double hi = std::max({g.at(r0, c0), g.at(r0, c1), g.at(r1, c0), g.at(r1, c1)});
            out.at(r, c) = std::clamp(value, lo, hi);
        }
    }
    return out;
}

Mosaic upsample_to_mosaic(const Grid2D& g, const MosaicLayout& layout) {
    Mosaic m;
    m.layout = layout;
    m.pixels = resize_bilinear(g, layout.mosaic_rows(), layout.mosaic_cols());
    return m;
}

IntensityRange cohort_range(std::span<const Volume> volumes) {
    if (volumes.empty()) throw DataError("cohort is empty");
    IntensityRange range{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (const auto& v : volumes) {
        for (double value : v.data) {
            range.min = std::min(range.min, value);
            range.max = std::max(range.max, value);
        }
    }
    return range;
}

void normalize_intensities(Volume& v, const IntensityRange& range) {
    const double span = range.max - range.min;
    for (auto& value : v.data) value = span > 0 ? (value - range.min) / span : 0.0;
}

std::vector<unsigned char> encode_pgm(const Grid2D& g) {
    const auto header = fmt::format("P5\n{} {}\n255\n", g.cols, g.rows);
    std::vector<unsigned char> bytes(header.begin(), header.end());
    bytes.reserve(header.size() + g.data.size());
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (double value : g.data) {
        lo = std::min(lo, value);
        hi = std::max(hi, value);
    }
    for (double value : g.data) {
        const double scaled = hi > lo ? std::round(255.0 * (value - lo) / (hi - lo)) : 0.0;
        bytes.push_back(static_cast<unsigned char>(std::clamp(scaled, 0.0, 255.0)));
    }
    return bytes;
}

void write_pgm(const Grid2D& g, const std::filesystem::path& path) {
    const auto bytes = encode_pgm(g);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(fmt::format("cannot write '{}'", path.string()));
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

} // namespace stitchnet
