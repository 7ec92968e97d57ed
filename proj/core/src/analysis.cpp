#include "stitchnet/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "stitchnet/errors.hpp"

namespace stitchnet {

namespace {

double off_diagonal_norm(const std::vector<std::vector<double>>& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a.size(); ++j)
            if (i != j) s += a[i][j] * a[i][j];
    return std::sqrt(s);
}

// Double-centered pairwise Euclidean distances.
std::vector<double> centered_distances(const Matrix& rows) {
    const auto n = rows.size();
    std::vector<double> d(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < rows[i].size(); ++k) s += (rows[i][k] - rows[j][k]) * (rows[i][k] - rows[j][k]);
            d[i * n + j] = d[j * n + i] = std::sqrt(s);
        }
    }
    std::vector<double> row_mean(n, 0.0);
    double grand = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) row_mean[i] += d[i * n + j];
        grand += row_mean[i];
        row_mean[i] /= static_cast<double>(n);
    }
    grand /= static_cast<double>(n * n);
    // the matrix is symmetric, so column means equal row means
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) d[i * n + j] += grand - row_mean[i] - row_mean[j];
    return d;
}

void check_sample(const Matrix& m, const char* name) {
    if (m.size() < 2) throw DataError(fmt::format("distance correlation: {} needs at least 2 rows", name));
    const auto width = m.front().size();
    bool constant = true;
    for (const auto& r : m) {
        if (r.size() != width) throw DataError(fmt::format("distance correlation: {} is ragged", name));
        if (r != m.front()) constant = false;
    }
    if (constant) throw NumericError(fmt::format("distance correlation: {} is constant across rows", name));
}

} // namespace

SaliencyMap saliency(const nn::Network& net, const nn::Tensor& x) {
    if (x.shape.size() != 3 || x.shape[0] != 1) throw DataError("saliency expects a single-channel (1, H, W) input");
    if (net.output_shape() != nn::Shape{1}) throw DataError("saliency expects a scalar-output network");
    const auto fwd = net.forward(x);
    const auto grads = net.backward(fwd.cache, nn::Tensor({1}, {1.0}));
    SaliencyMap map;
    map.grid = Grid2D(x.shape[1], x.shape[2]);
    std::transform(grads.input.data.begin(), grads.input.data.end(), map.grid.data.begin(),
                   [](double g) { return std::abs(g); });
    return map;
}

SaliencyMap saliency(const TrainedClassifier& model, const nn::Tensor& x) { return saliency(model.network, x); }

void peak_normalize(SaliencyMap& map) {
    const double peak = map.grid.data.empty() ? 0.0 : *std::max_element(map.grid.data.begin(), map.grid.data.end());
    if (peak > 0.0)
        for (auto& v : map.grid.data) v /= peak;
    map.normalization = Normalization::Peak;
}

SaliencyMap class_average_saliency(const TrainedClassifier& model, std::span<const nn::Tensor> inputs,
                                   std::span<const int> labels, int which_class) {
    if (inputs.size() != labels.size()) throw DataError("class_average_saliency: inputs and labels differ in length");
    SaliencyMap avg;
    std::size_t count = 0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (labels[i] != which_class) continue;
        const auto m = saliency(model, inputs[i]);
        if (count == 0) avg.grid = Grid2D(m.grid.rows, m.grid.cols);
        for (std::size_t j = 0; j < m.grid.data.size(); ++j) avg.grid.data[j] += m.grid.data[j];
        ++count;
    }
    if (count == 0) throw DataError(fmt::format("class {} has no subjects to average", which_class));
    for (auto& v : avg.grid.data) v /= static_cast<double>(count);
    avg.class_tag = which_class == 0 ? ClassTag::Below : ClassTag::Above;
    peak_normalize(avg);
    return avg;
}

SaliencyVolume restack_saliency(const SaliencyMap& map, const MosaicLayout& layout, const Dims3& original_dims) {
    if (layout.volume_dims() != original_dims)
        throw DataError(fmt::format("restack: layout describes {}x{}x{} but the cohort is {}x{}x{}", layout.slice_nx,
                                    layout.slice_ny, layout.n_slices, original_dims.nx, original_dims.ny,
                                    original_dims.nz));
    return unstitch(upsample_to_mosaic(map.grid, layout));
}

ProjectionViews project_views(const SaliencyVolume& v, ProjectionMode mode, bool shared_normalization) {
    v.validate();
    const auto [nx, ny, nz] = v.dims;
    const bool use_max = mode == ProjectionMode::Max;
    const double init = use_max ? -std::numeric_limits<double>::infinity() : 0.0;
    ProjectionViews p{Grid2D(ny, nx, init), Grid2D(nz, ny, init), Grid2D(nz, nx, init)};
    auto fold = [use_max](double& acc, double value) { acc = use_max ? std::max(acc, value) : acc + value; };
    for (std::size_t z = 0; z < nz; ++z) {
        for (std::size_t y = 0; y < ny; ++y) {
            for (std::size_t x = 0; x < nx; ++x) {
                const double value = v.at(x, y, z);
                fold(p.axial.at(y, x), value);
                fold(p.sagittal.at(z, y), value);
                fold(p.coronal.at(z, x), value);
            }
        }
    }
    if (!use_max) {
        for (auto& value : p.axial.data) value /= static_cast<double>(nz);
        for (auto& value : p.sagittal.data) value /= static_cast<double>(nx);
        for (auto& value : p.coronal.data) value /= static_cast<double>(ny);
    }
    if (shared_normalization) {
        double peak = 0.0;
        for (const auto* g : {&p.axial, &p.sagittal, &p.coronal})
            for (double value : g->data) peak = std::max(peak, std::abs(value));
        if (peak > 0.0)
            for (auto* g : {&p.axial, &p.sagittal, &p.coronal})
                for (auto& value : g->data) value /= peak;
    }
    return p;
}

std::vector<double> PcaModel::project(std::span<const double> row) const {
    if (row.size() != mean.size()) throw DataError("pca: row width does not match the fitted model");
    std::vector<double> out;
    for (const auto& c : components) {
        double s = 0.0;
        for (std::size_t j = 0; j < row.size(); ++j) s += (row[j] - mean[j]) * c[j];
        out.push_back(s);
    }
    return out;
}

EigenDecomposition jacobi_eigen(std::vector<std::vector<double>> a, double tolerance, std::size_t max_sweeps) {
    const auto n = a.size();
    for (const auto& r : a)
        if (r.size() != n) throw DataError("jacobi_eigen: matrix is not square");
    std::vector<std::vector<double>> v(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) v[i][i] = 1.0;

    double scale = 0.0;
    for (const auto& r : a)
        for (double x : r) scale = std::max(scale, std::abs(x));
    const double stop = tolerance * std::max(scale, 1.0);

    for (std::size_t sweep = 0; sweep < max_sweeps && off_diagonal_norm(a) >= stop; ++sweep) {
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (a[p][q] == 0.0) continue;
                const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a[k][p], akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a[p][k], aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v[k][p], vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    if (off_diagonal_norm(a) >= stop) throw NumericError("jacobi_eigen did not converge");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return a[i][i] > a[j][j]; });
    EigenDecomposition out;
    for (auto i : order) {
        out.values.push_back(a[i][i]);
        std::vector<double> col(n);
        for (std::size_t k = 0; k < n; ++k) col[k] = v[k][i];
        out.vectors.push_back(std::move(col));
    }
    return out;
}

PcaResult pca_fit_project(const Matrix& rows, std::size_t n_components) {
    if (rows.size() < 3) throw DataError("pca needs at least 3 rows");
    const auto p = rows.front().size();
    if (n_components < 1 || n_components > p) throw UsageError("pca: invalid component count");

    PcaResult result;
    auto& model = result.model;
    model.mean.assign(p, 0.0);
    for (const auto& r : rows) {
        if (r.size() != p) throw DataError("pca: ragged feature matrix");
        for (std::size_t j = 0; j < p; ++j) model.mean[j] += r[j];
    }
    for (auto& m : model.mean) m /= static_cast<double>(rows.size());

    std::vector<std::vector<double>> cov(p, std::vector<double>(p, 0.0));
    for (const auto& r : rows)
        for (std::size_t i = 0; i < p; ++i) {
            const double di = r[i] - model.mean[i];
            for (std::size_t j = i; j < p; ++j) cov[i][j] += di * (r[j] - model.mean[j]);
        }
    double total = 0.0;
    for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = i; j < p; ++j) {
            cov[i][j] /= static_cast<double>(rows.size() - 1);
            cov[j][i] = cov[i][j];
        }
        total += cov[i][i];
    }
    if (!(total > 0.0)) throw NumericError("pca: zero total variance");

    const auto eig = jacobi_eigen(std::move(cov));
    for (std::size_t c = 0; c < n_components; ++c) {
        auto vec = eig.vectors[c];
        const auto largest = std::max_element(vec.begin(), vec.end(),
                                              [](double a, double b) { return std::abs(a) < std::abs(b); });
        if (*largest < 0)
            for (auto& x : vec) x = -x;
        model.components.push_back(std::move(vec));
        model.explained_variance.push_back(std::max(eig.values[c], 0.0));
    }
    for (const auto& r : rows) result.projections.push_back(model.project(r));
    return result;
}

double distance_correlation(const Matrix& x, const Matrix& y) {
    check_sample(x, "X");
    check_sample(y, "Y");
    if (x.size() != y.size()) throw DataError("distance correlation: X and Y differ in row count");
    const auto a = centered_distances(x);
    const auto b = centered_distances(y);
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    const double n2 = static_cast<double>(a.size());
    const double dcov2 = std::max(ab / n2, 0.0);
    const double dvar_x = aa / n2, dvar_y = bb / n2;
    if (!(dvar_x > 0.0) || !(dvar_y > 0.0)) throw NumericError("distance correlation: degenerate sample");
    return std::clamp(std::sqrt(dcov2 / std::sqrt(dvar_x * dvar_y)), 0.0, 1.0);
}

} // namespace stitchnet
