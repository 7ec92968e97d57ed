#pragma once

#include <span>
#include <vector>

#include "stitchnet/classifier.hpp"
#include "stitchnet/regressor.hpp"
#include "stitchnet/volume.hpp"

namespace stitchnet {

enum class Normalization { Raw, Peak };
enum class ClassTag { Below, Above, SingleSubject };

/// Non-negative attribution at classifier input resolution.
struct SaliencyMap {
    Grid2D grid;
    Normalization normalization = Normalization::Raw;
    ClassTag class_tag = ClassTag::SingleSubject;
};

/// Per-voxel attribution restacked into scan space.
using SaliencyVolume = Volume;

/// |d logit / d input| per pixel of a network with a (1, H, W) input and scalar output.
SaliencyMap saliency(const nn::Network& net, const nn::Tensor& x);
SaliencyMap saliency(const TrainedClassifier& model, const nn::Tensor& x);

/// Divides by the maximum so the peak is exactly 1; an all-zero map is left as is.
void peak_normalize(SaliencyMap& map);

/// Pixelwise mean of the raw maps of every input labelled which_class, then peak-normalized.
SaliencyMap class_average_saliency(const TrainedClassifier& model, std::span<const nn::Tensor> inputs,
                                   std::span<const int> labels, int which_class);

/// Upsample to mosaic resolution and unstitch; padding cells are dropped.
SaliencyVolume restack_saliency(const SaliencyMap& map, const MosaicLayout& layout, const Dims3& original_dims);

enum class ProjectionMode { Max, Mean };

struct ProjectionViews {
    Grid2D axial;    // (ny, nx), reduced along z
    Grid2D sagittal; // (nz, ny), reduced along x
    Grid2D coronal;  // (nz, nx), reduced along y
};

/// Projections of a volume along each axis. With shared_normalization all three
/// views are divided by their common maximum.
ProjectionViews project_views(const SaliencyVolume& v, ProjectionMode mode = ProjectionMode::Max,
                              bool shared_normalization = true);

struct PcaModel {
    std::vector<double> mean;
    std::vector<std::vector<double>> components; // unit-norm, mutually orthogonal
    std::vector<double> explained_variance;      // non-increasing

    std::vector<double> project(std::span<const double> row) const;
};

/// Symmetric eigendecomposition by cyclic Jacobi rotations; eigenvalues descending.
struct EigenDecomposition {
    std::vector<double> values;
    std::vector<std::vector<double>> vectors; // vectors[i] pairs with values[i]
};
EigenDecomposition jacobi_eigen(std::vector<std::vector<double>> symmetric, double tolerance = 1e-12,
                                std::size_t max_sweeps = 100);

struct PcaResult {
    PcaModel model;
    Matrix projections; // n x components
};

/// Top principal components of the sample covariance. The largest-magnitude
/// entry of each component is made positive.
PcaResult pca_fit_project(const Matrix& rows, std::size_t n_components = 2);

/// Biased (V-statistic) distance correlation of two paired samples, in [0, 1].
double distance_correlation(const Matrix& x, const Matrix& y);

} // namespace stitchnet
