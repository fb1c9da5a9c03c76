#pragma once

#include "cma/atlas.hpp"
#include "cma/core.hpp"
#include "cma/geometry.hpp"

#include <map>
#include <string>
#include <vector>

namespace cma::embed {

/// L x N matrix of regionally averaged local displacements, L = 3 * A * T.
/// Rows are ordered frame-major, then region, then (radial, circumferential,
/// longitudinal); see feature_index. Standardization constants are kept so
/// reconstruction errors can be reported in millimetres.
struct FeatureMatrix {
    Eigen::MatrixXd X;  // raw, mm
    int regions = geometry::kAhaRegionCount;
    int frames = 0;
    Eigen::VectorXd row_mean;
    Eigen::VectorXd row_scale;

    long feature_count() const { return X.rows(); }
    long subject_count() const { return X.cols(); }
    /// (X - mean) / scale rowwise; zero-variance rows pass through unscaled.
    Eigen::MatrixXd standardized() const;
    /// Inverse of standardized() applied to a reconstruction.
    Eigen::MatrixXd destandardize(const Eigen::MatrixXd& Z) const;
};

/// Row index of (frame, region, component); component 0 radial,
/// 1 circumferential, 2 longitudinal; regions are AHA labels 1..17.
int feature_index(int frame, int region, int component, int regions = geometry::kAhaRegionCount);
struct FeatureKey {
    int frame;
    int region;     // 1-based AHA label
    int component;  // 0..2
};
FeatureKey feature_key(int index, int regions = geometry::kAhaRegionCount);

/// Averages each subject's local-frame displacements over AHA regions and
/// assembles the feature matrix. Every subject must supply a Local-tagged
/// field on the atlas medial mesh carrying the shared labels.
FeatureMatrix build_features(const std::vector<atlas::DisplacementField>& local_fields,
                             const geometry::AhaLabels& labels);

struct Embedding {
    Eigen::MatrixXd D;  // d x N, columns aligned with the feature matrix
    std::string method;
    int d = 0;
    double reconstruction_error_mm = 0.0;
    std::map<std::string, double> hyperparameters;
    std::vector<double> explained_variance;  // pca only
};

/// PCA on standardized rows; d = smallest k reaching the cumulative
/// explained-variance target. Throws on zero-variance data.
Embedding pca_fit(const FeatureMatrix& features, double variance_target = 0.99);

struct LleConfig {
    int neighbours = 10;
    int d = 2;
    double regularization = 1e-3;  // scaled by trace of the local Gram
};

/// Locally linear embedding: s-NN graph on standardized columns, constrained
/// barycentric weights, bottom eigenvectors of (I-W)^T (I-W) discarding the
/// constant one. Throws if the neighbour graph is disconnected.
Embedding lle_fit(const FeatureMatrix& features, const LleConfig& config);

/// Barycentric reconstruction error in mm: neighbours and weights are
/// re-solved in the embedding space, applied to the standardized data
/// dictionary, then de-standardized.
double reconstruct_lle(const FeatureMatrix& features, const Embedding& embedding,
                       const LleConfig& config);

struct SdaConfig {
    /// Encoder widths after the input layer; the last entry is d.
    std::vector<int> layer_widths = {64, 32, 8};
    double learning_rate = 0.001;
    double corruption = 0.5;  // masking probability during pretraining
    int pretrain_epochs = 100;
    int finetune_epochs = 200;
    int batch_size = 32;
    std::uint64_t seed = 0;
    bool linear_activations = false;  // test configuration
};

/// Paper-proportioned desk-scale widths: hidden sizes 0.784, 0.392 and
/// 0.196 of the input dimension (rounded up), bottleneck d.
std::vector<int> default_sda_widths(long input_dim, int d);

/// Greedy layer-wise denoising pretraining followed by end-to-end
/// fine-tuning; sigmoid hidden units, linear reconstruction, squared error,
/// plain SGD. Deterministic given config.seed. Throws on divergence.
Embedding sda_fit(const FeatureMatrix& features, const SdaConfig& config);

struct GridSearchResult {
    int best_d = 0;
    std::vector<int> candidates;
    std::vector<double> errors_mm;
    bool non_elbow = false;  // monotone-decreasing curve; argmin is the edge
    Embedding best;
};

/// Evaluates d over powers of two in [2, 256] capped at min(L, N) - 1 and
/// returns the error-minimising fit (first candidate on ties). method is
/// "lle" or "sda"; jobs > 1 evaluates candidates in parallel.
GridSearchResult grid_search_d(const std::string& method, const FeatureMatrix& features,
                               const LleConfig& lle_config, const SdaConfig& sda_config,
                               int jobs = 1, int max_candidate = 256);

}  // namespace cma::embed
