#include "cma/embed.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cma::embed {

namespace {

[[noreturn]] void fail(const std::string& what) { throw std::invalid_argument("embed: " + what); }

}  // namespace

Eigen::MatrixXd FeatureMatrix::standardized() const {
    Eigen::MatrixXd Z = X;
    Z.colwise() -= row_mean;
    for (long r = 0; r < Z.rows(); ++r) {
        if (row_scale[r] > 0.0) Z.row(r) /= row_scale[r];
    }
    return Z;
}

Eigen::MatrixXd FeatureMatrix::destandardize(const Eigen::MatrixXd& Z) const {
    Eigen::MatrixXd out = Z;
    for (long r = 0; r < out.rows(); ++r) {
        if (row_scale[r] > 0.0) out.row(r) *= row_scale[r];
    }
    out.colwise() += row_mean;
    return out;
}

int feature_index(int frame, int region, int component, int regions) {
    return (frame * regions + (region - 1)) * 3 + component;
}

FeatureKey feature_key(int index, int regions) {
    FeatureKey key;
    key.component = index % 3;
    const int fr = index / 3;
    key.region = fr % regions + 1;
    key.frame = fr / regions;
    return key;
}

FeatureMatrix build_features(const std::vector<atlas::DisplacementField>& local_fields,
                             const geometry::AhaLabels& labels) {
    if (local_fields.empty()) fail("build_features: no subjects");
    const int regions = geometry::kAhaRegionCount;
    const std::size_t n_vertices = labels.size();
    const int frames = static_cast<int>(local_fields[0].frame_count());

    std::vector<std::vector<int>> region_vertices(regions);
    for (std::size_t v = 0; v < n_vertices; ++v) {
        const int label = labels.labels[v];
        if (label < 1 || label > regions) fail("build_features: label out of range");
        region_vertices[label - 1].push_back(static_cast<int>(v));
    }
    for (int r = 0; r < regions; ++r) {
        if (region_vertices[r].empty()) {
            fail("build_features: AHA region " + std::to_string(r + 1) + " is empty");
        }
    }

    const long L = static_cast<long>(3) * regions * frames;
    FeatureMatrix features;
    features.regions = regions;
    features.frames = frames;
    features.X.resize(L, static_cast<long>(local_fields.size()));
    for (std::size_t n = 0; n < local_fields.size(); ++n) {
        const auto& field = local_fields[n];
        if (field.tag != atlas::FrameTag::Local) {
            fail("build_features: subject " + std::to_string(n) + " is not in the local frame");
        }
        if (field.frame_count() != static_cast<std::size_t>(frames) ||
            field.vertex_count() != n_vertices) {
            fail("build_features: subject " + std::to_string(n) + " dimensions mismatch");
        }
        for (int t = 0; t < frames; ++t) {
            for (int r = 0; r < regions; ++r) {
                Vec3 sum = Vec3::Zero();
                for (int v : region_vertices[r]) sum += field.vectors[t][v];
                sum /= static_cast<double>(region_vertices[r].size());
                for (int comp = 0; comp < 3; ++comp) {
                    features.X(feature_index(t, r + 1, comp, regions), static_cast<long>(n)) =
                        sum[comp];
                }
            }
        }
    }
    if (!features.X.allFinite()) fail("build_features: non-finite feature entries");

    const long N = features.X.cols();
    features.row_mean = features.X.rowwise().mean();
    features.row_scale.resize(L);
    for (long r = 0; r < L; ++r) {
        const double var =
            (features.X.row(r).array() - features.row_mean[r]).square().sum() / N;
        features.row_scale[r] = var > 0.0 ? std::sqrt(var) : 0.0;
    }
    return features;
}

namespace {

// Standardization for matrices built outside build_features (tests feed raw
// matrices through this path).
void ensure_standardization(FeatureMatrix& f) {
    if (f.row_mean.size() == f.X.rows() && f.row_scale.size() == f.X.rows()) return;
    const long N = f.X.cols();
    f.row_mean = f.X.rowwise().mean();
    f.row_scale.resize(f.X.rows());
    for (long r = 0; r < f.X.rows(); ++r) {
        const double var = (f.X.row(r).array() - f.row_mean[r]).square().sum() / N;
        f.row_scale[r] = var > 0.0 ? std::sqrt(var) : 0.0;
    }
}

double rms_error_mm(const FeatureMatrix& f, const Eigen::MatrixXd& reconstruction_std) {
    const Eigen::MatrixXd diff = f.destandardize(reconstruction_std) - f.X;
    return std::sqrt(diff.squaredNorm() / static_cast<double>(diff.size()));
}

}  // namespace

Embedding pca_fit(const FeatureMatrix& features_in, double variance_target) {
    FeatureMatrix features = features_in;
    ensure_standardization(features);
    const long N = features.X.cols();
    if (N < 2) fail("pca_fit: need at least 2 subjects");
    const Eigen::MatrixXd Z = features.standardized();

    Eigen::BDCSVD<Eigen::MatrixXd> svd(Z, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd& sv = svd.singularValues();
    const double total = sv.squaredNorm();
    if (total <= 0.0) fail("pca_fit: zero-variance data (d = 0)");

    int d = 0;
    double cumulative = 0.0;
    std::vector<double> explained;
    for (long k = 0; k < sv.size(); ++k) {
        explained.push_back(sv[k] * sv[k] / total);
    }
    for (long k = 0; k < sv.size(); ++k) {
        cumulative += explained[k];
        d = static_cast<int>(k + 1);
        if (cumulative >= variance_target - 1e-15) break;
    }

    Embedding emb;
    emb.method = "pca";
    emb.d = d;
    emb.explained_variance = std::move(explained);
    emb.D = svd.matrixU().leftCols(d).transpose() * Z;
    const Eigen::MatrixXd reconstruction = svd.matrixU().leftCols(d) * emb.D;
    emb.reconstruction_error_mm = rms_error_mm(features, reconstruction);
    emb.hyperparameters["variance_target"] = variance_target;
    return emb;
}

namespace {

std::vector<std::vector<int>> nearest_neighbours(const Eigen::MatrixXd& points_cols, int s) {
    const long N = points_cols.cols();
    std::vector<std::vector<int>> nn(N);
    std::vector<std::pair<double, int>> dist(N);
    for (long i = 0; i < N; ++i) {
        for (long j = 0; j < N; ++j) {
            dist[j] = {(points_cols.col(i) - points_cols.col(j)).squaredNorm(),
                       static_cast<int>(j)};
        }
        dist[i].first = std::numeric_limits<double>::infinity();
        std::partial_sort(dist.begin(), dist.begin() + s, dist.end());
        nn[i].reserve(s);
        for (int k = 0; k < s; ++k) nn[i].push_back(dist[k].second);
    }
    return nn;
}

// Constrained barycentric weights for point i against its neighbour set.
Eigen::VectorXd barycentric_weights(const Eigen::MatrixXd& points_cols, long i,
                                    const std::vector<int>& nbrs, double regularization) {
    const int s = static_cast<int>(nbrs.size());
    Eigen::MatrixXd diffs(points_cols.rows(), s);
    for (int k = 0; k < s; ++k) {
        diffs.col(k) = points_cols.col(i) - points_cols.col(nbrs[k]);
    }
    Eigen::MatrixXd gram = diffs.transpose() * diffs;
    double reg = regularization * gram.trace() / s;
    if (!(reg > 0.0)) reg = 1e-12;
    gram.diagonal().array() += reg;
    Eigen::VectorXd w = gram.ldlt().solve(Eigen::VectorXd::Ones(s));
    const double total = w.sum();
    if (total == 0.0) fail("lle: degenerate local weight system");
    return w / total;
}

void check_connected(const std::vector<std::vector<int>>& nn) {
    const int N = static_cast<int>(nn.size());
    std::vector<int> parent(N);
    std::iota(parent.begin(), parent.end(), 0);
    std::function<int(int)> find = [&](int x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    for (int i = 0; i < N; ++i) {
        for (int j : nn[i]) {
            parent[find(i)] = find(j);
        }
    }
    std::map<int, int> components;
    for (int i = 0; i < N; ++i) components[find(i)]++;
    if (components.size() > 1) {
        std::string sizes;
        for (const auto& [root, count] : components) {
            if (!sizes.empty()) sizes += ", ";
            sizes += std::to_string(count);
        }
        throw std::runtime_error("embed: lle neighbour graph is disconnected (component sizes " +
                                 sizes + ")");
    }
}

}  // namespace

Embedding lle_fit(const FeatureMatrix& features_in, const LleConfig& config) {
    FeatureMatrix features = features_in;
    ensure_standardization(features);
    const long N = features.X.cols();
    if (config.neighbours < 1) fail("lle_fit: neighbours must be >= 1");
    if (N <= config.neighbours) fail("lle_fit: need more subjects than neighbours");
    if (config.d < 1 || config.d >= N) fail("lle_fit: d must be in [1, N)");
    const Eigen::MatrixXd Z = features.standardized();

    const auto nn = nearest_neighbours(Z, config.neighbours);
    check_connected(nn);

    Eigen::MatrixXd W = Eigen::MatrixXd::Zero(N, N);
    for (long i = 0; i < N; ++i) {
        const Eigen::VectorXd w = barycentric_weights(Z, i, nn[i], config.regularization);
        for (int k = 0; k < config.neighbours; ++k) {
            W(i, nn[i][k]) = w[k];
        }
    }

    const Eigen::MatrixXd IW = Eigen::MatrixXd::Identity(N, N) - W;
    const Eigen::MatrixXd M = IW.transpose() * IW;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M);
    if (es.info() != Eigen::Success) fail("lle_fit: eigendecomposition failed");

    // Bottom d+1 eigenvectors; the smallest belongs to the constant mode.
    Embedding emb;
    emb.method = "lle";
    emb.d = config.d;
    emb.D.resize(config.d, N);
    const double scale = std::sqrt(static_cast<double>(N));
    for (int k = 0; k < config.d; ++k) {
        emb.D.row(k) = es.eigenvectors().col(k + 1).transpose() * scale;
    }
    emb.hyperparameters["neighbours"] = config.neighbours;
    emb.hyperparameters["regularization"] = config.regularization;
    emb.reconstruction_error_mm = reconstruct_lle(features, emb, config);
    return emb;
}

double reconstruct_lle(const FeatureMatrix& features_in, const Embedding& embedding,
                       const LleConfig& config) {
    FeatureMatrix features = features_in;
    ensure_standardization(features);
    const long N = features.X.cols();
    if (embedding.D.cols() != N) fail("reconstruct_lle: embedding does not match features");
    const Eigen::MatrixXd Z = features.standardized();

    const int s = std::min<int>(config.neighbours, static_cast<int>(N - 1));
    const auto nn = nearest_neighbours(embedding.D, s);
    Eigen::MatrixXd reconstruction(Z.rows(), N);
    for (long i = 0; i < N; ++i) {
        const Eigen::VectorXd w = barycentric_weights(embedding.D, i, nn[i],
                                                      config.regularization);
        Eigen::VectorXd col = Eigen::VectorXd::Zero(Z.rows());
        for (int k = 0; k < s; ++k) col += w[k] * Z.col(nn[i][k]);
        reconstruction.col(i) = col;
    }
    return rms_error_mm(features, reconstruction);
}

namespace {

struct Layer {
    Eigen::MatrixXd W;
    Eigen::VectorXd b;
};

Eigen::MatrixXd activate(const Eigen::MatrixXd& pre, bool linear) {
    if (linear) return pre;
    return (1.0 / (1.0 + (-pre.array()).exp())).matrix();
}

Eigen::MatrixXd activate_grad(const Eigen::MatrixXd& act, bool linear) {
    if (linear) return Eigen::MatrixXd::Ones(act.rows(), act.cols());
    return (act.array() * (1.0 - act.array())).matrix();
}

Layer make_layer(long in, long out, Rng& rng) {
    const double r = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> unif(-r, r);
    Layer layer;
    layer.W.resize(out, in);
    for (long i = 0; i < out; ++i) {
        for (long j = 0; j < in; ++j) layer.W(i, j) = unif(rng);
    }
    layer.b = Eigen::VectorXd::Zero(out);
    return layer;
}

Eigen::MatrixXd mask_corrupt(const Eigen::MatrixXd& batch, double corruption, Rng& rng) {
    if (corruption <= 0.0) return batch;
    std::bernoulli_distribution drop(corruption);
    Eigen::MatrixXd out = batch;
    for (long j = 0; j < out.cols(); ++j) {
        for (long i = 0; i < out.rows(); ++i) {
            if (drop(rng)) out(i, j) = 0.0;
        }
    }
    return out;
}

struct AutoencoderState {
    std::vector<Layer> encoder;
    std::vector<Layer> decoder;  // mirrored, decoder.back() reconstructs the input
    bool linear = false;
};

// Forward through encoder then decoder; activations[k] holds the output of
// stage k (activations[0] = input). Hidden stages are sigmoid (or linear in
// the test configuration); the final reconstruction stage is always linear.
std::vector<Eigen::MatrixXd> forward(const AutoencoderState& net, const Eigen::MatrixXd& input) {
    std::vector<Eigen::MatrixXd> acts;
    acts.reserve(net.encoder.size() + net.decoder.size() + 1);
    acts.push_back(input);
    for (const auto& layer : net.encoder) {
        acts.push_back(activate((layer.W * acts.back()).colwise() + layer.b, net.linear));
    }
    for (std::size_t k = 0; k < net.decoder.size(); ++k) {
        const auto& layer = net.decoder[k];
        const bool last = (k + 1 == net.decoder.size());
        acts.push_back(
            activate((layer.W * acts.back()).colwise() + layer.b, net.linear || last));
    }
    return acts;
}

// One SGD step on 0.5 * ||reconstruction - target||^2 (sum over the batch,
// scaled by 1/batch). Returns the batch loss.
double backward_step(AutoencoderState& net, const std::vector<Eigen::MatrixXd>& acts,
                     const Eigen::MatrixXd& target, double lr) {
    const long batch = target.cols();
    std::vector<Layer*> layers;
    for (auto& l : net.encoder) layers.push_back(&l);
    for (auto& l : net.decoder) layers.push_back(&l);

    Eigen::MatrixXd delta = acts.back() - target;  // linear output stage
    const double loss = 0.5 * delta.squaredNorm() / static_cast<double>(batch);
    for (int k = static_cast<int>(layers.size()) - 1; k >= 0; --k) {
        const Eigen::MatrixXd& input = acts[k];
        const Eigen::MatrixXd grad_W = delta * input.transpose() / static_cast<double>(batch);
        const Eigen::VectorXd grad_b = delta.rowwise().sum() / static_cast<double>(batch);
        if (k > 0) {
            // Stage k-1 is always a hidden stage; its output is acts[k].
            Eigen::MatrixXd back = layers[k]->W.transpose() * delta;
            delta = back.cwiseProduct(activate_grad(acts[k], net.linear));
        }
        layers[k]->W -= lr * grad_W;
        layers[k]->b -= lr * grad_b;
    }
    return loss;
}

std::vector<long> shuffled_indices(long n, Rng& rng) {
    std::vector<long> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    return idx;
}

Eigen::MatrixXd gather_columns(const Eigen::MatrixXd& data, const std::vector<long>& idx,
                               long first, long count) {
    Eigen::MatrixXd out(data.rows(), count);
    for (long k = 0; k < count; ++k) out.col(k) = data.col(idx[first + k]);
    return out;
}

void check_finite_loss(double loss, int epoch, const char* phase) {
    if (!std::isfinite(loss)) {
        throw std::runtime_error("embed: sda " + std::string(phase) +
                                 " diverged (non-finite loss at epoch " + std::to_string(epoch) +
                                 ")");
    }
}

}  // namespace

std::vector<int> default_sda_widths(long input_dim, int d) {
    const auto scaled = [input_dim](double f) {
        return std::max(2, static_cast<int>(std::ceil(f * static_cast<double>(input_dim))));
    };
    return {scaled(2000.0 / 2550.0), scaled(1000.0 / 2550.0), scaled(500.0 / 2550.0), d};
}

Embedding sda_fit(const FeatureMatrix& features_in, const SdaConfig& config) {
    FeatureMatrix features = features_in;
    ensure_standardization(features);
    const long N = features.X.cols();
    const long L = features.X.rows();
    if (config.layer_widths.empty()) fail("sda_fit: no layers");
    if (config.corruption < 0.0 || config.corruption >= 1.0) {
        fail("sda_fit: corruption must be in [0,1)");
    }
    long prev = L;
    for (int w : config.layer_widths) {
        if (w < 1) fail("sda_fit: width must be positive");
        if (w >= prev) fail("sda_fit: widths must strictly decrease after the input layer");
        prev = w;
    }
    const Eigen::MatrixXd Z = features.standardized();
    Rng rng(config.seed + 0x5da5da);

    AutoencoderState net;
    net.linear = config.linear_activations;
    std::vector<long> widths = {L};
    for (int w : config.layer_widths) widths.push_back(w);

    // Greedy denoising pretraining, one hidden stage at a time: corrupt the
    // stage input, encode through the sigmoid, reconstruct the clean input
    // with a linear decoder.
    Eigen::MatrixXd H = Z;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        Layer enc = make_layer(widths[l], widths[l + 1], rng);
        Layer dec = make_layer(widths[l + 1], widths[l], rng);
        const double lr = config.learning_rate;
        for (int epoch = 0; epoch < config.pretrain_epochs; ++epoch) {
            const auto order = shuffled_indices(H.cols(), rng);
            double loss = 0.0;
            for (long first = 0; first < H.cols(); first += config.batch_size) {
                const long count = std::min<long>(config.batch_size, H.cols() - first);
                const Eigen::MatrixXd clean = gather_columns(H, order, first, count);
                const Eigen::MatrixXd noisy = mask_corrupt(clean, config.corruption, rng);
                const Eigen::MatrixXd hidden =
                    activate((enc.W * noisy).colwise() + enc.b, net.linear);
                const Eigen::MatrixXd recon = (dec.W * hidden).colwise() + dec.b;
                const Eigen::MatrixXd delta_out = recon - clean;
                loss += 0.5 * delta_out.squaredNorm() / static_cast<double>(count);
                const Eigen::MatrixXd delta_hidden =
                    (dec.W.transpose() * delta_out)
                        .cwiseProduct(activate_grad(hidden, net.linear));
                dec.W -= lr * (delta_out * hidden.transpose() / static_cast<double>(count));
                dec.b -= lr * (delta_out.rowwise().sum() / static_cast<double>(count));
                enc.W -= lr * (delta_hidden * noisy.transpose() / static_cast<double>(count));
                enc.b -= lr * (delta_hidden.rowwise().sum() / static_cast<double>(count));
            }
            check_finite_loss(loss, epoch, "pretraining");
        }
        net.encoder.push_back(enc);
        net.decoder.insert(net.decoder.begin(), dec);
        H = activate((enc.W * H).colwise() + enc.b, net.linear);
    }

    // End-to-end fine-tuning on clean inputs.
    for (int epoch = 0; epoch < config.finetune_epochs; ++epoch) {
        const auto order = shuffled_indices(N, rng);
        double loss = 0.0;
        for (long first = 0; first < N; first += config.batch_size) {
            const long count = std::min<long>(config.batch_size, N - first);
            const Eigen::MatrixXd batch = gather_columns(Z, order, first, count);
            const auto acts = forward(net, batch);
            loss += backward_step(net, acts, batch, config.learning_rate);
        }
        check_finite_loss(loss, epoch, "fine-tuning");
    }

    const auto acts = forward(net, Z);
    Embedding emb;
    emb.method = "sda";
    emb.d = config.layer_widths.back();
    emb.D = acts[net.encoder.size()];
    emb.reconstruction_error_mm = rms_error_mm(features, acts.back());
    emb.hyperparameters["learning_rate"] = config.learning_rate;
    emb.hyperparameters["corruption"] = config.corruption;
    emb.hyperparameters["pretrain_epochs"] = config.pretrain_epochs;
    emb.hyperparameters["finetune_epochs"] = config.finetune_epochs;
    emb.hyperparameters["batch_size"] = config.batch_size;
    return emb;
}

GridSearchResult grid_search_d(const std::string& method, const FeatureMatrix& features,
                               const LleConfig& lle_config, const SdaConfig& sda_config,
                               int jobs, int max_candidate) {
    if (method != "lle" && method != "sda") fail("grid_search_d: method must be lle or sda");
    const long cap = std::min(features.X.rows(), features.X.cols()) - 1;
    GridSearchResult result;
    for (int d = 2; d <= max_candidate; d *= 2) {
        if (d > cap) break;
        result.candidates.push_back(d);
    }
    if (result.candidates.empty()) fail("grid_search_d: no feasible candidates");

    result.errors_mm.assign(result.candidates.size(), 0.0);
    std::vector<Embedding> fits(result.candidates.size());
    std::vector<std::string> errors(result.candidates.size());
    parallel_for(result.candidates.size(), jobs, [&](std::size_t k) {
        try {
            if (method == "lle") {
                LleConfig cfg = lle_config;
                cfg.d = result.candidates[k];
                fits[k] = lle_fit(features, cfg);
            } else {
                SdaConfig cfg = sda_config;
                cfg.layer_widths.back() = result.candidates[k];
                fits[k] = sda_fit(features, cfg);
            }
            result.errors_mm[k] = fits[k].reconstruction_error_mm;
        } catch (const std::exception& e) {
            errors[k] = e.what();
            result.errors_mm[k] = std::numeric_limits<double>::quiet_NaN();
        }
    });

    int best = -1;
    for (std::size_t k = 0; k < result.candidates.size(); ++k) {
        if (std::isnan(result.errors_mm[k])) continue;
        if (best < 0 || result.errors_mm[k] < result.errors_mm[best]) {
            best = static_cast<int>(k);
        }
    }
    if (best < 0) {
        std::string detail;
        for (const auto& e : errors) {
            if (!e.empty()) detail += "\n  " + e;
        }
        throw std::runtime_error("embed: grid_search_d: every candidate failed:" + detail);
    }
    result.best_d = result.candidates[best];
    result.best = std::move(fits[best]);
    bool monotone = true;
    for (std::size_t k = 1; k < result.errors_mm.size(); ++k) {
        if (!(result.errors_mm[k] < result.errors_mm[k - 1])) monotone = false;
    }
    result.non_elbow = monotone && best == static_cast<int>(result.candidates.size()) - 1;
    return result;
}

}  // namespace cma::embed
