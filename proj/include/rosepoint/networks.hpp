#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rosepoint/autodiff.hpp"
#include "rosepoint/preprocess.hpp"
#include "rosepoint/rng.hpp"

namespace rosepoint {

enum class Architecture { PointNet, PointNetPP, DGCNN, PointCNN, ShellNet, RIConv };

const char* to_string(Architecture arch);
Architecture architecture_from_string(const std::string& name);

// --- geometric grouping primitives ---------------------------------------

// Greedy farthest-first traversal; deterministic for a fixed start index.
std::vector<int> farthest_point_sampling(const std::vector<Vec3>& positions, int count,
                                         int start = 0);

// Per center: indices within radius (center always included); seeded random
// subset when more than group_size candidates, padding by repetition when
// fewer.
std::vector<std::vector<int>> ball_query(const std::vector<Vec3>& positions,
                                         const std::vector<int>& centers, double radius,
                                         int group_size, std::uint64_t seed);

// K nearest rows of `base` per row of `query` (Euclidean, ties by lower
// index), sorted by increasing distance.
std::vector<std::vector<int>> knn(const std::vector<std::vector<double>>& query,
                                  const std::vector<std::vector<double>>& base, int k);
std::vector<std::vector<int>> knn_points(const std::vector<Vec3>& query,
                                         const std::vector<Vec3>& base, int k);

// Rotation-invariant per-neighbor rows (|p-r|, |p-c|, angle(p-r, c-r)) with a
// bin index along the r->c reference axis.
struct RIFeatureRows {
    std::vector<std::array<double, 3>> rows;
    std::vector<int> bin;  // in [0, n_bins)
};
RIFeatureRows ri_features(const std::vector<Vec3>& group, const Vec3& representative, int n_bins);

// --- layer plans ----------------------------------------------------------

struct SALayerPlan {
    int p = 0;            // sampled representative points
    double radius = 0.0;  // cm
    int m = 0;            // group size
    std::vector<int> mlp;
};

struct FPLayerPlan {
    std::vector<int> mlp;
};

struct XConvLayerPlan {
    int p = 0;
    int k = 0;
    int d = 1;  // dilation
    int channels = 0;
};

struct ShellLayerPlan {
    int p = 0;
    int k = 0;  // points per shell (ShellNet) / neighbors per bin budget (RIConv)
    int d = 1;  // shells (ShellNet) / bins (RIConv)
    int channels = 0;
};

struct ModelSpec {
    Architecture architecture = Architecture::PointNet;
    int n_points = 4096;
    int n_classes = kNumClasses;

    // PointNet
    std::vector<int> pointnet_point_mlp;
    std::vector<int> pointnet_fc;    // FC stack after max pooling (includes the extra FC)
    std::vector<int> pointnet_head;  // MLPs after concatenation (includes the extra MLP)
    bool pointnet_tnet = false;      // input/feature transforms, off by default

    // PointNet++ (exactly 5 SA + 5 FP)
    std::vector<SALayerPlan> sa_layers;
    std::vector<FPLayerPlan> fp_layers;

    // DGCNN (exactly 2 EdgeConv)
    int dgcnn_k = 32;
    std::vector<std::vector<int>> edgeconv_mlps;
    int dgcnn_global_channels = 0;
    std::vector<int> dgcnn_head;

    // PointCNN
    std::vector<XConvLayerPlan> xconv_encoder;
    std::vector<XConvLayerPlan> xconv_decoder;
    std::vector<int> pointcnn_head;  // includes the extra FC

    // ShellNet / RIConv
    std::vector<ShellLayerPlan> shell_encoder;
    std::vector<int> shell_head;
    int ri_bins = 4;

    void validate() const;

    enum class Preset { Full, Desk, Tiny };
    static ModelSpec defaults(Architecture arch, Preset preset = Preset::Full);

    std::string to_config() const;
    static ModelSpec from_config(const std::string& text);
};

// --- differentiable building blocks ---------------------------------------

struct Dense {
    Tensor weight, bias, gamma, beta;
    BatchNormState bn;
    bool use_bn = true;
    bool use_relu = true;

    void init(Rng& rng, int in, int out, bool with_bn = true, bool with_relu = true);
    Tensor apply(const Tensor& x, bool training);
};

struct BlockFeatures {
    std::vector<Vec3> positions;
    Tensor features;  // rows x channels; undefined means positions only
};

struct SAWeights {
    std::vector<Dense> mlp;
};
struct FPWeights {
    std::vector<Dense> mlp;
};
struct EdgeConvWeights {
    std::vector<Dense> mlp;
};
struct XConvWeights {
    Dense lift1, lift2;      // coordinate lifting MLP
    Dense trans1, trans2;    // K*K transform prediction MLP
    Dense conv;              // final aggregation
};
struct ShellWeights {
    std::vector<Dense> point_mlp;  // shared MLP before the per-shell max pool
    Dense shell_conv;              // 1-D convolution across the shell sequence
};

// FPS -> ball query -> recentered coordinates -> shared MLP -> per-group max.
BlockFeatures set_abstraction(const BlockFeatures& in, const SALayerPlan& plan, SAWeights& weights,
                              bool training, std::uint64_t seed);

// 3-NN inverse-distance interpolation, concat skip features, shared MLP.
Tensor feature_propagation(const BlockFeatures& coarse, const std::vector<Vec3>& fine_positions,
                           const Tensor& skip_features, FPWeights& weights, bool training);

// Dynamic-graph edge convolution; the kNN graph lives in the current feature
// space (coordinate space when features are the raw coordinates).
Tensor edge_conv(const Tensor& features, int k, EdgeConvWeights& weights, bool training);

// X-Conv at explicitly given representative points (decoder path).
BlockFeatures x_conv_at(const std::vector<Vec3>& representatives,
                        const std::vector<Vec3>& positions, const Tensor& features,
                        const XConvLayerPlan& plan, XConvWeights& weights, bool training);
// Representatives chosen by FPS (encoder path).
BlockFeatures x_conv(const std::vector<Vec3>& positions, const Tensor& features,
                     const XConvLayerPlan& plan, XConvWeights& weights, bool training);

BlockFeatures shell_conv(const std::vector<Vec3>& positions, const Tensor& features,
                         const ShellLayerPlan& plan, ShellWeights& weights, bool training);

// RIConv layer: rotation-invariant features binned along the reference axis.
BlockFeatures ri_conv(const std::vector<Vec3>& positions, const Tensor& features,
                      const ShellLayerPlan& plan, int n_bins, ShellWeights& weights, bool training);

// --- assembled model ------------------------------------------------------

struct Provenance {
    std::string experiment_tag;
    std::int64_t epochs_trained = 0;
    std::uint64_t seed = 0;
};

class Model {
public:
    Model(ModelSpec spec, std::uint64_t seed);

    const ModelSpec& spec() const { return spec_; }
    Provenance& provenance() { return provenance_; }
    const Provenance& provenance() const { return provenance_; }

    std::vector<Tensor>& parameters() { return params_; }
    const std::vector<std::string>& parameter_names() const { return param_names_; }

    // Logits (n_points x n_classes); block must have exactly spec n_points rows.
    Tensor forward(const SampledBlock& block, bool training);
    // Softmax rows in evaluation mode.
    ClassScores scores(const SampledBlock& block);

    void save(const std::filesystem::path& path, const OptimizerState& opt = {}) const;
    static Model load(const std::filesystem::path& path, OptimizerState* opt = nullptr);

private:
    struct Impl;
    std::shared_ptr<Impl> impl_;
    ModelSpec spec_;
    Provenance provenance_;
    std::vector<Tensor> params_;
    std::vector<std::string> param_names_;

    void register_params();
};

Model build_model(const ModelSpec& spec, std::uint64_t seed);

}  // namespace rosepoint
