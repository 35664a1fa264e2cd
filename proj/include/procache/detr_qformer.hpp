#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "procache/attention_engine.hpp"
#include "procache/core_types.hpp"

namespace procache {

// ---------------------------------------------------------------------------
// Boxes, matching and losses

/// Generalized IoU in (-1, 1]. Throws std::invalid_argument for non-positive width or height.
double giou(const BBox& a, const BBox& b);

struct GiouGrad {
    double value = 0.0;
    std::array<double, 4> d_pred{};  // d giou / d (cx, cy, w, h) of the first argument
};

GiouGrad giou_with_grad(const BBox& pred, const BBox& target);

/// L1 distance plus (1 - GIoU): the pairwise matching cost.
double match_cost(const BBox& target, const BBox& pred);

/// Minimum-cost assignment of every row to a distinct column (rows <= cols).
/// Returns the column chosen for each row.
std::vector<int> solve_assignment(const Eigen::MatrixXd& cost);

/// Injective sigma (gt index -> pred index) minimizing the summed match_cost; among optimal
/// assignments the lexicographically smallest is returned. Throws std::invalid_argument when
/// there are more ground-truth boxes than predictions.
std::vector<int> hungarian_match(std::span<const BBox> pred, std::span<const BBox> gt);

struct BoxPrediction {
    BBox box;
    double score = 0.5;  // objectness in (0, 1)
};

/// Sum over matched pairs of (1 - GIoU) + L1, plus -log(1 - score) for each unmatched prediction.
double loss_ho(std::span<const BoxPrediction> pred, std::span<const BBox> gt, std::span<const int> sigma);

struct BoxLossGrad {
    double value = 0.0;
    std::vector<std::array<double, 5>> d_pred;  // per prediction: (cx, cy, w, h, score)
};

BoxLossGrad loss_ho_with_grad(std::span<const BoxPrediction> pred, std::span<const BBox> gt,
                              std::span<const int> sigma);

/// Mean negative log-likelihood of the targets. Throws on empty targets, length mismatch or
/// an out-of-vocabulary id.
double loss_lm(std::span<const Eigen::VectorXd> logits, std::span<const std::int32_t> targets);

/// lm + lambda_1 * ho. Throws std::invalid_argument for lambda_1 < 0.
double loss_total(double lm, double ho, double lambda_1);

// ---------------------------------------------------------------------------
// Gradient checking

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t checked = 0;
};

/// Loss evaluated at `params`; fills `grad` (same length) when it is non-empty.
using LossWithGrad = std::function<double(std::span<const double> params, std::span<double> grad)>;

/// Central differences against the analytic gradient. Relative error of a coordinate is
/// |analytic - numeric| / max(|analytic|, 1e-8). With `max_coords` > 0 only that many
/// coordinates, drawn with `seed`, are checked. Throws std::invalid_argument for eps <= 0 and
/// std::runtime_error for a non-finite loss.
GradCheckResult grad_check(std::span<const double> params, const LossWithGrad& loss, double eps,
                           std::size_t max_coords = 0, std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Connector

/// side x side patch features, one row per patch in row-major patch order.
struct PatchGrid {
    int side = 16;
    Eigen::MatrixXd patches;

    int patch_count() const noexcept { return side * side; }
    int dim() const noexcept { return static_cast<int>(patches.cols()); }
};

void validate(const PatchGrid& grid);

struct QuerySet {
    Eigen::MatrixXd visual;  // m x query_dim
    Eigen::MatrixXd hand;    // 2 x query_dim
    Eigen::MatrixXd object;  // k x query_dim

    int total() const noexcept { return static_cast<int>(visual.rows() + hand.rows() + object.rows()); }
    /// visual, then hand, then object rows.
    Eigen::MatrixXd stacked() const;
};

struct ConnectorWeights {
    Eigen::MatrixXd w_key;    // query_dim x patch_dim
    Eigen::MatrixXd w_value;  // query_dim x patch_dim
    Eigen::MatrixXd w_token;  // token_dim x query_dim
    Eigen::VectorXd b_token;
    Eigen::MatrixXd w_box1;  // hidden x query_dim
    Eigen::VectorXd b_box1;
    Eigen::MatrixXd w_box2;  // 5 x hidden
    Eigen::VectorXd b_box2;
};

struct ConnectorDims {
    int patch_dim = 16;
    int query_dim = 16;
    int token_dim = 8;
    int visual_queries = 4;  // m
    int object_queries = 2;  // k
    int box_hidden = 16;
    int vocab_size = 128;
};

/// Frozen caption decoder used for the language-modeling term: position i predicts
/// caption[i] from mean(visual tokens) + embedding(caption[i-1]) (or BOS).
struct CaptionDecoder {
    Eigen::MatrixXd embed;  // vocab x token_dim
    Eigen::VectorXd bos;
    StepHead head;          // vocab x token_dim
};

/// Everything gradient descent may touch.
struct ConnectorParams {
    QuerySet queries;
    ConnectorWeights weights;

    template <typename F>
    void for_each_tensor(F&& f) {
        f(queries.visual); f(queries.hand); f(queries.object);
        f(weights.w_key); f(weights.w_value);
        f(weights.w_token); f(weights.b_token);
        f(weights.w_box1); f(weights.b_box1);
        f(weights.w_box2); f(weights.b_box2);
    }

    std::size_t size() const;
    std::vector<double> flatten() const;
    void assign(std::span<const double> flat);
    ConnectorParams zeros_like() const;
};

struct Connector {
    ConnectorDims dims;
    ConnectorParams params;
    CaptionDecoder decoder;
};

Connector make_connector(const ConnectorDims& dims, std::uint64_t seed);

struct ConnectorOutput {
    std::vector<Eigen::VectorXd> tokens;  // m compressed tokens
    std::vector<BoxPrediction> boxes;     // 2 hands, then k objects
    Eigen::MatrixXd attention;            // queries x patches
};

ConnectorOutput connector_forward(const PatchGrid& grid, const QuerySet& queries, const ConnectorWeights& weights);

enum class BoxKind { Hand, Object };

struct GtBox {
    BBox box;
    BoxKind kind = BoxKind::Object;
};

struct Scene {
    PatchGrid grid;
    std::vector<GtBox> gt;
    std::vector<std::int32_t> caption;
};

struct SceneLoss {
    double total = 0.0;
    double lm = 0.0;
    double ho = 0.0;
};

/// Stage-1 objective for one scene. Hands are matched only to hand predictions and objects
/// only to object predictions. Accumulates into `grad` when non-null.
SceneLoss scene_loss(const Connector& connector, const Scene& scene, double lambda_1,
                     ConnectorParams* grad = nullptr);

class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainCurve {
    std::vector<double> total;
    std::vector<double> lm;
    std::vector<double> ho;
};

/// Plain gradient descent on the connector parameters with a cosine-decayed step size; the
/// caption decoder stays frozen. Throws DivergenceError when the loss stops being finite.
/// Entry e of the curve is the mean loss before update e; one extra entry holds the final loss.
TrainCurve train_toy(Connector& connector, std::span<const Scene> scenes, int epochs, double lr, double lambda_1);

/// grad_check of scene_loss with respect to every connector parameter.
GradCheckResult check_connector_gradient(const Connector& connector, const Scene& scene, double lambda_1, double eps,
                                         std::size_t max_coords = 0, std::uint64_t seed = 0);

struct SyntheticSceneSpec {
    int side = 16;
    int patch_dim = 16;
    int hands = 2;
    int objects = 2;
    int caption_length = 5;
    int vocab_size = 128;
    double noise = 0.1;
};

/// Background noise plus positional features plus hand/object signatures inside each GT box.
Scene make_synthetic_scene(const SyntheticSceneSpec& spec, std::uint64_t seed);

/// Renders patches for the given ground truth; `seed` drives the noise.
PatchGrid render_patches(int side, int patch_dim, std::span<const GtBox> gt, double noise, std::uint64_t seed);

/// {grid, dim, patches: base64 little-endian float64 | seed: int, gt_boxes: [{cx,cy,w,h,kind}], caption}
Scene scene_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const Scene& scene);

}  // namespace procache
