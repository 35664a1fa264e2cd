#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "procache/detr_qformer.hpp"

namespace procache {

void validate(const PatchGrid& grid) {
    if (grid.side < 1) throw std::invalid_argument("patch grid side must be >= 1");
    if (grid.patches.rows() != grid.patch_count()) {
        throw std::invalid_argument("patch grid has " + std::to_string(grid.patches.rows()) + " patches, expected " +
                                    std::to_string(grid.patch_count()));
    }
    if (grid.patches.cols() < 1) throw std::invalid_argument("patch grid has zero-dimensional features");
    if (!grid.patches.allFinite()) throw std::invalid_argument("patch grid contains non-finite values");
}

Eigen::MatrixXd QuerySet::stacked() const {
    const Eigen::Index dq = std::max({visual.cols(), hand.cols(), object.cols()});
    Eigen::MatrixXd out(total(), dq);
    out << visual, hand, object;
    return out;
}

std::size_t ConnectorParams::size() const {
    std::size_t n = 0;
    const_cast<ConnectorParams*>(this)->for_each_tensor([&](auto& t) { n += static_cast<std::size_t>(t.size()); });
    return n;
}

std::vector<double> ConnectorParams::flatten() const {
    std::vector<double> out;
    out.reserve(size());
    const_cast<ConnectorParams*>(this)->for_each_tensor(
        [&](auto& t) { out.insert(out.end(), t.data(), t.data() + t.size()); });
    return out;
}

void ConnectorParams::assign(std::span<const double> flat) {
    if (flat.size() != size()) throw std::invalid_argument("ConnectorParams::assign: size mismatch");
    std::size_t offset = 0;
    for_each_tensor([&](auto& t) {
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), t.size(), t.data());
        offset += static_cast<std::size_t>(t.size());
    });
}

ConnectorParams ConnectorParams::zeros_like() const {
    ConnectorParams z = *this;
    z.for_each_tensor([](auto& t) { t.setZero(); });
    return z;
}

Connector make_connector(const ConnectorDims& dims, std::uint64_t seed) {
    if (dims.patch_dim < 1 || dims.query_dim < 1 || dims.token_dim < 1 || dims.box_hidden < 1 || dims.vocab_size < 2) {
        throw std::invalid_argument("make_connector: dimensions must be positive");
    }
    if (dims.visual_queries < 0) throw std::invalid_argument("make_connector: visual query count must be >= 0");
    if (dims.object_queries < 1) throw std::invalid_argument("make_connector: need at least one object query");

    std::mt19937_64 rng(seed);
    auto init = [&](int rows, int cols, double bound) {
        std::uniform_real_distribution<double> uni(-bound, bound);
        Eigen::MatrixXd m(rows, cols);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uni(rng);
        return m;
    };
    auto fan_in = [](int n) { return 1.0 / std::sqrt(static_cast<double>(n)); };

    Connector c;
    c.dims = dims;
    auto& q = c.params.queries;
    q.visual = init(dims.visual_queries, dims.query_dim, 1.0);
    q.hand = init(2, dims.query_dim, 1.0);
    q.object = init(dims.object_queries, dims.query_dim, 1.0);
    auto& w = c.params.weights;
    w.w_key = init(dims.query_dim, dims.patch_dim, fan_in(dims.patch_dim));
    w.w_value = init(dims.query_dim, dims.patch_dim, fan_in(dims.patch_dim));
    w.w_token = init(dims.token_dim, dims.query_dim, fan_in(dims.query_dim));
    w.b_token = Eigen::VectorXd::Zero(dims.token_dim);
    w.w_box1 = init(dims.box_hidden, dims.query_dim, fan_in(dims.query_dim));
    w.b_box1 = Eigen::VectorXd::Zero(dims.box_hidden);
    w.w_box2 = init(5, dims.box_hidden, fan_in(dims.box_hidden));
    // Start boxes mid-sized and objectness low.
    w.b_box2 = Eigen::VectorXd(5);
    w.b_box2 << 0.0, 0.0, -1.0, -1.0, -2.0;

    c.decoder.embed = init(dims.vocab_size, dims.token_dim, 1.0);
    c.decoder.bos = init(dims.token_dim, 1, 1.0).col(0);
    c.decoder.head.weight = init(dims.vocab_size, dims.token_dim, 1.0);
    return c;
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Intermediate values kept for the backward pass.
struct ForwardCache {
    Eigen::MatrixXd queries;  // nq x dq
    Eigen::MatrixXd keys;     // n x dq
    Eigen::MatrixXd values;   // n x dq
    Eigen::MatrixXd attn;     // nq x n
    Eigen::MatrixXd out;      // nq x dq
    Eigen::MatrixXd hidden;   // box rows x hidden (tanh activations)
    Eigen::MatrixXd box_raw;  // box rows x 5 (sigmoid outputs)
    std::vector<Eigen::VectorXd> tokens;
};

ForwardCache forward(const PatchGrid& grid, const QuerySet& qs, const ConnectorWeights& w) {
    validate(grid);
    const Eigen::Index dq = w.w_key.rows();
    if (w.w_key.cols() != grid.dim() || w.w_value.cols() != grid.dim()) {
        throw std::invalid_argument("connector: patch dim " + std::to_string(grid.dim()) +
                                    " does not match key/value projections (" + std::to_string(w.w_key.cols()) + ")");
    }
    if (w.w_value.rows() != dq || qs.hand.rows() != 2 || qs.object.rows() < 1 ||
        (qs.visual.rows() > 0 && qs.visual.cols() != dq) || qs.hand.cols() != dq || qs.object.cols() != dq ||
        w.w_token.cols() != dq || w.w_box1.cols() != dq || w.b_token.size() != w.w_token.rows() ||
        w.b_box1.size() != w.w_box1.rows() || w.w_box2.rows() != 5 || w.w_box2.cols() != w.w_box1.rows() ||
        w.b_box2.size() != 5) {
        throw std::invalid_argument("connector: query/weight dimensions are inconsistent");
    }

    ForwardCache fc;
    fc.queries = qs.stacked();
    fc.keys = grid.patches * w.w_key.transpose();
    fc.values = grid.patches * w.w_value.transpose();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dq));
    fc.attn = scale * fc.queries * fc.keys.transpose();
    for (Eigen::Index r = 0; r < fc.attn.rows(); ++r) {
        const double peak = fc.attn.row(r).maxCoeff();
        fc.attn.row(r) = (fc.attn.row(r).array() - peak).exp();
        fc.attn.row(r) /= fc.attn.row(r).sum();
    }
    fc.out = fc.attn * fc.values + fc.queries;

    const Eigen::Index m = qs.visual.rows();
    for (Eigen::Index j = 0; j < m; ++j) fc.tokens.emplace_back(w.w_token * fc.out.row(j).transpose() + w.b_token);

    const Eigen::Index nb = fc.out.rows() - m;
    fc.hidden = ((fc.out.bottomRows(nb) * w.w_box1.transpose()).rowwise() + w.b_box1.transpose()).array().tanh();
    fc.box_raw = ((fc.hidden * w.w_box2.transpose()).rowwise() + w.b_box2.transpose()).unaryExpr(&sigmoid);
    return fc;
}

BoxPrediction to_prediction(const Eigen::MatrixXd& raw, Eigen::Index r) {
    return BoxPrediction{BBox{raw(r, 0), raw(r, 1), raw(r, 2), raw(r, 3)}, raw(r, 4)};
}

}  // namespace

ConnectorOutput connector_forward(const PatchGrid& grid, const QuerySet& queries, const ConnectorWeights& weights) {
    ForwardCache fc = forward(grid, queries, weights);
    ConnectorOutput out;
    out.tokens = std::move(fc.tokens);
    for (Eigen::Index r = 0; r < fc.box_raw.rows(); ++r) out.boxes.push_back(to_prediction(fc.box_raw, r));
    out.attention = std::move(fc.attn);
    return out;
}

SceneLoss scene_loss(const Connector& c, const Scene& scene, double lambda_1, ConnectorParams* grad) {
    if (!(lambda_1 >= 0.0)) throw std::invalid_argument("scene_loss: lambda_1 must be >= 0");
    const auto& w = c.params.weights;
    const auto& dec = c.decoder;
    ForwardCache fc = forward(scene.grid, c.params.queries, w);
    const Eigen::Index m = c.params.queries.visual.rows();
    const Eigen::Index nq = fc.out.rows();
    const Eigen::Index dt = w.w_token.rows();
    if (dec.embed.cols() != dt || dec.head.weight.cols() != dt || dec.bos.size() != dt) {
        throw std::invalid_argument("scene_loss: caption decoder width does not match the token dim");
    }

    // Language-modeling term through the frozen decoder.
    Eigen::VectorXd context = Eigen::VectorXd::Zero(dt);
    for (const auto& t : fc.tokens) context += t;
    if (m > 0) context /= static_cast<double>(m);
    std::vector<Eigen::VectorXd> logits;
    for (std::size_t i = 0; i < scene.caption.size(); ++i) {
        const Eigen::VectorXd prev =
            i == 0 ? dec.bos : Eigen::VectorXd(dec.embed.row(scene.caption[i - 1]).transpose());
        logits.push_back(dec.head.logits(context + prev));
    }
    SceneLoss loss;
    loss.lm = loss_lm(logits, scene.caption);

    // Box term, hands and objects matched in separate pools.
    std::vector<BoxPrediction> hand_pred, obj_pred;
    for (Eigen::Index r = 0; r < 2; ++r) hand_pred.push_back(to_prediction(fc.box_raw, r));
    for (Eigen::Index r = 2; r < fc.box_raw.rows(); ++r) obj_pred.push_back(to_prediction(fc.box_raw, r));
    std::vector<BBox> hand_gt, obj_gt;
    for (const auto& g : scene.gt) (g.kind == BoxKind::Hand ? hand_gt : obj_gt).push_back(g.box);

    auto boxes_of = [](const std::vector<BoxPrediction>& p) {
        std::vector<BBox> b;
        for (const auto& x : p) b.push_back(x.box);
        return b;
    };
    const auto hand_sigma = hungarian_match(boxes_of(hand_pred), hand_gt);
    const auto obj_sigma = hungarian_match(boxes_of(obj_pred), obj_gt);
    const BoxLossGrad hand_loss = loss_ho_with_grad(hand_pred, hand_gt, hand_sigma);
    const BoxLossGrad obj_loss = loss_ho_with_grad(obj_pred, obj_gt, obj_sigma);
    loss.ho = hand_loss.value + obj_loss.value;
    loss.total = loss_total(loss.lm, loss.ho, lambda_1);
    if (grad == nullptr) return loss;

    auto& g = *grad;
    Eigen::MatrixXd d_out = Eigen::MatrixXd::Zero(nq, fc.out.cols());

    // LM backward.
    if (m > 0) {
        Eigen::VectorXd d_context = Eigen::VectorXd::Zero(dt);
        const double inv_len = 1.0 / static_cast<double>(scene.caption.size());
        for (std::size_t i = 0; i < logits.size(); ++i) {
            const double peak = logits[i].maxCoeff();
            Eigen::VectorXd p = (logits[i].array() - peak).exp();
            p /= p.sum();
            p(scene.caption[i]) -= 1.0;
            d_context += dec.head.weight.transpose() * (p * inv_len);
        }
        const Eigen::VectorXd d_token = d_context / static_cast<double>(m);
        for (Eigen::Index j = 0; j < m; ++j) {
            g.weights.w_token += d_token * fc.out.row(j);
            g.weights.b_token += d_token;
            d_out.row(j) += (w.w_token.transpose() * d_token).transpose();
        }
    }

    // Box backward.
    const Eigen::Index nb = fc.box_raw.rows();
    Eigen::MatrixXd d_raw(nb, 5);
    for (Eigen::Index r = 0; r < nb; ++r) {
        const auto& d = r < 2 ? hand_loss.d_pred[static_cast<std::size_t>(r)]
                              : obj_loss.d_pred[static_cast<std::size_t>(r - 2)];
        for (int k = 0; k < 5; ++k) d_raw(r, k) = lambda_1 * d[static_cast<std::size_t>(k)];
    }
    const Eigen::MatrixXd d_z2 = d_raw.array() * fc.box_raw.array() * (1.0 - fc.box_raw.array());
    g.weights.w_box2 += d_z2.transpose() * fc.hidden;
    g.weights.b_box2 += d_z2.colwise().sum().transpose();
    const Eigen::MatrixXd d_z1 = (d_z2 * w.w_box2).array() * (1.0 - fc.hidden.array().square());
    g.weights.w_box1 += d_z1.transpose() * fc.out.bottomRows(nb);
    g.weights.b_box1 += d_z1.colwise().sum().transpose();
    d_out.bottomRows(nb) += d_z1 * w.w_box1;

    // Cross-attention backward: out = softmax(s Q K^T) V + Q.
    const double scale = 1.0 / std::sqrt(static_cast<double>(fc.keys.cols()));
    Eigen::MatrixXd d_queries = d_out;
    const Eigen::MatrixXd d_attn = d_out * fc.values.transpose();
    const Eigen::MatrixXd d_values = fc.attn.transpose() * d_out;
    const Eigen::VectorXd row_dot = (d_attn.array() * fc.attn.array()).rowwise().sum();
    const Eigen::MatrixXd d_scores = fc.attn.array() * (d_attn.colwise() - row_dot).array();
    d_queries += scale * d_scores * fc.keys;
    const Eigen::MatrixXd d_keys = scale * d_scores.transpose() * fc.queries;
    g.weights.w_key += d_keys.transpose() * scene.grid.patches;
    g.weights.w_value += d_values.transpose() * scene.grid.patches;

    g.queries.visual += d_queries.topRows(m);
    g.queries.hand += d_queries.middleRows(m, 2);
    g.queries.object += d_queries.bottomRows(nq - m - 2);
    return loss;
}

TrainCurve train_toy(Connector& connector, std::span<const Scene> scenes, int epochs, double lr, double lambda_1) {
    if (scenes.empty()) throw std::invalid_argument("train_toy: need at least one scene");
    if (epochs < 0) throw std::invalid_argument("train_toy: epochs must be >= 0");
    if (!(lr >= 0.0)) throw std::invalid_argument("train_toy: lr must be >= 0");

    TrainCurve curve;
    const double inv = 1.0 / static_cast<double>(scenes.size());
    for (int epoch = 0; epoch <= epochs; ++epoch) {
        ConnectorParams grad = connector.params.zeros_like();
        SceneLoss mean;
        for (const Scene& s : scenes) {
            SceneLoss l;
            try {
                l = scene_loss(connector, s, lambda_1, epoch < epochs ? &grad : nullptr);
            } catch (const std::invalid_argument& e) {
                // Saturated box heads collapse to zero-size boxes once the weights blow up.
                if (epoch == 0) throw;
                throw DivergenceError("train_toy: diverged at epoch " + std::to_string(epoch) + " (lr=" +
                                      std::to_string(lr) + "): " + e.what());
            }
            mean.total += l.total * inv;
            mean.lm += l.lm * inv;
            mean.ho += l.ho * inv;
        }
        if (!std::isfinite(mean.total)) {
            throw DivergenceError("train_toy: loss became non-finite at epoch " + std::to_string(epoch) +
                                  " (lr=" + std::to_string(lr) + ")");
        }
        curve.total.push_back(mean.total);
        curve.lm.push_back(mean.lm);
        curve.ho.push_back(mean.ho);
        if (epoch == epochs) break;

        std::vector<double> p = connector.params.flatten();
        const std::vector<double> gflat = grad.flatten();
        // Cosine decay: the L1 term's gradient does not shrink near the optimum.
        const double step = lr * 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / epochs));
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= step * inv * gflat[i];
        connector.params.assign(p);
    }
    return curve;
}

GradCheckResult check_connector_gradient(const Connector& connector, const Scene& scene, double lambda_1, double eps,
                                         std::size_t max_coords, std::uint64_t seed) {
    Connector probe = connector;
    const std::vector<double> start = connector.params.flatten();
    LossWithGrad loss = [&](std::span<const double> params, std::span<double> grad) {
        probe.params.assign(params);
        if (grad.empty()) return scene_loss(probe, scene, lambda_1).total;
        ConnectorParams g = probe.params.zeros_like();
        const double value = scene_loss(probe, scene, lambda_1, &g).total;
        const std::vector<double> flat = g.flatten();
        std::copy(flat.begin(), flat.end(), grad.begin());
        return value;
    };
    return grad_check(start, loss, eps, max_coords, seed);
}

}  // namespace procache
