#include "procache/attention_engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace procache {

double AttentionWeights::position_bias(int head_index, Position query_pos, Position key_pos) const {
    const Position distance = std::min<Position>(query_pos - key_pos, kMaxRelativeDistance);
    return -head_slopes[static_cast<std::size_t>(head_index)] * static_cast<double>(distance);
}

AttentionWeights make_attention_weights(int d, int heads, int layers, int vocab_size, std::uint64_t seed) {
    if (d < 1 || heads < 1 || layers < 1 || vocab_size < 1) {
        throw std::invalid_argument("attention dimensions must be positive");
    }
    if (d % heads != 0) {
        throw std::invalid_argument("model dim " + std::to_string(d) + " is not divisible by " +
                                    std::to_string(heads) + " heads");
    }
    std::mt19937_64 rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    std::uniform_real_distribution<double> uni(-bound, bound);
    auto random_matrix = [&](int rows, int cols) {
        Eigen::MatrixXd m(rows, cols);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) m(r, c) = uni(rng);
        return m;
    };

    AttentionWeights w;
    w.d = d;
    w.heads = heads;
    w.layers = layers;
    for (int l = 0; l < layers; ++l) {
        w.wq.push_back(random_matrix(d, d));
        w.wk.push_back(random_matrix(d, d));
        w.wv.push_back(random_matrix(d, d));
        w.wo.push_back(random_matrix(d, d));
    }
    // Geometric slopes 2^(-8(i+1)/H), as in ALiBi.
    for (int i = 0; i < heads; ++i) {
        w.head_slopes.push_back(std::pow(2.0, -8.0 * (i + 1) / heads));
    }
    w.head.weight = random_matrix(vocab_size, d);
    return w;
}

AttentionEngine::AttentionEngine(AttentionWeights weights)
    : weights_(std::move(weights)),
      keys_(static_cast<std::size_t>(weights_.layers)),
      values_(static_cast<std::size_t>(weights_.layers)) {}

void AttentionEngine::reserve(std::size_t columns) {
    const auto have = static_cast<std::size_t>(keys_.empty() ? 0 : keys_.front().cols());
    if (columns <= have) return;
    const auto grown = static_cast<Eigen::Index>(std::max<std::size_t>({columns, 2 * have, 64}));
    for (auto* store : {&keys_, &values_}) {
        for (auto& m : *store) m.conservativeResize(weights_.d, grown);
    }
}

AppendResult AttentionEngine::append_token(const Token& token) {
    const int d = weights_.d;
    if (index_.contains(token.id)) {
        throw std::invalid_argument("token id " + std::to_string(token.id) + " already has cached keys/values");
    }
    if (!token.entry_position) {
        throw std::invalid_argument("token id " + std::to_string(token.id) + " has no entry position");
    }
    if (static_cast<int>(token.embedding.size()) != d) {
        throw std::invalid_argument("token embedding has dimension " + std::to_string(token.embedding.size()) +
                                    ", expected " + std::to_string(d));
    }
    const Position pos = *token.entry_position;
    if (!positions_.empty() && positions_.back() >= pos) {
        throw std::invalid_argument("token position " + std::to_string(pos) + " does not follow the cached tokens");
    }

    const Eigen::Map<const Eigen::VectorXd> input(token.embedding.data(), d);
    const int dh = weights_.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const std::size_t n = positions_.size() + 1;
    const auto cols = static_cast<Eigen::Index>(n);
    reserve(n);

    // Distances to every stored key, the new token included, clipped like the bias.
    Eigen::ArrayXd distance(cols);
    for (std::size_t j = 0; j + 1 < n; ++j) {
        distance(static_cast<Eigen::Index>(j)) =
            static_cast<double>(std::min<Position>(pos - positions_[j], kMaxRelativeDistance));
    }
    distance(cols - 1) = 0.0;

    Eigen::VectorXd hidden = input;
    last_attention_.assign(static_cast<std::size_t>(weights_.layers), {});
    for (int l = 0; l < weights_.layers; ++l) {
        const auto li = static_cast<std::size_t>(l);
        keys_[li].col(cols - 1) = weights_.wk[li] * input;
        values_[li].col(cols - 1) = weights_.wv[li] * input;
        const Eigen::VectorXd query = weights_.wq[li] * hidden;
        flops_ += 3ULL * d * d;

        Eigen::VectorXd mixed(d);
        auto& layer_weights = last_attention_[li];
        layer_weights.resize(static_cast<std::size_t>(weights_.heads));
        for (int h = 0; h < weights_.heads; ++h) {
            const auto keys = keys_[li].block(h * dh, 0, dh, cols);
            const auto values = values_[li].block(h * dh, 0, dh, cols);
            Eigen::ArrayXd scores = scale * (keys.transpose() * query.segment(h * dh, dh)).array() -
                                    weights_.head_slopes[static_cast<std::size_t>(h)] * distance;
            scores = (scores - scores.maxCoeff()).exp();
            scores /= scores.sum();
            mixed.segment(h * dh, dh) = values * scores.matrix();
            layer_weights[static_cast<std::size_t>(h)].assign(scores.data(), scores.data() + cols);
        }
        flops_ += 2ULL * n * d;

        hidden += weights_.wo[li] * mixed;
        flops_ += 1ULL * d * d;
    }

    AppendResult result;
    result.logits = weights_.head.logits(hidden);
    flops_ += static_cast<std::uint64_t>(weights_.head.vocab_size()) * d;
    result.output = std::move(hidden);

    index_.insert(token.id);
    positions_.push_back(pos);
    ids_.push_back(token.id);
    return result;
}

void AttentionEngine::evict(std::span<const TokenId> ids) {
    for (const TokenId id : ids) {
        if (!index_.contains(id)) {
            throw std::invalid_argument("cannot evict unknown token id " + std::to_string(id));
        }
    }
    std::unordered_set<TokenId> doomed;
    for (const TokenId id : ids) {
        if (index_.erase(id) > 0) doomed.insert(id);
    }
    if (doomed.empty()) return;

    // Compact the surviving columns in place, starting at the first evicted one.
    std::size_t write = 0;
    while (!doomed.contains(ids_[write])) ++write;
    for (std::size_t read = write; read < ids_.size(); ++read) {
        if (doomed.contains(ids_[read])) continue;
        ids_[write] = ids_[read];
        positions_[write] = positions_[read];
        for (auto* store : {&keys_, &values_}) {
            for (auto& m : *store) m.col(static_cast<Eigen::Index>(write)) = m.col(static_cast<Eigen::Index>(read));
        }
        ++write;
    }
    ids_.resize(write);
    positions_.resize(write);
}

std::vector<Eigen::VectorXd> full_recompute(const AttentionWeights& weights, std::span<const Token> tokens) {
    const int d = weights.d;
    const auto n = static_cast<Eigen::Index>(tokens.size());
    Eigen::MatrixXd input(n, d);
    std::vector<Position> pos(tokens.size());
    for (Eigen::Index i = 0; i < n; ++i) {
        const Token& t = tokens[static_cast<std::size_t>(i)];
        if (!t.entry_position) throw std::invalid_argument("full_recompute: token without position");
        if (static_cast<int>(t.embedding.size()) != d) throw std::invalid_argument("full_recompute: bad embedding dim");
        pos[static_cast<std::size_t>(i)] = *t.entry_position;
        if (i > 0 && pos[static_cast<std::size_t>(i)] <= pos[static_cast<std::size_t>(i - 1)]) {
            throw std::invalid_argument("full_recompute: tokens are not in increasing position order");
        }
        input.row(i) = Eigen::Map<const Eigen::RowVectorXd>(t.embedding.data(), d);
    }

    const int dh = weights.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Eigen::MatrixXd hidden = input;
    for (int l = 0; l < weights.layers; ++l) {
        const auto li = static_cast<std::size_t>(l);
        const Eigen::MatrixXd keys = input * weights.wk[li].transpose();
        const Eigen::MatrixXd values = input * weights.wv[li].transpose();
        const Eigen::MatrixXd queries = hidden * weights.wq[li].transpose();
        Eigen::MatrixXd mixed(n, d);
        for (int h = 0; h < weights.heads; ++h) {
            Eigen::MatrixXd s = scale * queries.middleCols(h * dh, dh) * keys.middleCols(h * dh, dh).transpose();
            for (Eigen::Index i = 0; i < n; ++i) {
                for (Eigen::Index j = 0; j < n; ++j) {
                    if (j > i) {
                        s(i, j) = -std::numeric_limits<double>::infinity();
                    } else {
                        s(i, j) += weights.position_bias(h, pos[static_cast<std::size_t>(i)],
                                                         pos[static_cast<std::size_t>(j)]);
                    }
                }
                const double peak = s.row(i).maxCoeff();
                s.row(i) = (s.row(i).array() - peak).exp();
                s.row(i) /= s.row(i).sum();
            }
            mixed.middleCols(h * dh, dh) = s * values.middleCols(h * dh, dh);
        }
        hidden += mixed * weights.wo[li].transpose();
    }

    std::vector<Eigen::VectorXd> out;
    out.reserve(tokens.size());
    for (Eigen::Index i = 0; i < n; ++i) out.emplace_back(hidden.row(i).transpose());
    return out;
}

}  // namespace procache
