#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include "procache/detr_qformer.hpp"

namespace procache {

namespace {

void require_box(const BBox& b, const char* what) {
    if (!is_valid(b)) throw std::invalid_argument(std::string(what) + ": degenerate box (w and h must be > 0)");
}

}  // namespace

double giou(const BBox& a, const BBox& b) { return giou_with_grad(a, b).value; }

GiouGrad giou_with_grad(const BBox& p, const BBox& g) {
    require_box(p, "giou");
    require_box(g, "giou");

    const double px1 = p.x1(), px2 = p.x2(), py1 = p.y1(), py2 = p.y2();
    const double gx1 = g.x1(), gx2 = g.x2(), gy1 = g.y1(), gy2 = g.y2();

    const double iw_raw = std::min(px2, gx2) - std::max(px1, gx1);
    const double ih_raw = std::min(py2, gy2) - std::max(py1, gy1);
    const bool overlap = iw_raw > 0.0 && ih_raw > 0.0;
    const double iw = overlap ? iw_raw : 0.0;
    const double ih = overlap ? ih_raw : 0.0;
    const double inter = iw * ih;
    const double area_p = p.w * p.h;
    const double uni = area_p + g.w * g.h - inter;
    const double cw = std::max(px2, gx2) - std::min(px1, gx1);
    const double ch = std::max(py2, gy2) - std::min(py1, gy1);
    const double enclose = cw * ch;

    GiouGrad out;
    out.value = inter / uni - (enclose - uni) / enclose;

    // Partials of giou = I/U - 1 + U/C with U = Ap + Ag - I.
    const double d_inter = 1.0 / uni + inter / (uni * uni) - 1.0 / enclose;
    const double d_area = -inter / (uni * uni) + 1.0 / enclose;
    const double d_enclose = -uni / (enclose * enclose);

    // Corner partials, ordered (x1, x2, y1, y2).
    std::array<double, 4> dc{};
    if (overlap) {
        if (px1 > gx1) dc[0] += d_inter * -ih;
        if (px2 < gx2) dc[1] += d_inter * ih;
        if (py1 > gy1) dc[2] += d_inter * -iw;
        if (py2 < gy2) dc[3] += d_inter * iw;
    }
    dc[0] += d_area * -p.h;
    dc[1] += d_area * p.h;
    dc[2] += d_area * -p.w;
    dc[3] += d_area * p.w;
    if (px1 < gx1) dc[0] += d_enclose * -ch;
    if (px2 > gx2) dc[1] += d_enclose * ch;
    if (py1 < gy1) dc[2] += d_enclose * -cw;
    if (py2 > gy2) dc[3] += d_enclose * cw;

    out.d_pred[0] = dc[0] + dc[1];
    out.d_pred[1] = dc[2] + dc[3];
    out.d_pred[2] = 0.5 * (dc[1] - dc[0]);
    out.d_pred[3] = 0.5 * (dc[3] - dc[2]);
    return out;
}

namespace {

double l1(const BBox& a, const BBox& b) {
    return std::abs(a.cx - b.cx) + std::abs(a.cy - b.cy) + std::abs(a.w - b.w) + std::abs(a.h - b.h);
}

double sign(double x) { return (x > 0.0) - (x < 0.0); }

}  // namespace

double match_cost(const BBox& target, const BBox& pred) { return l1(target, pred) + (1.0 - giou(target, pred)); }

std::vector<int> solve_assignment(const Eigen::MatrixXd& cost) {
    const int n = static_cast<int>(cost.rows());
    const int m = static_cast<int>(cost.cols());
    if (n > m) throw std::invalid_argument("solve_assignment: more rows than columns");
    if (n == 0) return {};

    // Shortest augmenting path with potentials, 1-based with a virtual column 0.
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<int> row_of(m + 1, 0), way(m + 1, 0);
    for (int i = 1; i <= n; ++i) {
        row_of[0] = i;
        int j0 = 0;
        std::vector<double> min_v(m + 1, inf);
        std::vector<bool> used(m + 1, false);
        do {
            used[j0] = true;
            const int i0 = row_of[j0];
            double delta = inf;
            int j1 = 0;
            for (int j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < min_v[j]) {
                    min_v[j] = cur;
                    way[j] = j0;
                }
                if (min_v[j] < delta) {
                    delta = min_v[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_v[j] -= delta;
                }
            }
            j0 = j1;
        } while (row_of[j0] != 0);
        do {
            const int j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
        } while (j0 != 0);
    }

    std::vector<int> col_of_row(static_cast<std::size_t>(n), -1);
    for (int j = 1; j <= m; ++j)
        if (row_of[j] != 0) col_of_row[static_cast<std::size_t>(row_of[j] - 1)] = j - 1;
    return col_of_row;
}

namespace {

double assignment_cost(const Eigen::MatrixXd& cost, const std::vector<int>& cols) {
    double total = 0.0;
    for (std::size_t i = 0; i < cols.size(); ++i) total += cost(static_cast<Eigen::Index>(i), cols[i]);
    return total;
}

// Optimal cost of assigning rows [first_row, n) to columns not in `taken`.
double residual_optimum(const Eigen::MatrixXd& cost, int first_row, const std::vector<bool>& taken) {
    const int n = static_cast<int>(cost.rows());
    if (first_row >= n) return 0.0;
    std::vector<int> free_cols;
    for (int j = 0; j < cost.cols(); ++j)
        if (!taken[static_cast<std::size_t>(j)]) free_cols.push_back(j);
    Eigen::MatrixXd sub(n - first_row, static_cast<Eigen::Index>(free_cols.size()));
    for (int i = first_row; i < n; ++i)
        for (std::size_t c = 0; c < free_cols.size(); ++c) sub(i - first_row, static_cast<Eigen::Index>(c)) = cost(i, free_cols[c]);
    return assignment_cost(sub, solve_assignment(sub));
}

}  // namespace

std::vector<int> hungarian_match(std::span<const BBox> pred, std::span<const BBox> gt) {
    if (gt.size() > pred.size()) {
        throw std::invalid_argument("hungarian_match: " + std::to_string(gt.size()) + " targets but only " +
                                    std::to_string(pred.size()) + " predictions");
    }
    const auto n = static_cast<Eigen::Index>(gt.size());
    const auto m = static_cast<Eigen::Index>(pred.size());
    Eigen::MatrixXd cost(n, m);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < m; ++j) cost(i, j) = match_cost(gt[static_cast<std::size_t>(i)], pred[static_cast<std::size_t>(j)]);

    const double best = assignment_cost(cost, solve_assignment(cost));
    const double tol = 1e-12 * (1.0 + std::abs(best));

    // Walk rows in order and keep the smallest column that still admits an optimal completion.
    std::vector<int> sigma(static_cast<std::size_t>(n), -1);
    std::vector<bool> taken(static_cast<std::size_t>(m), false);
    double fixed = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < m; ++j) {
            if (taken[static_cast<std::size_t>(j)]) continue;
            taken[static_cast<std::size_t>(j)] = true;
            const double completion = fixed + cost(i, j) + residual_optimum(cost, static_cast<int>(i + 1), taken);
            if (completion <= best + tol) {
                sigma[static_cast<std::size_t>(i)] = static_cast<int>(j);
                fixed += cost(i, j);
                break;
            }
            taken[static_cast<std::size_t>(j)] = false;
        }
        if (sigma[static_cast<std::size_t>(i)] < 0) throw std::logic_error("hungarian_match: no optimal completion");
    }
    return sigma;
}

BoxLossGrad loss_ho_with_grad(std::span<const BoxPrediction> pred, std::span<const BBox> gt,
                              std::span<const int> sigma) {
    if (sigma.size() != gt.size()) throw std::invalid_argument("loss_ho: sigma must have one entry per target");
    std::vector<bool> matched(pred.size(), false);
    for (const int j : sigma) {
        if (j < 0 || static_cast<std::size_t>(j) >= pred.size() || matched[static_cast<std::size_t>(j)]) {
            throw std::invalid_argument("loss_ho: sigma is not an injective map into the predictions");
        }
        matched[static_cast<std::size_t>(j)] = true;
    }

    BoxLossGrad out;
    out.d_pred.assign(pred.size(), {});
    for (std::size_t i = 0; i < gt.size(); ++i) {
        const auto j = static_cast<std::size_t>(sigma[i]);
        const BBox& b = pred[j].box;
        const GiouGrad g = giou_with_grad(b, gt[i]);
        out.value += (1.0 - g.value) + l1(gt[i], b);
        auto& d = out.d_pred[j];
        d[0] += -g.d_pred[0] + sign(b.cx - gt[i].cx);
        d[1] += -g.d_pred[1] + sign(b.cy - gt[i].cy);
        d[2] += -g.d_pred[2] + sign(b.w - gt[i].w);
        d[3] += -g.d_pred[3] + sign(b.h - gt[i].h);
    }
    for (std::size_t j = 0; j < pred.size(); ++j) {
        if (matched[j]) continue;
        const double s = pred[j].score;
        if (!(s >= 0.0 && s < 1.0)) throw std::invalid_argument("loss_ho: score must lie in [0, 1)");
        out.value += -std::log1p(-s);
        out.d_pred[j][4] += 1.0 / (1.0 - s);
    }
    return out;
}

double loss_ho(std::span<const BoxPrediction> pred, std::span<const BBox> gt, std::span<const int> sigma) {
    return loss_ho_with_grad(pred, gt, sigma).value;
}

double loss_lm(std::span<const Eigen::VectorXd> logits, std::span<const std::int32_t> targets) {
    if (targets.empty()) throw std::invalid_argument("loss_lm: empty target sequence");
    if (logits.size() != targets.size()) throw std::invalid_argument("loss_lm: logits/targets length mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const Eigen::VectorXd& z = logits[i];
        if (targets[i] < 0 || targets[i] >= z.size()) throw std::invalid_argument("loss_lm: target id out of vocabulary");
        const double peak = z.maxCoeff();
        const double log_norm = peak + std::log((z.array() - peak).exp().sum());
        total += log_norm - z(targets[i]);
    }
    return total / static_cast<double>(targets.size());
}

double loss_total(double lm, double ho, double lambda_1) {
    if (!(lambda_1 >= 0.0)) throw std::invalid_argument("loss_total: lambda_1 must be >= 0");
    return lm + lambda_1 * ho;
}

GradCheckResult grad_check(std::span<const double> params, const LossWithGrad& loss, double eps,
                           std::size_t max_coords, std::uint64_t seed) {
    if (!(eps > 0.0) || !std::isfinite(eps)) throw std::invalid_argument("grad_check: eps must be > 0");
    std::vector<double> x(params.begin(), params.end());
    std::vector<double> analytic(x.size(), 0.0);
    const double base = loss(x, analytic);
    if (!std::isfinite(base)) throw std::runtime_error("grad_check: loss is not finite at the base point");

    std::vector<std::size_t> coords(x.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (max_coords > 0 && max_coords < coords.size()) {
        std::mt19937_64 rng(seed);
        std::shuffle(coords.begin(), coords.end(), rng);
        coords.resize(max_coords);
        std::sort(coords.begin(), coords.end());
    }

    GradCheckResult result;
    for (const std::size_t i : coords) {
        const double saved = x[i];
        x[i] = saved + eps;
        const double up = loss(x, {});
        x[i] = saved - eps;
        const double down = loss(x, {});
        x[i] = saved;
        if (!std::isfinite(up) || !std::isfinite(down)) throw std::runtime_error("grad_check: loss is not finite");
        const double numeric = (up - down) / (2.0 * eps);
        const double rel = std::abs(analytic[i] - numeric) / std::max(std::abs(analytic[i]), 1e-8);
        if (rel > result.max_rel_error || result.checked == 0) {
            result.max_rel_error = rel;
            result.worst_index = i;
            result.analytic = analytic[i];
            result.numeric = numeric;
        }
        ++result.checked;
    }
    return result;
}

}  // namespace procache
