#include <bit>
#include <cmath>
#include <cstring>
#include <numbers>
#include <random>
#include <stdexcept>

#include "base64.hpp"
#include "hash_rng.hpp"
#include "procache/detr_qformer.hpp"

namespace procache {

namespace {

// Fixed signature directions for hands and objects, independent of the scene seed.
Eigen::VectorXd signature(BoxKind kind, int dim) {
    std::mt19937_64 rng(kind == BoxKind::Hand ? 0x68616e64ULL : 0x6f626a65ULL);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd v(dim);
    for (int i = 0; i < dim; ++i) v(i) = normal(rng);
    return v / v.norm();
}

}  // namespace

PatchGrid render_patches(int side, int patch_dim, std::span<const GtBox> gt, double noise, std::uint64_t seed) {
    if (side < 1 || patch_dim < 4) throw std::invalid_argument("render_patches: need side >= 1 and patch_dim >= 4");
    PatchGrid grid;
    grid.side = side;
    grid.patches.resize(side * side, patch_dim);

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, noise);
    const Eigen::VectorXd hand_sig = signature(BoxKind::Hand, patch_dim);
    const Eigen::VectorXd obj_sig = signature(BoxKind::Object, patch_dim);
    constexpr double pi = std::numbers::pi;

    for (int r = 0; r < side; ++r) {
        for (int c = 0; c < side; ++c) {
            const double x = (c + 0.5) / side;
            const double y = (r + 0.5) / side;
            Eigen::VectorXd f(patch_dim);
            for (int k = 0; k < patch_dim; ++k) f(k) = noise > 0.0 ? normal(rng) : 0.0;
            // Low-frequency position code in the first four channels.
            f(0) += std::sin(pi * x);
            f(1) += std::cos(pi * x);
            f(2) += std::sin(pi * y);
            f(3) += std::cos(pi * y);
            for (const GtBox& g : gt) {
                const double dx = (x - g.box.cx) / (0.5 * g.box.w);
                const double dy = (y - g.box.cy) / (0.5 * g.box.h);
                const double bump = std::exp(-(dx * dx + dy * dy));
                f += 2.0 * bump * (g.kind == BoxKind::Hand ? hand_sig : obj_sig);
            }
            grid.patches.row(r * side + c) = f.transpose();
        }
    }
    return grid;
}

Scene make_synthetic_scene(const SyntheticSceneSpec& spec, std::uint64_t seed) {
    if (spec.hands < 0 || spec.hands > 2) throw std::invalid_argument("synthetic scene: hands must be 0, 1 or 2");
    if (spec.objects < 0) throw std::invalid_argument("synthetic scene: objects must be >= 0");
    if (spec.caption_length < 1 || spec.vocab_size < 2) throw std::invalid_argument("synthetic scene: bad caption spec");

    std::mt19937_64 rng(detail::mix64(seed, 0x7363656e65ULL));
    std::uniform_real_distribution<double> size(0.15, 0.35);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto random_box = [&] {
        BBox b;
        b.w = size(rng);
        b.h = size(rng);
        b.cx = 0.5 * b.w + unit(rng) * (1.0 - b.w);
        b.cy = 0.5 * b.h + unit(rng) * (1.0 - b.h);
        return b;
    };

    Scene scene;
    for (int i = 0; i < spec.hands; ++i) scene.gt.push_back({random_box(), BoxKind::Hand});
    for (int i = 0; i < spec.objects; ++i) scene.gt.push_back({random_box(), BoxKind::Object});
    std::uniform_int_distribution<std::int32_t> word(0, spec.vocab_size - 1);
    for (int i = 0; i < spec.caption_length; ++i) scene.caption.push_back(word(rng));
    scene.grid = render_patches(spec.side, spec.patch_dim, scene.gt, spec.noise, seed);
    return scene;
}

namespace {

BoxKind kind_from_string(const std::string& s) {
    if (s == "hand") return BoxKind::Hand;
    if (s == "object") return BoxKind::Object;
    throw std::invalid_argument("scene: unknown box kind '" + s + "'");
}

}  // namespace

Scene scene_from_json(const nlohmann::json& doc) {
    if (!doc.is_object()) throw std::invalid_argument("scene: document must be a JSON object");
    try {
        Scene scene;
        const int side = doc.value("grid", 16);
        const int dim = doc.value("dim", 16);
        for (const auto& b : doc.at("gt_boxes")) {
            GtBox g;
            g.box = BBox{b.at("cx").get<double>(), b.at("cy").get<double>(), b.at("w").get<double>(),
                         b.at("h").get<double>()};
            g.kind = kind_from_string(b.at("kind").get<std::string>());
            if (!is_valid(g.box)) throw std::invalid_argument("scene: degenerate ground-truth box");
            scene.gt.push_back(g);
        }
        if (doc.contains("caption")) scene.caption = doc.at("caption").get<std::vector<std::int32_t>>();

        if (doc.contains("patches")) {
            const auto bytes = detail::base64_decode(doc.at("patches").get<std::string>());
            const std::size_t expected = static_cast<std::size_t>(side) * side * dim * sizeof(double);
            if (bytes.size() != expected) {
                throw std::invalid_argument("scene: patches hold " + std::to_string(bytes.size()) + " bytes, expected " +
                                            std::to_string(expected));
            }
            scene.grid.side = side;
            scene.grid.patches.resize(side * side, dim);
            static_assert(std::endian::native == std::endian::little, "scene files store little-endian doubles");
            for (Eigen::Index i = 0; i < scene.grid.patches.rows(); ++i)
                for (Eigen::Index k = 0; k < dim; ++k)
                    std::memcpy(&scene.grid.patches(i, k), bytes.data() + (i * dim + k) * sizeof(double), sizeof(double));
        } else if (doc.contains("seed")) {
            const auto seed = doc.at("seed").get<std::uint64_t>();
            scene.grid = render_patches(side, dim, scene.gt, doc.value("noise", 0.1), seed);
            if (scene.caption.empty()) {
                std::mt19937_64 rng(seed);
                std::uniform_int_distribution<std::int32_t> word(0, 127);
                for (int i = 0; i < 5; ++i) scene.caption.push_back(word(rng));
            }
        } else {
            throw std::invalid_argument("scene: needs either 'patches' or 'seed'");
        }
        validate(scene.grid);
        if (scene.caption.empty()) throw std::invalid_argument("scene: caption must not be empty");
        return scene;
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("scene: malformed document: ") + e.what());
    }
}

nlohmann::json to_json(const Scene& scene) {
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(scene.grid.patches.size()) * sizeof(double));
    const Eigen::Index dim = scene.grid.patches.cols();
    for (Eigen::Index i = 0; i < scene.grid.patches.rows(); ++i)
        for (Eigen::Index k = 0; k < dim; ++k)
            std::memcpy(bytes.data() + (i * dim + k) * sizeof(double), &scene.grid.patches(i, k), sizeof(double));
    nlohmann::json boxes = nlohmann::json::array();
    for (const auto& g : scene.gt) {
        boxes.push_back({{"cx", g.box.cx},
                         {"cy", g.box.cy},
                         {"w", g.box.w},
                         {"h", g.box.h},
                         {"kind", g.kind == BoxKind::Hand ? "hand" : "object"}});
    }
    return nlohmann::json{{"grid", scene.grid.side},
                          {"dim", dim},
                          {"patches", detail::base64_encode(bytes)},
                          {"gt_boxes", boxes},
                          {"caption", scene.caption}};
}

}  // namespace procache
