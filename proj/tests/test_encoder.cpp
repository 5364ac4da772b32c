#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "namelink/encoder.hpp"
#include "namelink/error.hpp"
#include "namelink/objective.hpp"
#include "test_util.hpp"

using namespace namelink;
using testutil::gradcheck_11_example;
using testutil::gradcheck_mn_example;
using testutil::TempDir;
using testutil::tiny_model_config;

namespace {

bool mats_equal(const Mat& a, const Mat& b) {
    return a.rows == b.rows && a.cols == b.cols && a.a == b.a;
}

Caption caption_of(std::vector<std::int32_t> toks) {
    Caption c;
    c.tokens = std::move(toks);
    return c;
}

Mat embed_text_values(const Parameters& p, const ModelConfig& cfg, const Caption& cap) {
    ad::Tape t;
    BoundParams bp = bind_params(t, p);
    return t.val(embed_text(t, bp, cfg, cap));
}

Mat embed_boxes_values(const Parameters& p, const ModelConfig& cfg,
                       const std::vector<Detection>& dets) {
    ad::Tape t;
    BoundParams bp = bind_params(t, p);
    return t.val(embed_boxes(t, bp, cfg, dets));
}

}  // namespace

TEST_CASE("init_parameters is seeded and finite") {
    const ModelConfig cfg = tiny_model_config();
    const Parameters a = init_parameters(cfg);
    const Parameters b = init_parameters(cfg);
    REQUIRE(a.count() == b.count());
    for (std::size_t i = 0; i < a.count(); ++i) {
        CHECK(a.name(i) == b.name(i));
        CHECK(mats_equal(a.tensor(i), b.tensor(i)));
    }
    CHECK(a.all_finite());
    CHECK(a.at("inter_alpha")(0, 0) == 5.0);
    CHECK(a.at("inter_beta")(0, 0) == 0.0);

    ModelConfig other = cfg;
    other.seed = cfg.seed + 1;
    const Parameters c = init_parameters(other);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.count() && !any_diff; ++i)
        any_diff = !mats_equal(a.tensor(i), c.tensor(i));
    CHECK(any_diff);
}

TEST_CASE("model config invariants are enforced") {
    ModelConfig cfg = tiny_model_config();
    cfg.n_heads = 3;  // 8 % 3 != 0
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_model_config();
    cfg.max_tokens = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("spatial features derive from the box") {
    const SpatialFeature f = SpatialFeature::from_box(BoundingBox{0.1, 0.2, 0.3, 0.6});
    CHECK(f.v[0] == doctest::Approx(0.1));
    CHECK(f.v[4] == doctest::Approx(0.2));
    CHECK(f.v[5] == doctest::Approx(0.4));
    CHECK(f.v[6] == doctest::Approx(0.08));
    CHECK_THROWS_AS(SpatialFeature::from_box(BoundingBox{0.3, 0.2, 0.3, 0.6}), ValidationError);
}

TEST_CASE("embed_text separates positions and is deterministic") {
    const ModelConfig cfg = tiny_model_config();
    const Parameters p = init_parameters(cfg);
    const Mat e = embed_text_values(p, cfg, caption_of({4, 4, 7}));
    CHECK(e.rows == 3);
    CHECK(e.cols == cfg.d_model);
    // Same token at positions 0 and 1 embeds differently.
    bool differ = false;
    for (int c = 0; c < e.cols; ++c) differ |= e(0, c) != e(1, c);
    CHECK(differ);
    CHECK(mats_equal(e, embed_text_values(p, cfg, caption_of({4, 4, 7}))));

    Caption too_long;
    too_long.tokens.assign(cfg.max_tokens + 1, 2);
    CHECK_THROWS_AS(embed_text_values(p, cfg, too_long), SizeError);
}

TEST_CASE("embed_boxes separates spatial inputs and stays finite") {
    const ModelConfig cfg = tiny_model_config();
    const Parameters p = init_parameters(cfg);
    std::vector<Detection> dets;
    Detection a = testutil::make_detection(0.1, 0.1, 0.4, 0.9, cfg.d_v, 0.25f);
    Detection b = testutil::make_detection(0.5, 0.1, 0.9, 0.9, cfg.d_v, 0.25f);
    dets = {a, b};
    const Mat e = embed_boxes_values(p, cfg, dets);
    CHECK(e.rows == 2);
    CHECK(e.cols == cfg.d_model);
    bool differ = false;
    for (int c = 0; c < e.cols; ++c) differ |= e(0, c) != e(1, c);
    CHECK(differ);  // identical features, different boxes

    Detection zero = a;
    zero.visual_feature.assign(cfg.d_v, 0.0f);
    const Mat ez = embed_boxes_values(p, cfg, {zero});
    CHECK(ez.all_finite());

    std::vector<Detection> too_many(cfg.max_boxes + 1, a);
    CHECK_THROWS_AS(embed_boxes_values(p, cfg, too_many), SizeError);
}

TEST_CASE("layer norm rows have zero mean and unit variance before scale") {
    ad::Tape t;
    Rng rng(3);
    Mat x(4, 16);
    for (double& v : x.a) v = rng.uniform(-3, 3);
    Mat ones(1, 16);
    ones.fill(1.0);
    Mat zeros(1, 16);
    ad::Var xv = t.constant(x);
    ad::Var g = t.constant(ones);
    ad::Var b = t.constant(zeros);
    const Mat y = t.val(ad::layer_norm(t, xv, g, b, kLayerNormEps));
    for (int r = 0; r < y.rows; ++r) {
        double mean = 0.0, var = 0.0;
        for (int c = 0; c < y.cols; ++c) mean += y(r, c);
        mean /= y.cols;
        for (int c = 0; c < y.cols; ++c) var += (y(r, c) - mean) * (y(r, c) - mean);
        var /= y.cols;
        CHECK(std::abs(mean) < 1e-6);
        CHECK(std::abs(var - 1.0) < 1e-6);
    }
}

TEST_CASE("forward with zero layers returns the embedded inputs") {
    ModelConfig cfg = tiny_model_config();
    cfg.n_layers = 0;
    const Parameters p = init_parameters(cfg);
    const Example ex = gradcheck_mn_example();
    const HiddenStates h = forward_eval(p, cfg, ex.caption, ex.detections);
    CHECK(mats_equal(h.text, embed_text_values(p, cfg, ex.caption)));
    CHECK(mats_equal(h.boxes, embed_boxes_values(p, cfg, ex.detections)));
}

TEST_CASE("forward is deterministic in eval mode") {
    const ModelConfig cfg = tiny_model_config();
    const Parameters p = init_parameters(cfg);
    const Example ex = gradcheck_mn_example();
    const HiddenStates h1 = forward_eval(p, cfg, ex.caption, ex.detections);
    const HiddenStates h2 = forward_eval(p, cfg, ex.caption, ex.detections);
    CHECK(mats_equal(h1.text, h2.text));
    CHECK(mats_equal(h1.boxes, h2.boxes));
}

TEST_CASE("permuting boxes permutes box rows and leaves text unchanged") {
    const ModelConfig cfg = tiny_model_config();
    const Parameters p = init_parameters(cfg);
    const Example ex = gradcheck_mn_example();
    const HiddenStates base = forward_eval(p, cfg, ex.caption, ex.detections);

    std::vector<Detection> permuted = {ex.detections[2], ex.detections[0], ex.detections[1]};
    const HiddenStates h = forward_eval(p, cfg, ex.caption, permuted);
    REQUIRE(h.text.same_shape(base.text));
    for (std::size_t e = 0; e < h.text.a.size(); ++e)
        CHECK(h.text.a[e] == doctest::Approx(base.text.a[e]).epsilon(1e-12));
    const int perm[3] = {2, 0, 1};  // permuted row r came from base row perm[r]
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < cfg.d_model; ++c)
            CHECK(h.boxes(r, c) == doctest::Approx(base.boxes(perm[r], c)).epsilon(1e-12));
}

TEST_CASE("backward leaves unused parameters with zero gradient and scales linearly") {
    const ModelConfig cfg = tiny_model_config();
    Parameters p = init_parameters(cfg);
    const Example ex = gradcheck_mn_example();

    TaskBatch batch;
    batch.kind = TaskKind::TaskMN;
    batch.items.push_back(BatchItem{&ex, false, std::nullopt});

    LossWeights w;
    ObjectiveOptions opts;
    std::vector<Mat> g1 = make_grad_store(p);
    total_loss(batch, p, cfg, w, opts, &g1);

    // Token 9 never appears: its embedding row gets no gradient.
    const int tok_idx = p.index_of("tok_emb");
    for (int c = 0; c < cfg.d_model; ++c) CHECK(g1[tok_idx](9, c) == 0.0);
    // inter_alpha is only used by Task-1-1 batches.
    CHECK(g1[p.index_of("inter_alpha")](0, 0) == 0.0);

    LossWeights scaled;
    scaled.w_intra = 3.0;
    scaled.w_inter = 3.0;
    scaled.w_null = 3.0;
    std::vector<Mat> g3 = make_grad_store(p);
    total_loss(batch, p, cfg, scaled, opts, &g3);
    for (std::size_t i = 0; i < g1.size(); ++i)
        for (std::size_t e = 0; e < g1[i].a.size(); ++e)
            CHECK(g3[i].a[e] == doctest::Approx(3.0 * g1[i].a[e]).epsilon(1e-9));
}

TEST_CASE("reverse-mode gradients match finite differences") {
    const ModelConfig cfg = tiny_model_config();
    Parameters p = init_parameters(cfg);
    const Example mn = gradcheck_mn_example();
    const Example e11 = gradcheck_11_example();

    LossWeights w;
    ObjectiveOptions opts;

    TaskBatch mn_batch;
    mn_batch.kind = TaskKind::TaskMN;
    mn_batch.items.push_back(BatchItem{&mn, false, std::nullopt});
    auto res = testutil::gradient_check(p, cfg, mn_batch, w, opts);
    INFO("worst block: ", res.worst_block);
    CHECK(res.max_rel_err < 1e-4);

    TaskBatch batch11;
    batch11.kind = TaskKind::Task11;
    batch11.items.push_back(BatchItem{&e11, false, std::nullopt});
    BatchItem neg;
    neg.example = &e11;
    neg.negative = true;
    neg.replacement_box = mn.detections[1];
    batch11.items.push_back(neg);
    res = testutil::gradient_check(p, cfg, batch11, w, opts);
    INFO("worst block: ", res.worst_block);
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("gradients stay correct with train-mode dropout masks") {
    const ModelConfig cfg = tiny_model_config();
    Parameters p = init_parameters(cfg);
    const Example mn = gradcheck_mn_example();

    TaskBatch batch;
    batch.kind = TaskKind::TaskMN;
    batch.step = 3;
    batch.items.push_back(BatchItem{&mn, false, std::nullopt});

    LossWeights w;
    ObjectiveOptions opts;
    opts.train_mode = true;
    opts.dropout_rate = 0.25;
    opts.dropout_seed = 11;
    const auto res = testutil::gradient_check(p, cfg, batch, w, opts);
    INFO("worst block: ", res.worst_block);
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("checkpoints restore config and f32-rounded parameters") {
    const ModelConfig cfg = tiny_model_config();
    const Parameters p = init_parameters(cfg);
    TempDir dir("ckpt");
    const auto path = dir.path() / "model.ckpt";
    save_checkpoint(path, cfg, p);
    const auto [cfg2, p2] = load_checkpoint(path);
    CHECK(cfg2.d_model == cfg.d_model);
    CHECK(cfg2.vocab_size == cfg.vocab_size);
    CHECK(cfg2.seed == cfg.seed);
    REQUIRE(p2.count() == p.count());
    for (std::size_t i = 0; i < p.count(); ++i) {
        CHECK(p2.name(i) == p.name(i));
        REQUIRE(p2.tensor(i).same_shape(p.tensor(i)));
        for (std::size_t e = 0; e < p.tensor(i).a.size(); ++e)
            CHECK(p2.tensor(i).a[e] ==
                  static_cast<double>(static_cast<float>(p.tensor(i).a[e])));
    }
    CHECK_THROWS_AS(load_checkpoint(dir.path() / "missing.ckpt"), IoError);
}
