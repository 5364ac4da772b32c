#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "namelink/error.hpp"
#include "namelink/synthgen.hpp"
#include "namelink/trainer.hpp"
#include "test_util.hpp"

using namespace namelink;
using testutil::make_example;

namespace {

ModelConfig small_model(int d_v, int vocab) {
    ModelConfig cfg;
    cfg.d_model = 16;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.d_ff = 32;
    cfg.d_v = d_v;
    cfg.vocab_size = vocab;
    cfg.seed = 5;
    return cfg;
}

TrainConfig fast_train(std::uint64_t seed = 9) {
    TrainConfig cfg;
    cfg.learning_rate = 1e-3;
    cfg.batch_size = 8;
    cfg.max_steps = 30;
    cfg.validate_every = 10;
    cfg.dropout = 0.0;
    cfg.seed = seed;
    return cfg;
}

struct SynthFixture {
    World world;
    GeneratedCorpus gen;
    SplitAssignment splits;

    SynthFixture() {
        WorldConfig wc;
        wc.n_identities = 60;
        wc.d_v = 12;
        wc.d_f = 24;
        wc.seed = 31337;
        world = generate_world(wc);
        gen = generate_corpus(world, 400);
        splits = make_splits(gen.corpus.examples, 0.15, 7);
    }
};

const SynthFixture& fixture() {
    static SynthFixture f;
    return f;
}

}  // namespace

TEST_CASE("partition_tasks splits on exactly (1,1)") {
    Example a = make_example("a", 1, 1, 4);
    Example b = make_example("b", 2, 1, 4);
    Example c = make_example("c", 1, 2, 4);
    Example d = make_example("d", 3, 4, 4);
    std::vector<const Example*> all = {&a, &b, &c, &d};
    const auto [t11, tmn] = partition_tasks(all);
    REQUIRE(t11.size() == 1);
    CHECK(t11[0]->id == "a");
    REQUIRE(tmn.size() == 3);
    CHECK(t11.size() + tmn.size() == all.size());
}

TEST_CASE("sample_negatives respects probability and identity constraints") {
    std::vector<Example> pool_storage;
    for (int i = 0; i < 6; ++i) {
        Example ex = make_example("p" + std::to_string(i), 1, 1, 4);
        ex.referred[0].identity_id = "ident" + std::to_string(i % 3);
        ex.detections[0].visual_feature.assign(4, static_cast<float>(i));
        pool_storage.push_back(ex);
    }
    std::vector<const Example*> pool;
    for (const Example& ex : pool_storage) pool.push_back(&ex);

    std::vector<BatchItem> items;
    for (const Example& ex : pool_storage) items.push_back(BatchItem{&ex, false, std::nullopt});

    Rng rng(1);
    auto stats = sample_negatives(items, pool, 0.0, rng);
    CHECK(stats.negatives == 0);
    for (const BatchItem& item : items) CHECK_FALSE(item.negative);

    // prob = 1: every item flips, and the donor identity always differs.
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<BatchItem> flips;
        for (const Example& ex : pool_storage) flips.push_back(BatchItem{&ex, false, std::nullopt});
        Rng r2(trial);
        stats = sample_negatives(flips, pool, 1.0, r2);
        CHECK(stats.negatives == static_cast<int>(flips.size()));
        for (const BatchItem& item : flips) {
            REQUIRE(item.negative);
            REQUIRE(item.replacement_box.has_value());
            // The donor's feature encodes its index; identities repeat mod 3.
            const int donor = static_cast<int>(item.replacement_box->visual_feature[0]);
            CHECK(pool_storage[donor].referred[0].identity_id !=
                  item.example->referred[0].identity_id);
        }
    }

    // Single-identity pool: negatives cannot be built, so they are skipped.
    std::vector<Example> mono = {pool_storage[0], pool_storage[3]};  // both ident0
    std::vector<const Example*> mono_pool = {&mono[0], &mono[1]};
    std::vector<BatchItem> mono_items = {BatchItem{&mono[0], false, std::nullopt}};
    Rng r3(2);
    stats = sample_negatives(mono_items, mono_pool, 1.0, r3);
    CHECK(stats.negatives == 0);
    CHECK(stats.skipped == 1);
    CHECK_FALSE(mono_items[0].negative);
}

TEST_CASE("batch stream follows the 1:2 task schedule deterministically") {
    const auto& f = fixture();
    std::vector<const Example*> train;
    std::map<std::string, const Example*> by_id;
    for (const Example& ex : f.gen.corpus.examples) by_id[ex.id] = &ex;
    for (const std::string& id : f.splits.train_ids) train.push_back(by_id[id]);
    auto [t11, tmn] = partition_tasks(train);
    REQUIRE(!t11.empty());
    REQUIRE(!tmn.empty());

    TrainConfig cfg = fast_train();
    BatchStream stream(t11, tmn, cfg);
    const TaskKind expect[6] = {TaskKind::Task11, TaskKind::TaskMN, TaskKind::TaskMN,
                                TaskKind::Task11, TaskKind::TaskMN, TaskKind::TaskMN};
    std::vector<std::string> first_ids;
    for (int s = 0; s < 6; ++s) {
        const TaskBatch b = stream.next();
        CHECK(b.kind == expect[s]);
        CHECK(b.items.size() == static_cast<std::size_t>(cfg.batch_size));
        first_ids.push_back(b.items[0].example->id);
        for (const BatchItem& item : b.items) {
            const bool is11 =
                item.example->n_referred() == 1 && item.example->m_detections() == 1;
            CHECK(is11 == (b.kind == TaskKind::Task11));
        }
    }

    // Same seed reproduces the same stream.
    BatchStream stream2(t11, tmn, cfg);
    for (int s = 0; s < 6; ++s) {
        const TaskBatch b = stream2.next();
        CHECK(b.items[0].example->id == first_ids[s]);
    }

    // Ratio 1:0 produces only Task-1-1 batches.
    TrainConfig solo = cfg;
    solo.ratio_task11 = 1;
    solo.ratio_taskmn = 0;
    BatchStream stream3(t11, tmn, solo);
    for (int s = 0; s < 4; ++s) CHECK(stream3.next().kind == TaskKind::Task11);

    // A required-but-empty partition is a configuration error.
    CHECK_THROWS_AS(BatchStream({}, tmn, cfg), ConfigError);
}

TEST_CASE("augment_spatial flips and translates boxes") {
    Example ex = make_example("aug", 1, 2, 4);
    ex.detections[0].box = BoundingBox{0.1, 0.2, 0.3, 0.4};
    ex.detections[0].face_box = BoundingBox{0.12, 0.22, 0.2, 0.3};

    Rng rng(3);
    const Example flipped = augment_spatial(ex, AugmentMode::Flip, rng);
    CHECK(flipped.detections[0].box.x1 == doctest::Approx(0.7));
    CHECK(flipped.detections[0].box.y1 == doctest::Approx(0.2));
    CHECK(flipped.detections[0].box.x2 == doctest::Approx(0.9));
    CHECK(flipped.detections[0].box.y2 == doctest::Approx(0.4));
    CHECK(flipped.detections[0].visual_feature == ex.detections[0].visual_feature);

    const Example twice = augment_spatial(flipped, AugmentMode::Flip, rng);
    CHECK(twice.detections[0].box.x1 == doctest::Approx(ex.detections[0].box.x1));
    CHECK(twice.detections[0].face_box.x2 == doctest::Approx(ex.detections[0].face_box.x2));

    for (int t = 0; t < 20; ++t) {
        const Example moved = augment_spatial(ex, AugmentMode::Translate, rng);
        for (std::size_t j = 0; j < ex.detections.size(); ++j) {
            const BoundingBox& a = ex.detections[j].box;
            const BoundingBox& b = moved.detections[j].box;
            CHECK(b.width() == doctest::Approx(a.width()).epsilon(1e-12));
            CHECK(b.height() == doctest::Approx(a.height()).epsilon(1e-12));
            CHECK(b.area() == doctest::Approx(a.area()).epsilon(1e-12));
            CHECK(b.x1 >= 0.0);
            CHECK(b.x2 <= 1.0);
        }
    }
}

TEST_CASE("train_step with zero weights applies only weight decay") {
    const auto& f = fixture();
    ModelConfig mcfg = small_model(f.world.config.d_v, f.world.vocab_size);
    Parameters params = init_parameters(mcfg);
    const Parameters before = params;
    OptimizerState opt = make_optimizer_state(params);

    TaskBatch batch;
    batch.kind = TaskKind::TaskMN;
    batch.step = 1;
    const Example* mn = nullptr;
    for (const Example& ex : f.gen.corpus.examples)
        if (!(ex.n_referred() == 1 && ex.m_detections() == 1)) {
            mn = &ex;
            break;
        }
    REQUIRE(mn);
    batch.items.push_back(BatchItem{mn, false, std::nullopt});

    TrainConfig tcfg = fast_train();
    tcfg.weights.w_intra = tcfg.weights.w_inter = tcfg.weights.w_null = 0.0;
    const LossBreakdown lb = train_step(params, opt, batch, mcfg, tcfg, 1);
    CHECK(lb.total == 0.0);
    const double factor = 1.0 - tcfg.learning_rate * tcfg.weight_decay;
    for (std::size_t i = 0; i < params.count(); ++i)
        for (std::size_t e = 0; e < params.tensor(i).a.size(); ++e)
            CHECK(params.tensor(i).a[e] ==
                  doctest::Approx(before.tensor(i).a[e] * factor).epsilon(1e-12));
}

TEST_CASE("repeated steps on a fixed batch drive the loss down") {
    const auto& f = fixture();
    ModelConfig mcfg = small_model(f.world.config.d_v, f.world.vocab_size);
    Parameters params = init_parameters(mcfg);
    OptimizerState opt = make_optimizer_state(params);

    TaskBatch batch;
    batch.kind = TaskKind::TaskMN;
    batch.step = 1;
    for (const Example& ex : f.gen.corpus.examples) {
        if (ex.n_referred() >= 2 && !ex.gt_links.empty())
            batch.items.push_back(BatchItem{&ex, false, std::nullopt});
        if (batch.items.size() == 4) break;
    }
    REQUIRE(batch.items.size() == 4);

    TrainConfig tcfg = fast_train();
    std::vector<double> totals;
    for (int s = 0; s < 50; ++s) {
        batch.step = s + 1;
        totals.push_back(train_step(params, opt, batch, mcfg, tcfg, 2).total);
    }
    int violations = 0;
    for (int s = 1; s < 20; ++s) violations += totals[s] > totals[s - 1];
    CHECK(violations <= 2);
    CHECK(totals.back() < totals.front());  // decreased over 50 steps
}

TEST_CASE("train_step is deterministic for a fixed seed") {
    const auto& f = fixture();
    ModelConfig mcfg = small_model(f.world.config.d_v, f.world.vocab_size);
    TrainConfig tcfg = fast_train(77);
    tcfg.dropout = 0.1;
    tcfg.max_steps = 6;
    tcfg.validate_every = 3;

    const TrainResult r1 = train_loop(f.gen.corpus, f.splits, mcfg, tcfg, 2);
    const TrainResult r2 = train_loop(f.gen.corpus, f.splits, mcfg, tcfg, 2);
    REQUIRE(r1.final_params.count() == r2.final_params.count());
    for (std::size_t i = 0; i < r1.final_params.count(); ++i)
        CHECK(r1.final_params.tensor(i).a == r2.final_params.tensor(i).a);
    REQUIRE(r1.log.size() == r2.log.size());
    for (std::size_t i = 0; i < r1.log.size(); ++i) {
        CHECK(r1.log[i].total == r2.log[i].total);
        CHECK(r1.log[i].val_accuracy == r2.log[i].val_accuracy);
    }
}

TEST_CASE("train_loop handles zero steps and sizes its log by validate_every") {
    const auto& f = fixture();
    ModelConfig mcfg = small_model(f.world.config.d_v, f.world.vocab_size);
    TrainConfig tcfg = fast_train();
    tcfg.max_steps = 0;
    const TrainResult r = train_loop(f.gen.corpus, f.splits, mcfg, tcfg, 1);
    CHECK(r.log.empty());
    const Parameters fresh = init_parameters(mcfg);
    for (std::size_t i = 0; i < fresh.count(); ++i)
        CHECK(r.final_params.tensor(i).a == fresh.tensor(i).a);

    tcfg.max_steps = 25;
    tcfg.validate_every = 10;
    const TrainResult r2 = train_loop(f.gen.corpus, f.splits, mcfg, tcfg, 2);
    CHECK(r2.log.size() == 2);  // floor(25 / 10)
    CHECK(r2.best_val_accuracy >= 0.0);
}

TEST_CASE("examples beyond the encoder limits never enter a batch") {
    const auto& f = fixture();
    ModelConfig mcfg = small_model(f.world.config.d_v, f.world.vocab_size);
    mcfg.max_tokens = 3;  // every multi-name caption exceeds this
    mcfg.max_boxes = 1;
    TrainConfig tcfg = fast_train();
    tcfg.max_steps = 5;
    // With all Task-M-N examples excluded, the 1:2 ratio cannot be served.
    CHECK_THROWS_AS(train_loop(f.gen.corpus, f.splits, mcfg, tcfg, 1), ConfigError);
}
