#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <map>
#include <set>

#include "namelink/corpus_io.hpp"
#include "namelink/gtmine.hpp"
#include "namelink/synthgen.hpp"
#include "test_util.hpp"

using namespace namelink;
using testutil::TempDir;

namespace {

WorldConfig small_config() {
    WorldConfig cfg;
    cfg.n_identities = 60;
    cfg.d_v = 12;
    cfg.d_f = 24;
    cfg.seed = 404;
    return cfg;
}

}  // namespace

TEST_CASE("generate_world is deterministic with well-separated prototypes") {
    const WorldConfig cfg;  // defaults: 1000 identities, d_f 64
    const World a = generate_world(cfg);
    const World b = generate_world(cfg);
    REQUIRE(a.identities.size() == b.identities.size());
    for (std::size_t i = 0; i < a.identities.size(); ++i) {
        CHECK(a.identities[i].id == b.identities[i].id);
        CHECK(a.identities[i].face_prototype.a == b.identities[i].face_prototype.a);
    }
    CHECK(a.templates.size() ==
          static_cast<std::size_t>(cfg.n_verbs + cfg.n_positional));

    double max_cos = -1.0;
    for (std::size_t i = 0; i < a.identities.size(); ++i)
        for (std::size_t j = i + 1; j < a.identities.size(); ++j)
            max_cos = std::max(max_cos, dot(a.identities[i].face_prototype,
                                            a.identities[j].face_prototype));
    CHECK(1.0 - max_cos > 0.3);  // min pairwise cosine distance
}

TEST_CASE("generated examples satisfy the corpus invariants") {
    const World world = generate_world(small_config());
    CorpusHeader header;
    header.d_v = world.config.d_v;
    header.d_f = world.config.d_f;
    header.vocab_size = world.vocab_size;
    for (int i = 0; i < 200; ++i) {
        const auto [ex, oracle] = generate_example(world, i);
        CHECK_NOTHROW(validate_example(ex, header));

        // Oracle mapping is injective and total over referred persons.
        REQUIRE(oracle.true_links.size() == ex.referred.size());
        std::set<int> persons, dets;
        for (const auto& [p, d] : oracle.true_links) {
            CHECK(persons.insert(p).second);
            CHECK(dets.insert(d).second);
            CHECK(d >= 0);
            CHECK(d < ex.m_detections());
        }
        CHECK(oracle.bystanders.size() + ex.referred.size() == ex.detections.size());
        CHECK(oracle.references.size() == ex.referred.size());

        // gt_links is a subset of the oracle mapping.
        for (const auto& link : ex.gt_links)
            CHECK(std::find(oracle.true_links.begin(), oracle.true_links.end(), link) !=
                  oracle.true_links.end());
    }
}

TEST_CASE("bystanders always satisfy the unlinked-box selection rule") {
    const World world = generate_world(small_config());
    for (int i = 0; i < 300; ++i) {
        const auto [ex, oracle] = generate_example(world, i);
        std::vector<int> linked;
        for (const auto& [p, d] : oracle.true_links) linked.push_back(d);
        const auto labels = select_unlinked_boxes_for(ex, linked);
        std::set<int> bystanders(oracle.bystanders.begin(), oracle.bystanders.end());
        for (const auto& label : labels) {
            if (bystanders.count(label.detection_index)) {
                CHECK(label.insignificant);
                CHECK(label.blurry);
                CHECK(label.selected);
            } else {
                CHECK_FALSE(label.selected);  // oracle-linked boxes are never selected
            }
        }
    }
}

TEST_CASE("ordered-layout examples list mentions in left-to-right box order") {
    const World world = generate_world(small_config());
    int ordered_seen = 0;
    for (int i = 0; i < 300; ++i) {
        const auto [ex, oracle] = generate_example(world, i);
        if (ex.caption.has_verb) continue;  // positional templates are the ordered ones
        ++ordered_seen;
        std::map<int, int> det_of_person;
        for (const auto& [p, d] : oracle.true_links) det_of_person[p] = d;
        double prev_x1 = -1.0;
        for (int p = 0; p < ex.n_referred(); ++p) {
            const double x1 = ex.detections[det_of_person[p]].box.x1;
            CHECK(x1 > prev_x1);
            prev_x1 = x1;
        }
    }
    CHECK(ordered_seen > 50);
}

TEST_CASE("generated links are minable from the reference embeddings") {
    const World world = generate_world(small_config());
    int correct = 0, mined = 0, expected = 0;
    for (int i = 0; i < 200; ++i) {
        const auto [ex, oracle] = generate_example(world, i);
        const LinkEstimate est = estimate_links_for_example(ex, oracle.references);
        std::set<std::pair<int, int>> truth(oracle.true_links.begin(), oracle.true_links.end());
        for (const MinedLink& l : est.links)
            correct += truth.count({l.person_index, l.detection_index});
        mined += static_cast<int>(est.links.size());
        expected += static_cast<int>(oracle.true_links.size());
    }
    CHECK(correct == mined);            // precision 1.0 at this scale
    CHECK(mined >= expected * 97 / 100);  // near-total recall
}

TEST_CASE("generate_corpus round-trips through the corpus files byte-identically") {
    WorldConfig cfg = small_config();
    const World world = generate_world(cfg);
    const GeneratedCorpus gen = generate_corpus(world, 50);
    CHECK(gen.corpus.examples.size() == 50);

    TempDir dir("gen1");
    TempDir dir2("gen2");
    save_corpus(gen.corpus, dir.path());
    save_oracle(gen.oracle, dir.path() / "oracle.jsonl");
    const Corpus loaded = load_corpus(dir.path());
    CHECK(loaded.examples.size() == 50);

    const GeneratedCorpus again = generate_corpus(generate_world(cfg), 50);
    save_corpus(again.corpus, dir2.path());
    save_oracle(again.oracle, dir2.path() / "oracle.jsonl");
    for (const char* name : {"manifest.json", "records.jsonl", "features.bin", "oracle.jsonl"}) {
        std::ifstream f1(dir.path() / name, std::ios::binary);
        std::ifstream f2(dir2.path() / name, std::ios::binary);
        std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
        std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
        CHECK(s1 == s2);
        CHECK_FALSE(s1.empty());
    }

    const auto oracle_back = load_oracle(dir.path() / "oracle.jsonl");
    REQUIRE(oracle_back.size() == gen.oracle.size());
    CHECK(oracle_back[7].example_id == gen.oracle[7].example_id);
    CHECK(oracle_back[7].true_links == gen.oracle[7].true_links);
    CHECK(oracle_back[7].references[0].a == gen.oracle[7].references[0].a);
}

TEST_CASE("the empirical (n,m) histogram tracks the configured distribution") {
    WorldConfig cfg = small_config();
    cfg.nm_weights = {{1, 1, 0.25}, {2, 2, 0.25}, {2, 3, 0.25}, {3, 4, 0.25}};
    const World world = generate_world(cfg);
    const int count = 10000;
    std::map<std::pair<int, int>, int> hist;
    for (int i = 0; i < count; ++i) {
        const auto [ex, oracle] = generate_example(world, i);
        ++hist[{ex.n_referred(), ex.m_detections()}];
    }
    REQUIRE(hist.size() == 4);
    for (const auto& [key, got] : hist) {
        const double expectation = count * 0.25;
        const double sigma = std::sqrt(count * 0.25 * 0.75);
        CHECK(std::abs(got - expectation) < 3.0 * sigma);
    }
}
