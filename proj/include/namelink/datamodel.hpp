#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "namelink/mat.hpp"

namespace namelink {

// Reserved token ids shared by every corpus.
constexpr std::int32_t kPadToken = 0;
constexpr std::int32_t kNameToken = 1;

// Axis-aligned box in image-normalized fractional coordinates.
struct BoundingBox {
    double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return width() * height(); }
    bool contains(const BoundingBox& inner) const {
        return inner.x1 >= x1 && inner.y1 >= y1 && inner.x2 <= x2 && inner.y2 <= y2;
    }
};

// One detected person: body box, face box, visual feature, optional face
// embedding and grayscale face crop (for blur analysis). Feature payloads are
// f32 so corpus round-trips are bit-exact.
struct Detection {
    BoundingBox box;
    BoundingBox face_box;
    std::vector<float> visual_feature;
    std::optional<std::vector<float>> face_embedding;
    std::optional<Mat> face_crop;  // intensities in [0, 255], f32-representable
};

// Half-open token span of one [NAME] occurrence.
struct Mention {
    int token_start = 0;
    int token_end = 0;
};

struct ReferredPerson {
    std::string identity_id;
    std::vector<Mention> mentions;

    int first_mention_start() const {
        int best = mentions.empty() ? 0 : mentions.front().token_start;
        for (const auto& m : mentions) best = std::min(best, m.token_start);
        return best;
    }
};

struct Caption {
    std::vector<std::int32_t> tokens;
    bool has_verb = false;

    int length() const { return static_cast<int>(tokens.size()); }
};

struct Example {
    std::string id;
    Caption caption;
    std::vector<Detection> detections;
    std::vector<ReferredPerson> referred;
    std::vector<std::pair<int, int>> gt_links;  // (person_index, detection_index)
    int year = 2000;
    bool cropped = false;
    std::string category;

    int n_referred() const { return static_cast<int>(referred.size()); }
    int m_detections() const { return static_cast<int>(detections.size()); }

    std::set<std::string> identities() const {
        std::set<std::string> ids;
        for (const auto& r : referred) ids.insert(r.identity_id);
        return ids;
    }
};

struct CorpusHeader {
    int version = 1;
    int d_v = 0;
    int d_f = 0;
    int vocab_size = 0;
};

struct Corpus {
    CorpusHeader header;
    std::vector<Example> examples;
};

struct SplitAssignment {
    std::vector<std::string> train_ids;
    std::vector<std::string> val_ids;
    std::vector<std::string> test_ids;
    std::set<std::string> eval_identities;
};

struct FilterPolicy {
    bool require_detection = false;
    bool require_referred = false;
    bool require_verb = false;
    int min_year = 0;       // 0 disables the year check
    bool drop_cropped = false;
};

// Throws ValidationError naming the example when any invariant fails:
// box geometry, feature widths, unit-norm face embeddings, mention spans
// holding only [NAME] tokens, and injectivity of gt_links on both sides.
void validate_example(const Example& ex, const CorpusHeader& header);

// Keeps exactly the examples passing every enabled predicate, in order.
std::vector<Example> filter_examples(const std::vector<Example>& examples,
                                     const FilterPolicy& policy);

// Identity-disjoint split construction: sample eval identities, build the
// val/test superset from examples containing any of them, train from examples
// containing none, drop (1,1) examples from the superset, halve by seeded
// shuffle. Throws ConfigError if the superset is empty after trivial-removal.
SplitAssignment make_splits(const std::vector<Example>& examples,
                            double eval_identity_fraction, std::uint64_t seed);

// Examples with >=2 detections, >=2 referred people, and a verb.
std::vector<Example> interactive_subset(const std::vector<Example>& examples);

inline bool is_interactive(const Example& ex) {
    return ex.m_detections() >= 2 && ex.n_referred() >= 2 && ex.caption.has_verb;
}

}  // namespace namelink
