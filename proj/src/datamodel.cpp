#include "namelink/datamodel.hpp"

#include <algorithm>
#include <cmath>

#include "namelink/error.hpp"
#include "namelink/rng.hpp"

namespace namelink {

namespace {

void check_box(const BoundingBox& b, const std::string& what, const std::string& ex_id) {
    auto bad = [&](const char* why) {
        throw ValidationError(ex_id + ": " + what + " " + why);
    };
    if (!(b.x1 >= 0.0 && b.y1 >= 0.0 && b.x2 <= 1.0 && b.y2 <= 1.0)) bad("outside [0,1]");
    if (!(b.x1 < b.x2)) bad("has x1 >= x2");
    if (!(b.y1 < b.y2)) bad("has y1 >= y2");
}

}  // namespace

void validate_example(const Example& ex, const CorpusHeader& header) {
    const int caption_len = ex.caption.length();
    if (caption_len < 1) throw ValidationError(ex.id + ": empty caption");

    for (std::size_t j = 0; j < ex.detections.size(); ++j) {
        const Detection& d = ex.detections[j];
        const std::string what = "detection " + std::to_string(j);
        check_box(d.box, what + " box", ex.id);
        check_box(d.face_box, what + " face_box", ex.id);
        if (!d.box.contains(d.face_box))
            throw ValidationError(ex.id + ": " + what + " face_box not contained in box");
        if (static_cast<int>(d.visual_feature.size()) != header.d_v)
            throw ValidationError(ex.id + ": " + what + " visual feature length != d_v");
        if (d.face_embedding) {
            if (static_cast<int>(d.face_embedding->size()) != header.d_f)
                throw ValidationError(ex.id + ": " + what + " face embedding length != d_f");
            double s = 0.0;
            for (float v : *d.face_embedding) s += static_cast<double>(v) * v;
            if (std::abs(std::sqrt(s) - 1.0) > 1e-6)
                throw ValidationError(ex.id + ": " + what + " face embedding not unit norm");
        }
    }

    std::vector<std::pair<int, int>> spans;
    for (std::size_t i = 0; i < ex.referred.size(); ++i) {
        const ReferredPerson& rp = ex.referred[i];
        const std::string what = "referred person " + std::to_string(i);
        if (rp.mentions.empty()) throw ValidationError(ex.id + ": " + what + " has no mentions");
        for (const Mention& m : rp.mentions) {
            if (!(0 <= m.token_start && m.token_start < m.token_end && m.token_end <= caption_len))
                throw ValidationError(ex.id + ": " + what + " mention span out of range");
            for (int t = m.token_start; t < m.token_end; ++t)
                if (ex.caption.tokens[t] != kNameToken)
                    throw ValidationError(ex.id + ": " + what +
                                          " mention span covers a non-[NAME] token");
            spans.emplace_back(m.token_start, m.token_end);
        }
    }
    std::sort(spans.begin(), spans.end());
    for (std::size_t i = 1; i < spans.size(); ++i)
        if (spans[i].first < spans[i - 1].second)
            throw ValidationError(ex.id + ": overlapping mention spans");

    std::set<int> people, boxes;
    for (const auto& [p, d] : ex.gt_links) {
        if (p < 0 || p >= ex.n_referred() || d < 0 || d >= ex.m_detections())
            throw ValidationError(ex.id + ": gt_link index out of range");
        if (!people.insert(p).second || !boxes.insert(d).second)
            throw ValidationError(ex.id + ": injective mapping violated");
    }
}

std::vector<Example> filter_examples(const std::vector<Example>& examples,
                                     const FilterPolicy& policy) {
    std::vector<Example> kept;
    kept.reserve(examples.size());
    for (const Example& ex : examples) {
        if (policy.require_detection && ex.m_detections() == 0) continue;
        if (policy.require_referred && ex.n_referred() == 0) continue;
        if (policy.require_verb && !ex.caption.has_verb) continue;
        if (policy.min_year > 0 && ex.year < policy.min_year) continue;
        if (policy.drop_cropped && ex.cropped) continue;
        kept.push_back(ex);
    }
    return kept;
}

SplitAssignment make_splits(const std::vector<Example>& examples,
                            double eval_identity_fraction, std::uint64_t seed) {
    if (!(eval_identity_fraction > 0.0 && eval_identity_fraction < 1.0))
        throw ConfigError("eval_identity_fraction must lie in (0, 1)");

    std::set<std::string> all_ids;
    for (const Example& ex : examples)
        for (const auto& r : ex.referred) all_ids.insert(r.identity_id);
    if (all_ids.empty()) throw ConfigError("corpus has no identities to split on");

    std::vector<std::string> id_list(all_ids.begin(), all_ids.end());
    Rng rng(hash_combine(seed, 0x51D5ULL));
    rng.shuffle(id_list);
    std::size_t n_eval = static_cast<std::size_t>(
        std::llround(eval_identity_fraction * static_cast<double>(id_list.size())));
    n_eval = std::max<std::size_t>(1, std::min(n_eval, id_list.size() - 1));

    SplitAssignment out;
    out.eval_identities.insert(id_list.begin(), id_list.begin() + n_eval);

    std::vector<const Example*> superset;
    for (const Example& ex : examples) {
        bool touches_eval = false;
        for (const auto& r : ex.referred)
            if (out.eval_identities.count(r.identity_id)) {
                touches_eval = true;
                break;
            }
        if (touches_eval)
            superset.push_back(&ex);  // partial overlaps land here, never in train
        else
            out.train_ids.push_back(ex.id);
    }

    std::vector<const Example*> nontrivial;
    for (const Example* ex : superset)
        if (!(ex->n_referred() == 1 && ex->m_detections() == 1)) nontrivial.push_back(ex);
    if (nontrivial.empty())
        throw ConfigError("evaluation superset is empty after removing trivial examples");

    Rng half_rng(hash_combine(seed, 0x5eed));
    std::vector<std::size_t> order(nontrivial.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    half_rng.shuffle(order);
    const std::size_t n_val = nontrivial.size() / 2;
    for (std::size_t i = 0; i < order.size(); ++i) {
        const std::string& id = nontrivial[order[i]]->id;
        if (i < n_val)
            out.val_ids.push_back(id);
        else
            out.test_ids.push_back(id);
    }
    return out;
}

std::vector<Example> interactive_subset(const std::vector<Example>& examples) {
    std::vector<Example> kept;
    for (const Example& ex : examples)
        if (is_interactive(ex)) kept.push_back(ex);
    return kept;
}

}  // namespace namelink
