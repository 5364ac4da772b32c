#include "namelink/inference.hpp"

#include <algorithm>
#include <numeric>

#include "namelink/error.hpp"
#include "namelink/matching.hpp"

namespace namelink {

Prediction predict_argmax(const SimilarityMatrix& S) {
    Prediction pred;
    pred.method = "argmax";
    const int n = S.n_names();
    const int m = S.m_boxes();
    if (m == 0) return pred;
    for (int i = 0; i < n; ++i) {
        int best = 0;
        for (int j = 1; j < m; ++j)
            if (S.values(i, j) > S.values(i, best)) best = j;
        pred.assignments.emplace_back(i, best);
    }
    return pred;
}

Prediction predict_bipartite(const SimilarityMatrix& S) {
    Prediction pred;
    pred.method = "bipartite";
    const int n = S.n_names();
    const int m = S.m_boxes();
    if (n == 0 || m == 0) return pred;
    Mat neg(n, m);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) neg(i, j) = -S.values(i, j);
    pred.assignments = min_weight_matching(neg);
    return pred;
}

namespace {

// Persons ordered by the token index of their first mention, ties by index.
std::vector<int> persons_by_mention_order(const Example& ex) {
    std::vector<int> order(ex.referred.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return ex.referred[a].first_mention_start() < ex.referred[b].first_mention_start();
    });
    return order;
}

}  // namespace

Prediction baseline_random(const Example& example, Rng& rng) {
    Prediction pred;
    pred.example_id = example.id;
    pred.method = "random";
    const int n = example.n_referred();
    const int m = example.m_detections();
    const int k = std::min(n, m);
    if (k == 0) return pred;

    std::vector<int> persons(n), dets(m);
    std::iota(persons.begin(), persons.end(), 0);
    std::iota(dets.begin(), dets.end(), 0);
    rng.shuffle(persons);
    rng.shuffle(dets);
    for (int i = 0; i < k; ++i) pred.assignments.emplace_back(persons[i], dets[i]);
    std::sort(pred.assignments.begin(), pred.assignments.end());
    return pred;
}

Prediction baseline_big_small(const Example& example) {
    Prediction pred;
    pred.example_id = example.id;
    pred.method = "big-small";
    const int m = example.m_detections();
    if (m == 0) return pred;

    std::vector<int> dets(m);
    std::iota(dets.begin(), dets.end(), 0);
    std::stable_sort(dets.begin(), dets.end(), [&](int a, int b) {
        return example.detections[a].box.area() > example.detections[b].box.area();
    });
    const std::vector<int> persons = persons_by_mention_order(example);
    const int k = std::min<int>(persons.size(), m);
    for (int i = 0; i < k; ++i) pred.assignments.emplace_back(persons[i], dets[i]);
    std::sort(pred.assignments.begin(), pred.assignments.end());
    return pred;
}

Prediction baseline_l2r(const Example& example, L2RMode mode, L2RCutoff cutoff) {
    Prediction pred;
    pred.example_id = example.id;
    pred.method = mode == L2RMode::All ? "l2r-all" : "l2r-largest";
    const int n = example.n_referred();
    const int m = example.m_detections();
    if (m == 0) return pred;

    std::vector<int> dets(m);
    std::iota(dets.begin(), dets.end(), 0);
    if (mode == L2RMode::Largest) {
        const int d = cutoff == L2RCutoff::LiteralMaxNM ? std::max(m, n)
                                                        : std::max(1, std::min(m, n));
        std::stable_sort(dets.begin(), dets.end(), [&](int a, int b) {
            return example.detections[a].box.area() > example.detections[b].box.area();
        });
        if (static_cast<int>(dets.size()) > d) dets.resize(d);
    }
    std::stable_sort(dets.begin(), dets.end(), [&](int a, int b) {
        const BoundingBox& ba = example.detections[a].box;
        const BoundingBox& bb = example.detections[b].box;
        if (ba.x1 != bb.x1) return ba.x1 < bb.x1;
        if (ba.y1 != bb.y1) return ba.y1 < bb.y1;
        return a < b;
    });
    const std::vector<int> persons = persons_by_mention_order(example);
    const int k = std::min<std::size_t>(persons.size(), dets.size());
    for (int i = 0; i < k; ++i) pred.assignments.emplace_back(persons[i], dets[i]);
    std::sort(pred.assignments.begin(), pred.assignments.end());
    return pred;
}

Prediction model_predict(const Parameters& params, const ModelConfig& cfg,
                         const Example& example, bool bipartite) {
    const SimilarityMatrix S = model_similarity(params, cfg, example, /*include_null=*/false);
    Prediction pred = bipartite ? predict_bipartite(S) : predict_argmax(S);
    pred.example_id = example.id;
    return pred;
}

}  // namespace namelink
