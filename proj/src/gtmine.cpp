#include "namelink/gtmine.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "namelink/error.hpp"
#include "namelink/matching.hpp"

namespace namelink {

namespace {

void check_unit_embeddings(const std::vector<Mat>& embs, const char* what, int expect_len) {
    for (std::size_t i = 0; i < embs.size(); ++i) {
        const Mat& e = embs[i];
        if (static_cast<int>(e.size()) != expect_len)
            throw DimensionError(std::string(what) + " " + std::to_string(i) +
                                 " has mismatched length");
        if (std::abs(l2_norm(e) - 1.0) > 1e-6)
            throw ValidationError(std::string(what) + " " + std::to_string(i) +
                                  " is not unit norm");
    }
}

}  // namespace

CostMatrix face_cost_matrix(const std::vector<Mat>& reference_embeddings,
                            const std::vector<Mat>& detection_embeddings) {
    int len = 0;
    if (!reference_embeddings.empty())
        len = static_cast<int>(reference_embeddings.front().size());
    else if (!detection_embeddings.empty())
        len = static_cast<int>(detection_embeddings.front().size());
    check_unit_embeddings(reference_embeddings, "reference embedding", len);
    check_unit_embeddings(detection_embeddings, "detection embedding", len);

    CostMatrix cm;
    cm.values = Mat(static_cast<int>(reference_embeddings.size()),
                    static_cast<int>(detection_embeddings.size()));
    for (int i = 0; i < cm.values.rows; ++i)
        for (int j = 0; j < cm.values.cols; ++j)
            cm.values(i, j) = 1.0 - dot(reference_embeddings[i], detection_embeddings[j]);
    return cm;
}

LinkEstimate estimate_links(const std::vector<Mat>& reference_embeddings,
                            const std::vector<Mat>& detection_embeddings, double threshold) {
    const CostMatrix cm = face_cost_matrix(reference_embeddings, detection_embeddings);
    LinkEstimate est;
    est.threshold = threshold;
    for (const auto& [r, c] : min_weight_matching(cm.values)) {
        const double cost = cm.values(r, c);
        if (cost <= threshold) est.links.push_back(MinedLink{r, c, cost});
    }
    return est;
}

double laplacian_variance(const Mat& crop) {
    if (crop.rows < 3 || crop.cols < 3)
        throw SizeError("crop must be at least 3x3 for Laplacian variance");
    const int n = (crop.rows - 2) * (crop.cols - 2);
    double mean = 0.0;
    std::vector<double> resp;
    resp.reserve(n);
    for (int r = 1; r + 1 < crop.rows; ++r) {
        for (int c = 1; c + 1 < crop.cols; ++c) {
            const double v = crop(r - 1, c) + crop(r + 1, c) + crop(r, c - 1) + crop(r, c + 1) -
                             4.0 * crop(r, c);
            resp.push_back(v);
            mean += v;
        }
    }
    mean /= n;
    double var = 0.0;
    for (double v : resp) var += (v - mean) * (v - mean);
    return var / n;
}

std::vector<UnlinkedBoxLabel> select_unlinked_boxes_for(
    const Example& example, const std::vector<int>& linked_detections, double area_ratio,
    double blur_threshold) {
    std::vector<UnlinkedBoxLabel> labels;
    if (example.detections.empty()) return labels;

    double largest_face = 0.0;
    for (const Detection& d : example.detections)
        largest_face = std::max(largest_face, d.face_box.area());

    const std::set<int> linked(linked_detections.begin(), linked_detections.end());
    for (int j = 0; j < example.m_detections(); ++j) {
        const Detection& d = example.detections[j];
        UnlinkedBoxLabel label;
        label.detection_index = j;
        label.insignificant = d.face_box.area() < area_ratio * largest_face;
        label.blurry = d.face_crop && laplacian_variance(*d.face_crop) < blur_threshold;
        label.selected = label.insignificant && label.blurry && linked.count(j) == 0;
        labels.push_back(label);
    }
    return labels;
}

std::vector<UnlinkedBoxLabel> select_unlinked_boxes(const Example& example,
                                                    const LinkEstimate& links, double area_ratio,
                                                    double blur_threshold) {
    std::vector<int> linked;
    for (const MinedLink& l : links.links) linked.push_back(l.detection_index);
    return select_unlinked_boxes_for(example, linked, area_ratio, blur_threshold);
}

LinkEstimate estimate_links_for_example(const Example& example,
                                        const std::vector<Mat>& references, double threshold) {
    if (references.size() != example.referred.size())
        throw DimensionError("reference list does not match referred persons for " + example.id);
    std::vector<Mat> refs;
    std::vector<int> row_to_person;
    for (std::size_t i = 0; i < references.size(); ++i) {
        if (references[i].empty()) continue;
        refs.push_back(references[i]);
        row_to_person.push_back(static_cast<int>(i));
    }
    std::vector<Mat> dets;
    std::vector<int> col_to_detection;
    for (std::size_t j = 0; j < example.detections.size(); ++j) {
        const auto& emb = example.detections[j].face_embedding;
        if (!emb) continue;
        Mat v(1, static_cast<int>(emb->size()));
        for (std::size_t c = 0; c < emb->size(); ++c) v.a[c] = static_cast<double>((*emb)[c]);
        dets.push_back(std::move(v));
        col_to_detection.push_back(static_cast<int>(j));
    }
    LinkEstimate raw = estimate_links(refs, dets, threshold);
    LinkEstimate out;
    out.threshold = threshold;
    for (const MinedLink& l : raw.links)
        out.links.push_back(MinedLink{row_to_person[l.person_index],
                                      col_to_detection[l.detection_index], l.cost});
    return out;
}

}  // namespace namelink
