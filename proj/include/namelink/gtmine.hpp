#pragma once

#include <utility>
#include <vector>

#include "namelink/datamodel.hpp"
#include "namelink/mat.hpp"

namespace namelink {

constexpr double kDefaultLinkThreshold = 0.46;
constexpr double kDefaultAreaRatio = 0.6;
constexpr double kDefaultBlurThreshold = 50.0;

// Pairwise face dissimilarity: entry(i, j) = 1 - dot(ref_i, det_j) on
// unit-norm embeddings, so costs lie in [0, 2].
struct CostMatrix {
    Mat values;  // rows = reference embeddings, cols = detection embeddings
};

struct MinedLink {
    int person_index = 0;
    int detection_index = 0;
    double cost = 0.0;
};

struct LinkEstimate {
    std::vector<MinedLink> links;
    double threshold = kDefaultLinkThreshold;
};

struct UnlinkedBoxLabel {
    int detection_index = 0;
    bool insignificant = false;
    bool blurry = false;
    bool selected = false;
};

CostMatrix face_cost_matrix(const std::vector<Mat>& reference_embeddings,
                            const std::vector<Mat>& detection_embeddings);

// Min-weight matching on the face cost matrix, keeping pairs at or below the
// threshold. Row i corresponds to reference i, column j to detection j.
LinkEstimate estimate_links(const std::vector<Mat>& reference_embeddings,
                            const std::vector<Mat>& detection_embeddings,
                            double threshold = kDefaultLinkThreshold);

// Population variance of the valid (interior-only) convolution with the
// 5-point Laplace kernel. Crop must be at least 3x3.
double laplacian_variance(const Mat& crop);

// Labels each detection: insignificant when its face area is below
// area_ratio times the largest face area in the example, blurry when the
// Laplacian variance of its crop is below blur_threshold, selected when
// insignificant and blurry and not linked.
std::vector<UnlinkedBoxLabel> select_unlinked_boxes(const Example& example,
                                                    const LinkEstimate& links,
                                                    double area_ratio = kDefaultAreaRatio,
                                                    double blur_threshold = kDefaultBlurThreshold);

// Same labeling driven by an explicit linked-detection set; used by the
// trainer where links come from the example's own gt_links.
std::vector<UnlinkedBoxLabel> select_unlinked_boxes_for(
    const Example& example, const std::vector<int>& linked_detections,
    double area_ratio = kDefaultAreaRatio, double blur_threshold = kDefaultBlurThreshold);

// Example-level mining: rows are the referred persons that have a reference
// embedding (empty Mat = none), columns the detections that carry a face
// embedding; link indices are mapped back to person/detection indices.
LinkEstimate estimate_links_for_example(const Example& example,
                                        const std::vector<Mat>& references,
                                        double threshold = kDefaultLinkThreshold);

}  // namespace namelink
