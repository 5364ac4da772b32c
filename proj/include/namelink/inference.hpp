#pragma once

#include <string>
#include <vector>

#include "namelink/datamodel.hpp"
#include "namelink/encoder.hpp"
#include "namelink/inference_types.hpp"
#include "namelink/mat.hpp"
#include "namelink/objective.hpp"
#include "namelink/rng.hpp"

namespace namelink {

// Person i -> argmax_j S[i, j], ties to the lowest j. Non-injective by design.
Prediction predict_argmax(const SimilarityMatrix& S);

// Maximum-total-similarity injective assignment of min(n, m) persons
// (min-weight matching on -S), deterministic tie-breaking.
Prediction predict_bipartite(const SimilarityMatrix& S);

// Uniformly random injective assignment of min(n, m) persons.
Prediction baseline_random(const Example& example, Rng& rng);

// Persons in first-mention order paired with detections by decreasing area.
Prediction baseline_big_small(const Example& example);

enum class L2RMode { All, Largest };

// When selecting the largest d detections, the literal rule d = max(m, n)
// keeps every box; the default keeps d = min(m, n).
enum class L2RCutoff { MinNM, LiteralMaxNM };

// Persons in first-mention order paired with detections by ascending x1
// (ties by y1 then index); Largest mode first restricts to the d
// largest-area detections.
Prediction baseline_l2r(const Example& example, L2RMode mode,
                        L2RCutoff cutoff = L2RCutoff::MinNM);

// Similarity-matrix inference with a trained model (null row excluded).
Prediction model_predict(const Parameters& params, const ModelConfig& cfg,
                         const Example& example, bool bipartite);

}  // namespace namelink
