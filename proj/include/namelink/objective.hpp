#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <set>
#include <utility>
#include <vector>

#include "namelink/datamodel.hpp"
#include "namelink/encoder.hpp"
#include "namelink/tape.hpp"

namespace namelink {

// Box-name cosine similarity matrix. Row i = referred person i; when
// has_null_row, the extra final row holds similarities against the learned
// null name.
struct SimilarityMatrix {
    Mat values;
    bool has_null_row = false;

    int n_names() const { return values.rows - (has_null_row ? 1 : 0); }
    int m_boxes() const { return values.cols; }
    int null_row() const { return n_names(); }
};

struct LossWeights {
    double w_intra = 1.0;
    double w_inter = 1.0;
    double w_null = 1.0;
};

struct LossBreakdown {
    double l_intra = 0.0;
    double l_inter = 0.0;
    double l_null = 0.0;
    double total = 0.0;
    int link_count = 0;
    int pair_count = 0;
    int null_count = 0;
};

// ---- tape-level building blocks (used by the trainer) ----

// Mean of hidden text rows covered by each person's mentions -> n x d.
ad::Var name_pooling(ad::Tape& t, ad::Var hidden_text,
                     const std::vector<ReferredPerson>& referred);

// Cosine similarities between pooled name rows (plus optional null vector)
// and box hidden rows -> (n [+1]) x m.
ad::Var similarity(ad::Tape& t, ad::Var pooled_names, ad::Var box_hidden,
                   std::optional<ad::Var> null_vector);

// Sum over links of -[log softmax-over-boxes + log softmax-over-names].
// S must carry the null row iff null_in_softmax (the name softmax then ranges
// over n+1 rows); the box softmax always ranges over the linked row.
ad::Var intra_sum(ad::Tape& t, ad::Var S, int n_names,
                  const std::vector<std::pair<int, int>>& links, bool null_in_softmax);

// Binary cross-entropy of sigmoid(alpha * s + beta) against the label.
ad::Var inter_bce(ad::Tape& t, ad::Var s_single, ad::Var alpha, ad::Var beta, bool positive);

// Sum of BCE terms over the null row: target 0 for linked columns, 1 for
// selected unlinked columns; other columns are ignored.
ad::Var null_bce_sum(ad::Tape& t, ad::Var S_with_null, int null_row,
                     const std::vector<int>& linked_cols,
                     const std::vector<int>& selected_cols);

// ---- value-level operations (inference and oracle-checked tests) ----

Mat name_pooling_values(const Mat& hidden_text, const std::vector<ReferredPerson>& referred);
SimilarityMatrix similarity_matrix(const Mat& pooled_names, const Mat& box_hidden,
                                   bool include_null, const Mat* null_vector);
double loss_intra(const SimilarityMatrix& S, const std::vector<std::pair<int, int>>& links,
                  bool null_in_softmax = false);
double loss_inter(const SimilarityMatrix& S, double alpha, double beta, bool positive);
double loss_null(const SimilarityMatrix& S, const std::set<int>& linked_cols,
                 const std::set<int>& selected_cols);

// ---- batched training loss ----

enum class TaskKind { Task11, TaskMN };

struct BatchItem {
    const Example* example = nullptr;
    bool negative = false;                      // Task-1-1 only
    std::optional<Detection> replacement_box;   // set when negative
};

struct TaskBatch {
    TaskKind kind = TaskKind::TaskMN;
    std::vector<BatchItem> items;
    std::int64_t step = 0;
};

struct ObjectiveOptions {
    bool train_mode = false;
    double dropout_rate = 0.0;
    std::uint64_t dropout_seed = 0;
    bool null_in_softmax = false;
    double area_ratio = 0.6;
    double blur_threshold = 50.0;
    int threads = 1;
};

// Loss of one batch: l_intra averages over links in the batch, l_inter over
// sampled pairs, l_null over participating columns. When grad_out is given it
// receives d(total)/d(theta) accumulated in deterministic item order.
LossBreakdown total_loss(const TaskBatch& batch, const Parameters& params,
                         const ModelConfig& cfg, const LossWeights& weights,
                         const ObjectiveOptions& opts, std::vector<Mat>* grad_out);

// Similarity matrix of one example under the current parameters (eval mode).
SimilarityMatrix model_similarity(const Parameters& params, const ModelConfig& cfg,
                                  const Example& example, bool include_null);

}  // namespace namelink
