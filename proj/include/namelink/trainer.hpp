#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <utility>
#include <vector>

#include "namelink/datamodel.hpp"
#include "namelink/encoder.hpp"
#include "namelink/objective.hpp"
#include "namelink/rng.hpp"

namespace namelink {

struct TrainConfig {
    double learning_rate = 5e-5;
    double weight_decay = 0.01;
    double dropout = 0.1;
    int batch_size = 32;
    std::int64_t max_steps = 2000;
    std::int64_t validate_every = 500;
    int ratio_task11 = 1;
    int ratio_taskmn = 2;
    double negative_prob = 0.5;
    std::uint64_t seed = 0;
    LossWeights weights;
    bool augment_flip = false;
    bool augment_translate = false;
    bool null_in_softmax = false;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double area_ratio = 0.6;
    double blur_threshold = 50.0;
    std::int64_t warmup_steps = 0;   // linear learning-rate warmup
    bool cosine_decay = false;       // cosine decay to zero after warmup

    // Effective learning rate at a 1-based step.
    double lr_at(std::int64_t step) const;

    void validate() const;
};

struct OptimizerState {
    std::vector<Mat> m;  // first moments, index-aligned with Parameters
    std::vector<Mat> v;  // second moments
    std::int64_t step = 0;
};

OptimizerState make_optimizer_state(const Parameters& params);

// Disjoint exhaustive partition: (1,1) examples vs everything else.
std::pair<std::vector<const Example*>, std::vector<const Example*>> partition_tasks(
    const std::vector<const Example*>& examples);

struct NegativeSampleStats {
    int negatives = 0;
    int skipped = 0;  // negative drawn but no different-identity donor found
};

// Flips each item to a negative with probability prob, replacing its
// detection with one from another pool example of a different identity.
NegativeSampleStats sample_negatives(std::vector<BatchItem>& items,
                                     const std::vector<const Example*>& pool, double prob,
                                     Rng& rng);

enum class AugmentMode { Flip, Translate };

// Flip mirrors x coordinates; Translate shifts every box by a common delta
// clamped so all boxes stay inside [0,1]. Visual features are unchanged.
Example augment_spatial(const Example& example, AugmentMode mode, Rng& rng);

// Deterministic stream of batches following the configured task ratio
// (1:2 by default -> cycle [1-1, M-N, M-N]); within-task sampling is uniform
// with replacement. Owns augmented example copies.
class BatchStream {
public:
    BatchStream(std::vector<const Example*> task_11, std::vector<const Example*> task_mn,
                const TrainConfig& config);

    TaskKind tag_for_slot(std::int64_t slot) const;
    TaskBatch next();

    const NegativeSampleStats& negative_stats() const { return neg_stats_; }

private:
    std::vector<const Example*> task_11_;
    std::vector<const Example*> task_mn_;
    TrainConfig config_;
    Rng rng_;
    std::int64_t slot_ = 0;
    NegativeSampleStats neg_stats_;
    std::vector<std::shared_ptr<const Example>> owned_;  // augmented copies, kept per batch
};

// One adaptive-moment update with decoupled weight decay. Throws
// NumericError on a non-finite loss.
LossBreakdown train_step(Parameters& params, OptimizerState& opt, const TaskBatch& batch,
                         const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                         int threads);

struct TrainLogEntry {
    std::int64_t step = 0;
    double l_intra = 0.0;
    double l_inter = 0.0;
    double l_null = 0.0;
    double total = 0.0;
    double val_accuracy = 0.0;
    bool best = false;
};

struct TrainResult {
    Parameters final_params;
    Parameters best_params;
    std::int64_t best_step = 0;
    double best_val_accuracy = 0.0;
    std::vector<TrainLogEntry> log;
    NegativeSampleStats negative_stats;
};

// Full optimization loop over the train split with periodic argmax-accuracy
// validation on the val split; retains the best-validation parameters.
// Examples beyond max_tokens/max_boxes are excluded from batches.
TrainResult train_loop(const Corpus& corpus, const SplitAssignment& splits,
                       const ModelConfig& model_cfg, const TrainConfig& train_cfg, int threads,
                       std::ostream* progress = nullptr);

// Per-link argmax accuracy of the model over the given examples.
double argmax_accuracy(const Parameters& params, const ModelConfig& cfg,
                       const std::vector<const Example*>& examples, int threads);

}  // namespace namelink
