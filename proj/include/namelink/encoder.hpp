#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "namelink/datamodel.hpp"
#include "namelink/mat.hpp"
#include "namelink/tape.hpp"

namespace namelink {

constexpr double kLayerNormEps = 1e-12;

struct ModelConfig {
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 4;
    int d_ff = 0;  // 0 means 4 * d_model
    int d_v = 0;
    int vocab_size = 0;
    int max_tokens = 60;
    int max_boxes = 100;
    double dropout_rate = 0.1;
    std::uint64_t seed = 0;

    int ff_width() const { return d_ff > 0 ? d_ff : 4 * d_model; }
    int head_dim() const { return d_model / n_heads; }
    void validate() const;
};

// Flat named-tensor store. Creation order is fixed by init_parameters and
// shared by gradients, optimizer state, and checkpoints.
class Parameters {
public:
    Mat& add(const std::string& name, int rows, int cols);
    bool has(const std::string& name) const { return index_.count(name) != 0; }
    int index_of(const std::string& name) const;
    Mat& at(const std::string& name) { return items_[index_checked(name)].second; }
    const Mat& at(const std::string& name) const { return items_[index_checked(name)].second; }

    std::size_t count() const { return items_.size(); }
    const std::string& name(std::size_t i) const { return items_[i].first; }
    Mat& tensor(std::size_t i) { return items_[i].second; }
    const Mat& tensor(std::size_t i) const { return items_[i].second; }

    std::size_t scalar_count() const;
    bool all_finite() const;

private:
    int index_checked(const std::string& name) const;
    std::vector<std::pair<std::string, Mat>> items_;
    std::map<std::string, int> index_;
};

// Seeded deterministic initialization: scaled uniform with scale 1/sqrt(fan_in)
// for weights and embeddings, ones/zeros for layer-norm scale/offset, alpha=5
// and beta=0 for the pair-score affine.
Parameters init_parameters(const ModelConfig& config);

// [x1, y1, x2, y2, w, h, w*h] in normalized coordinates.
struct SpatialFeature {
    double v[7] = {0, 0, 0, 0, 0, 0, 0};

    static SpatialFeature from_box(const BoundingBox& box);
};

struct HiddenStates {
    Mat text;   // n_tokens x d_model
    Mat boxes;  // m x d_model
};

// Parameter leaves bound to one tape; index-aligned with Parameters.
struct BoundParams {
    const Parameters* params = nullptr;
    std::vector<ad::Var> vars;

    ad::Var operator[](const std::string& name) const;
};

BoundParams bind_params(ad::Tape& tape, const Parameters& params);

ad::Var embed_text(ad::Tape& tape, const BoundParams& bp, const ModelConfig& cfg,
                   const Caption& caption);
ad::Var embed_boxes(ad::Tape& tape, const BoundParams& bp, const ModelConfig& cfg,
                    const std::vector<Detection>& detections);

struct EncodeOptions {
    bool train_mode = false;
    double dropout_rate = 0.0;          // used only in train mode
    ad::DropoutState* dropout = nullptr;  // required when train_mode and rate > 0
};

struct Encoded {
    ad::Var text;
    ad::Var boxes;
};

// Concatenated [text; boxes] through n_layers of pre-norm multi-head
// self-attention + GELU feed-forward blocks with residual connections.
Encoded encode(ad::Tape& tape, const BoundParams& bp, const ModelConfig& cfg,
               const Caption& caption, const std::vector<Detection>& detections,
               const EncodeOptions& opts);

// Convenience value-level forward (no dropout, gradients discarded).
HiddenStates forward_eval(const Parameters& params, const ModelConfig& cfg,
                          const Caption& caption, const std::vector<Detection>& detections);

// Gradient accumulation helpers, index-aligned with Parameters.
std::vector<Mat> make_grad_store(const Parameters& params);
void accumulate_grads(const ad::Tape& tape, const BoundParams& bp, std::vector<Mat>& store);

// Checkpoint: magic "WWCK", config block, named f32 tensors.
void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg,
                     const Parameters& params);
std::pair<ModelConfig, Parameters> load_checkpoint(const std::filesystem::path& path);

}  // namespace namelink
