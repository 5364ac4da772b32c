#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "namelink/datamodel.hpp"
#include "namelink/mat.hpp"
#include "namelink/rng.hpp"

namespace namelink {

struct NmWeight {
    int n = 1;
    int m = 1;
    double weight = 1.0;
};

struct WorldConfig {
    int n_identities = 1000;
    int d_v = 32;
    int d_f = 64;
    int n_verbs = 8;       // verb (action) templates, shuffled layout
    int n_positional = 4;  // positional templates, ordered layout, no verb
    double noise_face = 0.05;
    double noise_visual = 0.1;
    double p_l2r_convention = 0.5;  // fraction drawn from ordered-layout templates
    double bystander_rate = 0.3;    // extra-box probability in the default (n,m) table
    double keep_link_prob = 0.8;    // fraction of oracle links published as gt_links
    double role_offset_norm = 2.0;
    int crop_size = 8;
    int max_n = 4;
    int max_m = 5;
    std::vector<NmWeight> nm_weights;  // empty: built from bystander_rate
    std::uint64_t seed = 1;

    void validate() const;
};

struct Identity {
    std::string id;
    Mat face_prototype;        // 1 x d_f, unit norm
    Mat appearance_prototype;  // 1 x d_v, unit norm
};

// Caption/feature template. Verb templates carry role offsets injected into
// visual features (mention k of an n-person scene uses role k; single-person
// scenes use the dedicated solo role); positional templates carry none and
// lay referred boxes out left-to-right in mention order.
struct SceneTemplate {
    bool has_verb = false;
    int verb_token = -1;
    int place_token = -1;
    std::vector<Mat> role_offsets;  // 5 x (1 x d_v): roles 0..3, then solo
    bool ordered_layout = false;
    std::string category;

    const Mat& agent_offset() const { return role_offsets[0]; }
    const Mat& patient_offset() const { return role_offsets[1]; }
};

struct World {
    WorldConfig config;
    std::vector<Identity> identities;
    std::vector<SceneTemplate> templates;  // verbs first, then positional
    int vocab_size = 0;
};

// Per-example ground truth kept outside the corpus: reference face
// embeddings for mining, the full (total) person -> detection mapping, and
// which detections are bystanders.
struct OracleRecord {
    std::string example_id;
    std::vector<Mat> references;  // one unit 1 x d_f row per referred person
    std::vector<std::pair<int, int>> true_links;
    std::vector<int> bystanders;
};

World generate_world(const WorldConfig& config);

// Deterministic in (world, example_index).
std::pair<Example, OracleRecord> generate_example(const World& world, std::int64_t example_index);

struct GeneratedCorpus {
    Corpus corpus;
    std::vector<OracleRecord> oracle;
};

GeneratedCorpus generate_corpus(const World& world, std::int64_t count);

// Oracle sidecar: newline-delimited records in the corpus directory.
void save_oracle(const std::vector<OracleRecord>& records, const std::filesystem::path& path);
std::vector<OracleRecord> load_oracle(const std::filesystem::path& path);

}  // namespace namelink
