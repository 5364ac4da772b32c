#include "namelink/serialize.hpp"

#include <fstream>

#include "namelink/error.hpp"
#include "namelink/version.hpp"

namespace namelink {

using nlohmann::json;

namespace {

template <typename T>
void maybe(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

json read_json_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    try {
        json j;
        is >> j;
        return j;
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void write_json_file(const json& j, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path.string());
    os << j.dump(2) << "\n";
    if (!os) throw IoError("failed writing " + path.string());
}

}  // namespace

void apply_json(ModelConfig& cfg, const json& j) {
    maybe(j, "d_model", cfg.d_model);
    maybe(j, "n_layers", cfg.n_layers);
    maybe(j, "n_heads", cfg.n_heads);
    maybe(j, "d_ff", cfg.d_ff);
    maybe(j, "d_v", cfg.d_v);
    maybe(j, "vocab_size", cfg.vocab_size);
    maybe(j, "max_tokens", cfg.max_tokens);
    maybe(j, "max_boxes", cfg.max_boxes);
    maybe(j, "dropout_rate", cfg.dropout_rate);
    maybe(j, "seed", cfg.seed);
}

void apply_json(TrainConfig& cfg, const json& j) {
    maybe(j, "learning_rate", cfg.learning_rate);
    maybe(j, "weight_decay", cfg.weight_decay);
    maybe(j, "dropout", cfg.dropout);
    maybe(j, "batch_size", cfg.batch_size);
    maybe(j, "max_steps", cfg.max_steps);
    maybe(j, "validate_every", cfg.validate_every);
    maybe(j, "ratio_task11", cfg.ratio_task11);
    maybe(j, "ratio_taskmn", cfg.ratio_taskmn);
    maybe(j, "negative_prob", cfg.negative_prob);
    maybe(j, "seed", cfg.seed);
    maybe(j, "w_intra", cfg.weights.w_intra);
    maybe(j, "w_inter", cfg.weights.w_inter);
    maybe(j, "w_null", cfg.weights.w_null);
    maybe(j, "augment_flip", cfg.augment_flip);
    maybe(j, "augment_translate", cfg.augment_translate);
    maybe(j, "null_in_softmax", cfg.null_in_softmax);
    maybe(j, "adam_beta1", cfg.adam_beta1);
    maybe(j, "adam_beta2", cfg.adam_beta2);
    maybe(j, "adam_eps", cfg.adam_eps);
    maybe(j, "area_ratio", cfg.area_ratio);
    maybe(j, "blur_threshold", cfg.blur_threshold);
    maybe(j, "warmup_steps", cfg.warmup_steps);
    maybe(j, "cosine_decay", cfg.cosine_decay);
}

void apply_json(WorldConfig& cfg, const json& j) {
    maybe(j, "n_identities", cfg.n_identities);
    maybe(j, "d_v", cfg.d_v);
    maybe(j, "d_f", cfg.d_f);
    maybe(j, "n_verbs", cfg.n_verbs);
    maybe(j, "n_positional", cfg.n_positional);
    maybe(j, "noise_face", cfg.noise_face);
    maybe(j, "noise_visual", cfg.noise_visual);
    maybe(j, "p_l2r_convention", cfg.p_l2r_convention);
    maybe(j, "bystander_rate", cfg.bystander_rate);
    maybe(j, "keep_link_prob", cfg.keep_link_prob);
    maybe(j, "role_offset_norm", cfg.role_offset_norm);
    maybe(j, "crop_size", cfg.crop_size);
    maybe(j, "max_n", cfg.max_n);
    maybe(j, "max_m", cfg.max_m);
    maybe(j, "seed", cfg.seed);
    if (j.contains("nm_weights")) {
        cfg.nm_weights.clear();
        for (const json& w : j.at("nm_weights"))
            cfg.nm_weights.push_back(NmWeight{w.at("n").get<int>(), w.at("m").get<int>(),
                                              w.at("weight").get<double>()});
    }
}

json to_json(const ModelConfig& cfg) {
    return json{{"d_model", cfg.d_model},         {"n_layers", cfg.n_layers},
                {"n_heads", cfg.n_heads},         {"d_ff", cfg.d_ff},
                {"d_v", cfg.d_v},                 {"vocab_size", cfg.vocab_size},
                {"max_tokens", cfg.max_tokens},   {"max_boxes", cfg.max_boxes},
                {"dropout_rate", cfg.dropout_rate}, {"seed", cfg.seed}};
}

json to_json(const TrainConfig& cfg) {
    return json{{"learning_rate", cfg.learning_rate},
                {"weight_decay", cfg.weight_decay},
                {"dropout", cfg.dropout},
                {"batch_size", cfg.batch_size},
                {"max_steps", cfg.max_steps},
                {"validate_every", cfg.validate_every},
                {"ratio_task11", cfg.ratio_task11},
                {"ratio_taskmn", cfg.ratio_taskmn},
                {"negative_prob", cfg.negative_prob},
                {"seed", cfg.seed},
                {"w_intra", cfg.weights.w_intra},
                {"w_inter", cfg.weights.w_inter},
                {"w_null", cfg.weights.w_null},
                {"augment_flip", cfg.augment_flip},
                {"augment_translate", cfg.augment_translate},
                {"null_in_softmax", cfg.null_in_softmax},
                {"adam_beta1", cfg.adam_beta1},
                {"adam_beta2", cfg.adam_beta2},
                {"adam_eps", cfg.adam_eps},
                {"area_ratio", cfg.area_ratio},
                {"blur_threshold", cfg.blur_threshold},
                {"warmup_steps", cfg.warmup_steps},
                {"cosine_decay", cfg.cosine_decay}};
}

json to_json(const WorldConfig& cfg) {
    json nm = json::array();
    for (const NmWeight& w : cfg.nm_weights)
        nm.push_back(json{{"n", w.n}, {"m", w.m}, {"weight", w.weight}});
    return json{{"n_identities", cfg.n_identities},
                {"d_v", cfg.d_v},
                {"d_f", cfg.d_f},
                {"n_verbs", cfg.n_verbs},
                {"n_positional", cfg.n_positional},
                {"noise_face", cfg.noise_face},
                {"noise_visual", cfg.noise_visual},
                {"p_l2r_convention", cfg.p_l2r_convention},
                {"bystander_rate", cfg.bystander_rate},
                {"keep_link_prob", cfg.keep_link_prob},
                {"role_offset_norm", cfg.role_offset_norm},
                {"crop_size", cfg.crop_size},
                {"max_n", cfg.max_n},
                {"max_m", cfg.max_m},
                {"nm_weights", nm},
                {"seed", cfg.seed}};
}

void save_splits(const SplitAssignment& splits, const std::filesystem::path& path) {
    write_json_file(json{{"train_ids", splits.train_ids},
                         {"val_ids", splits.val_ids},
                         {"test_ids", splits.test_ids},
                         {"eval_identities",
                          std::vector<std::string>(splits.eval_identities.begin(),
                                                   splits.eval_identities.end())}},
                    path);
}

SplitAssignment load_splits(const std::filesystem::path& path) {
    const json j = read_json_file(path);
    SplitAssignment s;
    try {
        s.train_ids = j.at("train_ids").get<std::vector<std::string>>();
        s.val_ids = j.at("val_ids").get<std::vector<std::string>>();
        s.test_ids = j.at("test_ids").get<std::vector<std::string>>();
        for (const auto& id : j.at("eval_identities").get<std::vector<std::string>>())
            s.eval_identities.insert(id);
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    return s;
}

json report_to_json(const MetricsReport& report, const std::string& method,
                    const std::string& inference, const std::string& subset,
                    const std::string& split) {
    json bins = json::array();
    for (int nb = 0; nb < 4; ++nb)
        for (int mb = 0; mb < 4; ++mb) {
            const BinStat& s = report.bins[nb][mb];
            if (s.links == 0) continue;
            bins.push_back(json{{"n", nb + 1},
                                {"m", mb + 1},
                                {"links", s.links},
                                {"correct", s.correct},
                                {"accuracy", s.accuracy()}});
        }
    json subsets = json::object();
    for (const auto& [name, s] : report.subsets)
        subsets[name] = json{{"links", s.links}, {"correct", s.correct},
                             {"accuracy", s.accuracy()}};
    return json{{"method", method},
                {"inference", inference},
                {"subset", subset},
                {"split", split},
                {"total_links", report.total_links},
                {"correct_links", report.correct_links},
                {"accuracy", report.accuracy},
                {"wilson", json{{"lower", report.interval.lower},
                                {"upper", report.interval.upper},
                                {"z", report.interval.z},
                                {"n", report.interval.n}}},
                {"bins", bins},
                {"subsets", subsets},
                {"example_count", report.example_count}};
}

void save_report(const json& report, const std::filesystem::path& path) {
    write_json_file(report, path);
}

json load_report(const std::filesystem::path& path) { return read_json_file(path); }

std::string config_hash(const json& j) {
    const std::string dump = j.dump();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : dump) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void save_run_manifest(const RunManifest& manifest, const std::filesystem::path& path) {
    write_json_file(json{{"command", manifest.command},
                         {"config_hash", manifest.config_digest},
                         {"seed", manifest.seed},
                         {"inputs", manifest.inputs},
                         {"outputs", manifest.outputs},
                         {"version", kArtifactVersion},
                         {"wall_time_s", manifest.wall_time_s}},
                    path);
}

}  // namespace namelink
