#include "namelink/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include <json.hpp>

#include "namelink/error.hpp"

namespace namelink {

using nlohmann::json;

// Vocabulary layout: 0 [PAD], 1 [NAME], 2 ",", 3 "and", 4 "with", 5 "at",
// 6 "the", then n_positional place words, then n_verbs verb words.
namespace {

constexpr int kComma = 2;
constexpr int kAnd = 3;
constexpr int kWith = 4;
constexpr int kAt = 5;
constexpr int kThe = 6;
constexpr int kFirstPlace = 7;

constexpr int kSoloRole = 4;

const char* kCategories[] = {"sports", "politics", "performance"};

Mat random_unit(Rng& rng, int d) {
    Mat v(1, d);
    double norm = 0.0;
    do {
        for (double& x : v.a) x = rng.normal();
        norm = l2_norm(v);
    } while (norm < 1e-9);
    for (double& x : v.a) x /= norm;
    return v;
}

Mat noisy_unit(Rng& rng, const Mat& prototype, double sigma) {
    Mat v = prototype;
    for (double& x : v.a) x += sigma * rng.normal();
    const double norm = l2_norm(v);
    if (norm < 1e-9) throw NumericError("degenerate noisy embedding");
    for (double& x : v.a) x /= norm;
    return v;
}

std::string format_id(const char* prefix, std::int64_t i, int width) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s%0*lld", prefix, width, static_cast<long long>(i));
    return buf;
}

std::vector<NmWeight> default_nm_table(const WorldConfig& cfg) {
    // n marginal tapers off; extras follow Binomial(max_m - n, bystander_rate).
    const double n_weight[4] = {0.35, 0.30, 0.20, 0.15};
    std::vector<NmWeight> table;
    for (int n = 1; n <= cfg.max_n; ++n) {
        const int slots = cfg.max_m - n;
        for (int k = 0; k <= slots; ++k) {
            double binom = 1.0;
            for (int i = 0; i < k; ++i) binom *= static_cast<double>(slots - i) / (i + 1);
            const double p = binom * std::pow(cfg.bystander_rate, k) *
                             std::pow(1.0 - cfg.bystander_rate, slots - k);
            table.push_back(NmWeight{n, n + k, n_weight[std::min(n, 4) - 1] * p});
        }
    }
    return table;
}

}  // namespace

void WorldConfig::validate() const {
    if (n_identities < 2) throw ConfigError("need at least two identities");
    if (d_v < 2 || d_f < 2) throw ConfigError("feature dimensions must be >= 2");
    if (n_verbs < 1 || n_positional < 1) throw ConfigError("need verb and positional templates");
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!prob(p_l2r_convention) || !prob(bystander_rate) || !prob(keep_link_prob))
        throw ConfigError("probabilities must lie in [0,1]");
    if (noise_face < 0.0 || noise_visual < 0.0) throw ConfigError("noise must be >= 0");
    if (crop_size < 3) throw ConfigError("crop_size must be >= 3");
    if (max_n < 1 || max_m < max_n) throw ConfigError("need 1 <= max_n <= max_m");
    for (const NmWeight& w : nm_weights)
        if (w.n < 1 || w.n > max_n || w.m < w.n || w.m > max_m || w.weight < 0.0)
            throw ConfigError("invalid (n,m) weight entry");
}

World generate_world(const WorldConfig& config) {
    config.validate();
    World world;
    world.config = config;
    world.vocab_size = kFirstPlace + config.n_positional + config.n_verbs;

    Rng rng(hash_combine(config.seed, 0x901DULL));
    for (int i = 0; i < config.n_identities; ++i) {
        Identity id;
        id.id = format_id("id", i, 5);
        id.face_prototype = random_unit(rng, config.d_f);
        id.appearance_prototype = random_unit(rng, config.d_v);
        world.identities.push_back(std::move(id));
    }

    const int first_verb = kFirstPlace + config.n_positional;
    for (int k = 0; k < config.n_verbs; ++k) {
        SceneTemplate t;
        t.has_verb = true;
        t.verb_token = first_verb + k;
        t.ordered_layout = false;
        t.category = kCategories[k % 3];
        for (int r = 0; r < 5; ++r) {
            Mat off = random_unit(rng, config.d_v);
            // The solo role (single-person scenes) gets a weaker offset so
            // cross-image pair supervision alone cannot rank boxes well.
            const double norm =
                r == kSoloRole ? 0.75 * config.role_offset_norm : config.role_offset_norm;
            for (double& x : off.a) x *= norm;
            t.role_offsets.push_back(std::move(off));
        }
        if (dot(t.agent_offset(), t.patient_offset()) >
            0.999 * config.role_offset_norm * config.role_offset_norm)
            throw NumericError("degenerate template: agent and patient offsets coincide");
        world.templates.push_back(std::move(t));
    }
    for (int p = 0; p < config.n_positional; ++p) {
        SceneTemplate t;
        t.has_verb = false;
        t.place_token = kFirstPlace + p;
        t.ordered_layout = true;
        t.category = "posed";
        for (int r = 0; r < 5; ++r) t.role_offsets.push_back(Mat(1, config.d_v));
        world.templates.push_back(std::move(t));
    }
    return world;
}

namespace {

// Caption token stream plus one single-token mention span per [NAME] slot.
void build_caption(const SceneTemplate& t, int n, Caption& caption,
                   std::vector<Mention>& mentions) {
    std::vector<int> toks;
    auto name = [&]() {
        mentions.push_back(Mention{static_cast<int>(toks.size()),
                                   static_cast<int>(toks.size()) + 1});
        toks.push_back(kNameToken);
    };
    if (t.has_verb) {
        name();
        toks.push_back(t.verb_token);
        if (n >= 2) name();
        if (n >= 3) {
            toks.push_back(kWith);
            name();
        }
        if (n >= 4) {
            toks.push_back(kAnd);
            name();
        }
    } else {
        for (int k = 0; k < n; ++k) {
            if (k > 0) toks.push_back(k == n - 1 ? kAnd : kComma);
            name();
        }
        toks.push_back(kAt);
        toks.push_back(kThe);
        toks.push_back(t.place_token);
    }
    caption.tokens.assign(toks.begin(), toks.end());
    caption.has_verb = t.has_verb;
}

BoundingBox face_of(const BoundingBox& box) {
    BoundingBox f;
    f.x1 = box.x1 + 0.3 * box.width();
    f.x2 = box.x1 + 0.7 * box.width();
    f.y1 = box.y1 + 0.05 * box.height();
    f.y2 = box.y1 + 0.45 * box.height();
    return f;
}

BoundingBox place_box(Rng& rng, double cx, double w_lo, double w_hi, double h_lo,
                      double h_hi) {
    BoundingBox b;
    const double w = rng.uniform(w_lo, w_hi);
    const double h = rng.uniform(h_lo, h_hi);
    const double cy = rng.uniform(0.35, 0.65);
    b.x1 = cx - w / 2.0;
    b.x2 = cx + w / 2.0;
    b.y1 = cy - h / 2.0;
    b.y2 = cy + h / 2.0;
    if (b.x1 < 0.005) {
        b.x2 += 0.005 - b.x1;
        b.x1 = 0.005;
    }
    if (b.x2 > 0.995) {
        b.x1 -= b.x2 - 0.995;
        b.x2 = 0.995;
    }
    return b;
}

std::vector<float> to_f32(const Mat& v) {
    std::vector<float> out(v.size());
    for (std::size_t i = 0; i < v.a.size(); ++i) out[i] = static_cast<float>(v.a[i]);
    return out;
}

}  // namespace

std::pair<Example, OracleRecord> generate_example(const World& world, std::int64_t index) {
    const WorldConfig& cfg = world.config;
    Rng rng(hash3(cfg.seed, 0xE6A9ULL, static_cast<std::uint64_t>(index)));

    // (n, m) draw.
    const std::vector<NmWeight> table =
        cfg.nm_weights.empty() ? default_nm_table(cfg) : cfg.nm_weights;
    double total_w = 0.0;
    for (const NmWeight& w : table) total_w += w.weight;
    double u = rng.uniform01() * total_w;
    int n = 1, m = 1;
    for (const NmWeight& w : table) {
        u -= w.weight;
        if (u <= 0.0) {
            n = w.n;
            m = w.m;
            break;
        }
    }

    // Template: positional (ordered) with probability p_l2r_convention.
    const bool positional = rng.uniform01() < cfg.p_l2r_convention;
    const SceneTemplate& tmpl =
        positional ? world.templates[cfg.n_verbs + rng.below_int(cfg.n_positional)]
                   : world.templates[rng.below_int(cfg.n_verbs)];

    // Distinct identities for the referred persons.
    std::vector<int> ids;
    std::set<int> used;
    while (static_cast<int>(ids.size()) < n) {
        const int cand = rng.below_int(cfg.n_identities);
        if (used.insert(cand).second) ids.push_back(cand);
    }

    // Left-to-right slots; person k occupies slot perm[k].
    std::vector<double> slot_cx(n);
    for (int k = 0; k < n; ++k)
        slot_cx[k] = (k + 0.5) / n + rng.uniform(-0.15, 0.15) / n;
    std::vector<int> perm(n);
    for (int k = 0; k < n; ++k) perm[k] = k;
    if (!tmpl.ordered_layout) rng.shuffle(perm);

    struct Pending {
        Detection det;
        int person = -1;  // -1 for bystanders
    };
    std::vector<Pending> pending;

    for (int k = 0; k < n; ++k) {
        Pending p;
        p.person = k;
        p.det.box = place_box(rng, slot_cx[perm[k]], 0.16, 0.26, 0.25, 0.40);
        p.det.face_box = face_of(p.det.box);
        const Identity& ident = world.identities[ids[k]];
        Mat visual = ident.appearance_prototype;
        const int role = n == 1 ? kSoloRole : k;
        axpy(visual, tmpl.role_offsets[role]);
        for (double& x : visual.a) x += cfg.noise_visual * rng.normal();
        p.det.visual_feature = to_f32(visual);
        p.det.face_embedding = to_f32(noisy_unit(rng, ident.face_prototype, cfg.noise_face));
        Mat crop(cfg.crop_size, cfg.crop_size);
        for (double& c : crop.a) c = static_cast<double>(rng.below(256));
        p.det.face_crop = std::move(crop);
        pending.push_back(std::move(p));
    }
    for (int b = 0; b < m - n; ++b) {
        Pending p;
        p.det.box = place_box(rng, rng.uniform(0.08, 0.92), 0.05, 0.09, 0.08, 0.14);
        p.det.face_box = face_of(p.det.box);
        Mat visual = random_unit(rng, cfg.d_v);
        for (double& x : visual.a) x += cfg.noise_visual * rng.normal();
        p.det.visual_feature = to_f32(visual);
        p.det.face_embedding = to_f32(noisy_unit(rng, random_unit(rng, cfg.d_f), cfg.noise_face));
        Mat crop(cfg.crop_size, cfg.crop_size);
        crop.fill(128.0);
        p.det.face_crop = std::move(crop);
        pending.push_back(std::move(p));
    }

    // Detection order must not leak mention order.
    std::vector<int> det_order(pending.size());
    for (std::size_t i = 0; i < pending.size(); ++i) det_order[i] = static_cast<int>(i);
    rng.shuffle(det_order);

    Example ex;
    OracleRecord oracle;
    ex.id = format_id("ex", index, 6);
    oracle.example_id = ex.id;

    std::vector<int> person_to_det(n, -1);
    for (std::size_t pos = 0; pos < det_order.size(); ++pos) {
        Pending& p = pending[det_order[pos]];
        if (p.person >= 0)
            person_to_det[p.person] = static_cast<int>(pos);
        else
            oracle.bystanders.push_back(static_cast<int>(pos));
        ex.detections.push_back(std::move(p.det));
    }

    std::vector<Mention> mentions;
    build_caption(tmpl, n, ex.caption, mentions);
    for (int k = 0; k < n; ++k) {
        ReferredPerson rp;
        rp.identity_id = world.identities[ids[k]].id;
        rp.mentions.push_back(mentions[k]);
        ex.referred.push_back(std::move(rp));
        oracle.true_links.emplace_back(k, person_to_det[k]);
        oracle.references.push_back(
            noisy_unit(rng, world.identities[ids[k]].face_prototype, cfg.noise_face));
    }

    for (const auto& link : oracle.true_links)
        if (rng.uniform01() < cfg.keep_link_prob) ex.gt_links.push_back(link);

    ex.year = 1995 + rng.below_int(26);
    ex.cropped = false;
    ex.category = tmpl.category;
    return {std::move(ex), std::move(oracle)};
}

GeneratedCorpus generate_corpus(const World& world, std::int64_t count) {
    if (count < 1) throw ConfigError("corpus count must be >= 1");
    GeneratedCorpus out;
    out.corpus.header.d_v = world.config.d_v;
    out.corpus.header.d_f = world.config.d_f;
    out.corpus.header.vocab_size = world.vocab_size;
    out.corpus.examples.reserve(count);
    out.oracle.reserve(count);
    for (std::int64_t i = 0; i < count; ++i) {
        auto [ex, oracle] = generate_example(world, i);
        out.corpus.examples.push_back(std::move(ex));
        out.oracle.push_back(std::move(oracle));
    }
    return out;
}

void save_oracle(const std::vector<OracleRecord>& records, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path.string());
    for (const OracleRecord& r : records) {
        json refs = json::array();
        for (const Mat& ref : r.references) refs.push_back(ref.a);
        json links = json::array();
        for (const auto& [p, d] : r.true_links) links.push_back(json::array({p, d}));
        os << json{{"id", r.example_id},
                   {"refs", refs},
                   {"links", links},
                   {"bystanders", r.bystanders}}
                  .dump()
           << "\n";
    }
    if (!os) throw IoError("failed writing " + path.string());
}

std::vector<OracleRecord> load_oracle(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    std::vector<OracleRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const json j = json::parse(line);
            OracleRecord r;
            r.example_id = j.at("id").get<std::string>();
            for (const json& ref : j.at("refs")) {
                std::vector<double> v = ref.get<std::vector<double>>();
                r.references.push_back(row_vector(std::move(v)));
            }
            for (const json& l : j.at("links"))
                r.true_links.emplace_back(l.at(0).get<int>(), l.at(1).get<int>());
            r.bystanders = j.at("bystanders").get<std::vector<int>>();
            records.push_back(std::move(r));
        } catch (const json::exception& e) {
            throw FormatError("oracle line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return records;
}

}  // namespace namelink
