#include "namelink/encoder.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "namelink/corpus_io.hpp"
#include "namelink/error.hpp"
#include "namelink/rng.hpp"

namespace namelink {

using nlohmann::json;

void ModelConfig::validate() const {
    if (d_model <= 0 || n_layers < 0 || n_heads <= 0) throw ConfigError("bad model dimensions");
    if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
    if (max_tokens < 1 || max_boxes < 1) throw ConfigError("max_tokens and max_boxes must be >= 1");
    if (d_v <= 0) throw ConfigError("d_v must be set from the corpus header");
    if (vocab_size < 2) throw ConfigError("vocab_size must cover [PAD] and [NAME]");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate in [0,1)");
}

Mat& Parameters::add(const std::string& name, int rows, int cols) {
    if (index_.count(name)) throw UsageError("duplicate parameter " + name);
    index_[name] = static_cast<int>(items_.size());
    items_.emplace_back(name, Mat(rows, cols));
    return items_.back().second;
}

int Parameters::index_of(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? -1 : it->second;
}

int Parameters::index_checked(const std::string& name) const {
    const int i = index_of(name);
    if (i < 0) throw UsageError("unknown parameter " + name);
    return i;
}

std::size_t Parameters::scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, m] : items_) n += m.size();
    return n;
}

bool Parameters::all_finite() const {
    for (const auto& [_, m] : items_)
        if (!m.all_finite()) return false;
    return true;
}

namespace {

void fill_uniform(Mat& m, Rng& rng, double scale) {
    for (double& v : m.a) v = rng.uniform(-scale, scale);
}

}  // namespace

Parameters init_parameters(const ModelConfig& cfg) {
    cfg.validate();
    Parameters p;
    Rng rng(hash_combine(cfg.seed, 0x9a7a));
    const int d = cfg.d_model;
    const double emb_scale = 1.0 / std::sqrt(static_cast<double>(d));

    fill_uniform(p.add("tok_emb", cfg.vocab_size, d), rng, emb_scale);
    fill_uniform(p.add("pos_emb", cfg.max_tokens, d), rng, emb_scale);
    fill_uniform(p.add("mod_emb", 2, d), rng, emb_scale);
    fill_uniform(p.add("vis_proj_w", cfg.d_v, d), rng, 1.0 / std::sqrt(static_cast<double>(cfg.d_v)));
    p.add("vis_proj_b", 1, d);
    fill_uniform(p.add("spat_proj_w", 7, d), rng, 1.0 / std::sqrt(7.0));
    p.add("spat_proj_b", 1, d);
    p.add("text_ln_g", 1, d).fill(1.0);
    p.add("text_ln_b", 1, d);
    p.add("box_ln_g", 1, d).fill(1.0);
    p.add("box_ln_b", 1, d);

    const double w_scale = 1.0 / std::sqrt(static_cast<double>(d));
    const double ff_scale = 1.0 / std::sqrt(static_cast<double>(cfg.ff_width()));
    for (int l = 0; l < cfg.n_layers; ++l) {
        const std::string pre = "layer" + std::to_string(l) + ".";
        p.add(pre + "ln1_g", 1, d).fill(1.0);
        p.add(pre + "ln1_b", 1, d);
        fill_uniform(p.add(pre + "attn_wq", d, d), rng, w_scale);
        p.add(pre + "attn_bq", 1, d);
        fill_uniform(p.add(pre + "attn_wk", d, d), rng, w_scale);
        p.add(pre + "attn_bk", 1, d);
        fill_uniform(p.add(pre + "attn_wv", d, d), rng, w_scale);
        p.add(pre + "attn_bv", 1, d);
        fill_uniform(p.add(pre + "attn_wo", d, d), rng, w_scale);
        p.add(pre + "attn_bo", 1, d);
        p.add(pre + "ln2_g", 1, d).fill(1.0);
        p.add(pre + "ln2_b", 1, d);
        fill_uniform(p.add(pre + "ffn_w1", d, cfg.ff_width()), rng, w_scale);
        p.add(pre + "ffn_b1", 1, cfg.ff_width());
        fill_uniform(p.add(pre + "ffn_w2", cfg.ff_width(), d), rng, ff_scale);
        p.add(pre + "ffn_b2", 1, d);
    }

    fill_uniform(p.add("null_name", 1, d), rng, emb_scale);
    p.add("inter_alpha", 1, 1)(0, 0) = 5.0;
    p.add("inter_beta", 1, 1);
    return p;
}

SpatialFeature SpatialFeature::from_box(const BoundingBox& box) {
    const double w = box.width();
    const double h = box.height();
    if (!(w > 0.0) || !(h > 0.0)) throw ValidationError("spatial feature requires w, h > 0");
    SpatialFeature f;
    f.v[0] = box.x1;
    f.v[1] = box.y1;
    f.v[2] = box.x2;
    f.v[3] = box.y2;
    f.v[4] = w;
    f.v[5] = h;
    f.v[6] = w * h;
    return f;
}

ad::Var BoundParams::operator[](const std::string& name) const {
    const int i = params->index_of(name);
    if (i < 0) throw UsageError("unknown parameter " + name);
    return vars[static_cast<std::size_t>(i)];
}

BoundParams bind_params(ad::Tape& tape, const Parameters& params) {
    BoundParams bp;
    bp.params = &params;
    bp.vars.reserve(params.count());
    for (std::size_t i = 0; i < params.count(); ++i) bp.vars.push_back(tape.leaf(&params.tensor(i)));
    return bp;
}

ad::Var embed_text(ad::Tape& t, const BoundParams& bp, const ModelConfig& cfg,
                   const Caption& caption) {
    const int n = caption.length();
    if (n > cfg.max_tokens)
        throw SizeError("caption length " + std::to_string(n) + " exceeds max_tokens " +
                        std::to_string(cfg.max_tokens));
    std::vector<int> tok_rows(n), pos_rows(n);
    for (int i = 0; i < n; ++i) {
        const int id = caption.tokens[i];
        if (id < 0 || id >= cfg.vocab_size) throw ValidationError("token id out of vocabulary");
        tok_rows[i] = id;
        pos_rows[i] = i;
    }
    ad::Var x = ad::add(t, ad::gather_rows(t, bp["tok_emb"], tok_rows),
                        ad::gather_rows(t, bp["pos_emb"], pos_rows));
    x = ad::add_rowvec(t, x, ad::select_row(t, bp["mod_emb"], 0));
    return ad::layer_norm(t, x, bp["text_ln_g"], bp["text_ln_b"], kLayerNormEps);
}

ad::Var embed_boxes(ad::Tape& t, const BoundParams& bp, const ModelConfig& cfg,
                    const std::vector<Detection>& detections) {
    const int m = static_cast<int>(detections.size());
    if (m > cfg.max_boxes)
        throw SizeError("detection count " + std::to_string(m) + " exceeds max_boxes " +
                        std::to_string(cfg.max_boxes));
    Mat visual(m, cfg.d_v);
    Mat spatial(m, 7);
    for (int j = 0; j < m; ++j) {
        const Detection& d = detections[j];
        if (static_cast<int>(d.visual_feature.size()) != cfg.d_v)
            throw DimensionError("visual feature length != d_v");
        for (int c = 0; c < cfg.d_v; ++c) visual(j, c) = static_cast<double>(d.visual_feature[c]);
        const SpatialFeature sf = SpatialFeature::from_box(d.box);
        for (int c = 0; c < 7; ++c) spatial(j, c) = sf.v[c];
    }
    ad::Var vis = ad::add_rowvec(t, ad::matmul(t, t.constant(std::move(visual)), bp["vis_proj_w"]),
                                 bp["vis_proj_b"]);
    ad::Var spa = ad::add_rowvec(t, ad::matmul(t, t.constant(std::move(spatial)), bp["spat_proj_w"]),
                                 bp["spat_proj_b"]);
    ad::Var x = ad::add(t, vis, spa);
    x = ad::add_rowvec(t, x, ad::select_row(t, bp["mod_emb"], 1));
    return ad::layer_norm(t, x, bp["box_ln_g"], bp["box_ln_b"], kLayerNormEps);
}

namespace {

ad::Var maybe_dropout(ad::Tape& t, ad::Var x, const EncodeOptions& opts) {
    if (!opts.train_mode || opts.dropout_rate <= 0.0) return x;
    if (!opts.dropout) throw UsageError("train-mode encode requires a dropout state");
    return ad::dropout(t, x, opts.dropout_rate, *opts.dropout);
}

}  // namespace

Encoded encode(ad::Tape& t, const BoundParams& bp, const ModelConfig& cfg,
               const Caption& caption, const std::vector<Detection>& detections,
               const EncodeOptions& opts) {
    const int n_tok = caption.length();
    const int m = static_cast<int>(detections.size());

    ad::Var text = maybe_dropout(t, embed_text(t, bp, cfg, caption), opts);
    ad::Var boxes = maybe_dropout(t, embed_boxes(t, bp, cfg, detections), opts);
    ad::Var x = ad::concat_rows(t, text, boxes);
    if (!t.val(x).all_finite()) throw NumericError("non-finite encoder input");

    const int dh = cfg.head_dim();
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int l = 0; l < cfg.n_layers; ++l) {
        const std::string pre = "layer" + std::to_string(l) + ".";
        ad::Var h = ad::layer_norm(t, x, bp[pre + "ln1_g"], bp[pre + "ln1_b"], kLayerNormEps);
        ad::Var q = ad::add_rowvec(t, ad::matmul(t, h, bp[pre + "attn_wq"]), bp[pre + "attn_bq"]);
        ad::Var k = ad::add_rowvec(t, ad::matmul(t, h, bp[pre + "attn_wk"]), bp[pre + "attn_bk"]);
        ad::Var v = ad::add_rowvec(t, ad::matmul(t, h, bp[pre + "attn_wv"]), bp[pre + "attn_bv"]);
        std::vector<ad::Var> heads;
        heads.reserve(cfg.n_heads);
        for (int hd = 0; hd < cfg.n_heads; ++hd) {
            ad::Var qh = ad::slice_cols(t, q, hd * dh, (hd + 1) * dh);
            ad::Var kh = ad::slice_cols(t, k, hd * dh, (hd + 1) * dh);
            ad::Var vh = ad::slice_cols(t, v, hd * dh, (hd + 1) * dh);
            ad::Var scores = ad::scale(t, ad::matmul_nt(t, qh, kh), inv_sqrt_dh);
            ad::Var probs = ad::row_softmax(t, scores);
            heads.push_back(ad::matmul(t, probs, vh));
        }
        ad::Var ctx = cfg.n_heads == 1 ? heads[0] : ad::concat_cols(t, heads);
        ad::Var attn =
            ad::add_rowvec(t, ad::matmul(t, ctx, bp[pre + "attn_wo"]), bp[pre + "attn_bo"]);
        x = ad::add(t, x, maybe_dropout(t, attn, opts));

        ad::Var h2 = ad::layer_norm(t, x, bp[pre + "ln2_g"], bp[pre + "ln2_b"], kLayerNormEps);
        ad::Var f = ad::add_rowvec(t, ad::matmul(t, h2, bp[pre + "ffn_w1"]), bp[pre + "ffn_b1"]);
        f = ad::gelu(t, f);
        f = ad::add_rowvec(t, ad::matmul(t, f, bp[pre + "ffn_w2"]), bp[pre + "ffn_b2"]);
        x = ad::add(t, x, maybe_dropout(t, f, opts));
    }

    Encoded out;
    out.text = ad::slice_rows(t, x, 0, n_tok);
    out.boxes = ad::slice_rows(t, x, n_tok, n_tok + m);
    return out;
}

HiddenStates forward_eval(const Parameters& params, const ModelConfig& cfg,
                          const Caption& caption, const std::vector<Detection>& detections) {
    ad::Tape t;
    BoundParams bp = bind_params(t, params);
    Encoded enc = encode(t, bp, cfg, caption, detections, EncodeOptions{});
    return HiddenStates{t.val(enc.text), t.val(enc.boxes)};
}

std::vector<Mat> make_grad_store(const Parameters& params) {
    std::vector<Mat> store;
    store.reserve(params.count());
    for (std::size_t i = 0; i < params.count(); ++i)
        store.emplace_back(params.tensor(i).rows, params.tensor(i).cols);
    return store;
}

void accumulate_grads(const ad::Tape& tape, const BoundParams& bp, std::vector<Mat>& store) {
    for (std::size_t i = 0; i < bp.vars.size(); ++i) {
        const Mat& g = tape.grad_view(bp.vars[i]);
        if (g.empty()) continue;
        axpy(store[i], g);
    }
}

namespace {

json config_to_json(const ModelConfig& cfg) {
    return json{{"d_model", cfg.d_model},     {"n_layers", cfg.n_layers},
                {"n_heads", cfg.n_heads},     {"d_ff", cfg.d_ff},
                {"d_v", cfg.d_v},             {"vocab_size", cfg.vocab_size},
                {"max_tokens", cfg.max_tokens}, {"max_boxes", cfg.max_boxes},
                {"dropout_rate", cfg.dropout_rate}, {"seed", cfg.seed}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig cfg;
    cfg.d_model = j.at("d_model").get<int>();
    cfg.n_layers = j.at("n_layers").get<int>();
    cfg.n_heads = j.at("n_heads").get<int>();
    cfg.d_ff = j.at("d_ff").get<int>();
    cfg.d_v = j.at("d_v").get<int>();
    cfg.vocab_size = j.at("vocab_size").get<int>();
    cfg.max_tokens = j.at("max_tokens").get<int>();
    cfg.max_boxes = j.at("max_boxes").get<int>();
    cfg.dropout_rate = j.at("dropout_rate").get<double>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    return cfg;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg,
                     const Parameters& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write checkpoint " + path.string());
    os.write("WWCK", 4);
    wire::put_u32(os, 1);  // version
    const std::string cfg_json = config_to_json(cfg).dump();
    wire::put_u32(os, static_cast<std::uint32_t>(cfg_json.size()));
    os.write(cfg_json.data(), static_cast<std::streamsize>(cfg_json.size()));
    wire::put_u32(os, static_cast<std::uint32_t>(params.count()));
    for (std::size_t i = 0; i < params.count(); ++i) {
        const std::string& name = params.name(i);
        const Mat& m = params.tensor(i);
        wire::put_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        wire::put_u32(os, static_cast<std::uint32_t>(m.rows));
        wire::put_u32(os, static_cast<std::uint32_t>(m.cols));
        for (double v : m.a) wire::put_f32(os, static_cast<float>(v));
    }
    if (!os) throw IoError("failed writing checkpoint " + path.string());
}

std::pair<ModelConfig, Parameters> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint " + path.string());
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "WWCK", 4) != 0)
        throw FormatError("checkpoint has bad magic");
    const std::uint32_t version = wire::get_u32(is, "version");
    if (version != 1) throw FormatError("unsupported checkpoint version");
    const std::uint32_t cfg_len = wire::get_u32(is, "config length");
    std::string cfg_json(cfg_len, '\0');
    if (!is.read(cfg_json.data(), cfg_len)) throw FormatError("truncated checkpoint config");
    ModelConfig cfg;
    try {
        cfg = config_from_json(json::parse(cfg_json));
    } catch (const json::exception& e) {
        throw FormatError(std::string("checkpoint config: ") + e.what());
    }

    Parameters params;
    const std::uint32_t n_tensors = wire::get_u32(is, "tensor count");
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
        const std::uint32_t name_len = wire::get_u32(is, "name length");
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len)) throw FormatError("truncated tensor name");
        const std::uint32_t rows = wire::get_u32(is, "rows");
        const std::uint32_t cols = wire::get_u32(is, "cols");
        Mat& m = params.add(name, static_cast<int>(rows), static_cast<int>(cols));
        for (double& v : m.a) v = static_cast<double>(wire::get_f32(is, "tensor data"));
    }
    return {cfg, std::move(params)};
}

}  // namespace namelink
