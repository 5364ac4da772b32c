#include "namelink/corpus_io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "namelink/error.hpp"

namespace namelink {

using nlohmann::json;

namespace wire {

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is, const char* what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw FormatError(std::string("truncated u32 (") + what + ")");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& os, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(os, bits);
}

float get_f32(std::istream& is, const char* what) {
    std::uint32_t bits = get_u32(is, what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

void put_f32_block(std::ostream& os, const float* data, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) put_f32(os, data[i]);
}

void get_f32_block(std::istream& is, float* data, std::size_t count, const char* what) {
    for (std::size_t i = 0; i < count; ++i) data[i] = get_f32(is, what);
}

}  // namespace wire

namespace {

json box_to_json(const BoundingBox& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

BoundingBox box_from_json(const json& j) {
    if (!j.is_array() || j.size() != 4) throw FormatError("box is not a 4-element array");
    return BoundingBox{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(),
                       j[3].get<double>()};
}

json example_to_json(const Example& ex) {
    json dets = json::array();
    for (const Detection& d : ex.detections) {
        dets.push_back({{"box", box_to_json(d.box)},
                        {"face_box", box_to_json(d.face_box)},
                        {"has_face", d.face_embedding.has_value()},
                        {"has_crop", d.face_crop.has_value()}});
    }
    json referred = json::array();
    for (const ReferredPerson& rp : ex.referred) {
        json mentions = json::array();
        for (const Mention& m : rp.mentions)
            mentions.push_back(json::array({m.token_start, m.token_end}));
        referred.push_back({{"identity", rp.identity_id}, {"mentions", mentions}});
    }
    json links = json::array();
    for (const auto& [p, d] : ex.gt_links) links.push_back(json::array({p, d}));
    return json{{"id", ex.id},
                {"tokens", ex.caption.tokens},
                {"has_verb", ex.caption.has_verb},
                {"detections", dets},
                {"referred", referred},
                {"links", links},
                {"year", ex.year},
                {"cropped", ex.cropped},
                {"category", ex.category}};
}

Example example_from_json(const json& j) {
    Example ex;
    ex.id = j.at("id").get<std::string>();
    ex.caption.tokens = j.at("tokens").get<std::vector<std::int32_t>>();
    ex.caption.has_verb = j.at("has_verb").get<bool>();
    for (const json& dj : j.at("detections")) {
        Detection d;
        d.box = box_from_json(dj.at("box"));
        d.face_box = box_from_json(dj.at("face_box"));
        if (dj.at("has_face").get<bool>()) d.face_embedding.emplace();
        if (dj.at("has_crop").get<bool>()) d.face_crop.emplace();
        ex.detections.push_back(std::move(d));
    }
    for (const json& rj : j.at("referred")) {
        ReferredPerson rp;
        rp.identity_id = rj.at("identity").get<std::string>();
        for (const json& mj : rj.at("mentions"))
            rp.mentions.push_back(Mention{mj.at(0).get<int>(), mj.at(1).get<int>()});
        ex.referred.push_back(std::move(rp));
    }
    for (const json& lj : j.at("links"))
        ex.gt_links.emplace_back(lj.at(0).get<int>(), lj.at(1).get<int>());
    ex.year = j.at("year").get<int>();
    ex.cropped = j.at("cropped").get<bool>();
    ex.category = j.at("category").get<std::string>();
    return ex;
}

}  // namespace

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);

    {
        json manifest{{"version", corpus.header.version},
                      {"d_v", corpus.header.d_v},
                      {"d_f", corpus.header.d_f},
                      {"vocab_size", corpus.header.vocab_size},
                      {"example_count", corpus.examples.size()}};
        std::ofstream os(dir / "manifest.json", std::ios::binary);
        if (!os) throw IoError("cannot write " + (dir / "manifest.json").string());
        os << manifest.dump(2) << "\n";
        if (!os) throw IoError("failed writing manifest.json");
    }

    {
        std::ofstream os(dir / "records.jsonl", std::ios::binary);
        if (!os) throw IoError("cannot write " + (dir / "records.jsonl").string());
        for (const Example& ex : corpus.examples) os << example_to_json(ex).dump() << "\n";
        if (!os) throw IoError("failed writing records.jsonl");
    }

    {
        std::ofstream os(dir / "features.bin", std::ios::binary);
        if (!os) throw IoError("cannot write " + (dir / "features.bin").string());
        os.write("WWF1", 4);
        for (std::size_t i = 0; i < corpus.examples.size(); ++i) {
            const Example& ex = corpus.examples[i];
            const auto ordinal = static_cast<std::uint32_t>(i);

            wire::put_u32(os, ordinal);
            wire::put_u32(os, kTensorVisual);
            wire::put_u32(os, static_cast<std::uint32_t>(ex.detections.size()));
            wire::put_u32(os, static_cast<std::uint32_t>(corpus.header.d_v));
            for (const Detection& d : ex.detections)
                wire::put_f32_block(os, d.visual_feature.data(), d.visual_feature.size());

            std::uint32_t n_faces = 0;
            for (const Detection& d : ex.detections) n_faces += d.face_embedding.has_value();
            wire::put_u32(os, ordinal);
            wire::put_u32(os, kTensorFace);
            wire::put_u32(os, n_faces);
            wire::put_u32(os, static_cast<std::uint32_t>(corpus.header.d_f));
            for (const Detection& d : ex.detections)
                if (d.face_embedding)
                    wire::put_f32_block(os, d.face_embedding->data(), d.face_embedding->size());

            for (const Detection& d : ex.detections) {
                if (!d.face_crop) continue;
                wire::put_u32(os, ordinal);
                wire::put_u32(os, kTensorCrop);
                wire::put_u32(os, static_cast<std::uint32_t>(d.face_crop->rows));
                wire::put_u32(os, static_cast<std::uint32_t>(d.face_crop->cols));
                for (double v : d.face_crop->a) wire::put_f32(os, static_cast<float>(v));
            }
        }
        if (!os) throw IoError("failed writing features.bin");
    }
}

Corpus load_corpus(const std::filesystem::path& dir) {
    Corpus corpus;
    std::size_t declared_count = 0;

    {
        std::ifstream is(dir / "manifest.json", std::ios::binary);
        if (!is) throw IoError("cannot open " + (dir / "manifest.json").string());
        json manifest;
        try {
            is >> manifest;
            corpus.header.version = manifest.at("version").get<int>();
            corpus.header.d_v = manifest.at("d_v").get<int>();
            corpus.header.d_f = manifest.at("d_f").get<int>();
            corpus.header.vocab_size = manifest.at("vocab_size").get<int>();
            declared_count = manifest.at("example_count").get<std::size_t>();
        } catch (const json::exception& e) {
            throw FormatError(std::string("manifest.json: ") + e.what());
        }
        if (corpus.header.version != 1)
            throw FormatError("unsupported corpus version " +
                              std::to_string(corpus.header.version));
        if (corpus.header.d_v <= 0 || corpus.header.d_f <= 0 || corpus.header.vocab_size < 2)
            throw FormatError("manifest.json declares non-positive dimensions");
    }

    {
        std::ifstream is(dir / "records.jsonl", std::ios::binary);
        if (!is) throw IoError("cannot open " + (dir / "records.jsonl").string());
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(is, line)) {
            ++line_no;
            if (line.empty()) continue;
            try {
                corpus.examples.push_back(example_from_json(json::parse(line)));
            } catch (const json::exception& e) {
                throw FormatError("records.jsonl line " + std::to_string(line_no) + ": " +
                                  e.what());
            }
        }
    }
    if (corpus.examples.size() != declared_count)
        throw FormatError("manifest declares " + std::to_string(declared_count) +
                          " examples, records.jsonl holds " +
                          std::to_string(corpus.examples.size()));

    {
        std::ifstream is(dir / "features.bin", std::ios::binary);
        if (!is) throw IoError("cannot open " + (dir / "features.bin").string());
        char magic[4];
        if (!is.read(magic, 4) || std::memcmp(magic, "WWF1", 4) != 0)
            throw FormatError("features.bin has bad magic");

        // Per-example cursors over crop-bearing detections.
        std::vector<std::size_t> next_crop(corpus.examples.size(), 0);

        while (true) {
            is.peek();
            if (is.eof()) break;
            const std::uint32_t ordinal = wire::get_u32(is, "ordinal");
            const std::uint32_t kind = wire::get_u32(is, "tensor kind");
            const std::uint32_t rows = wire::get_u32(is, "rows");
            const std::uint32_t cols = wire::get_u32(is, "cols");
            if (ordinal >= corpus.examples.size())
                throw FormatError("features.bin ordinal out of range");
            Example& ex = corpus.examples[ordinal];

            if (kind == kTensorVisual) {
                if (rows != ex.detections.size() ||
                    cols != static_cast<std::uint32_t>(corpus.header.d_v))
                    throw FormatError("visual tensor shape mismatch for " + ex.id);
                for (std::uint32_t r = 0; r < rows; ++r) {
                    ex.detections[r].visual_feature.resize(cols);
                    wire::get_f32_block(is, ex.detections[r].visual_feature.data(), cols,
                                        "visual feature");
                }
            } else if (kind == kTensorFace) {
                if (cols != static_cast<std::uint32_t>(corpus.header.d_f))
                    throw FormatError("face tensor width mismatch for " + ex.id);
                std::uint32_t consumed = 0;
                for (Detection& d : ex.detections) {
                    if (!d.face_embedding) continue;
                    if (consumed == rows) break;
                    d.face_embedding->resize(cols);
                    wire::get_f32_block(is, d.face_embedding->data(), cols, "face embedding");
                    ++consumed;
                }
                std::uint32_t expected = 0;
                for (const Detection& d : ex.detections) expected += d.face_embedding.has_value();
                if (rows != expected)
                    throw FormatError("face tensor row count mismatch for " + ex.id);
            } else if (kind == kTensorCrop) {
                if (rows == 0 || cols == 0) throw FormatError("empty crop tensor for " + ex.id);
                std::size_t det_idx = 0, seen = 0;
                bool placed = false;
                for (; det_idx < ex.detections.size(); ++det_idx) {
                    if (!ex.detections[det_idx].face_crop) continue;
                    if (seen == next_crop[ordinal]) {
                        Mat crop(static_cast<int>(rows), static_cast<int>(cols));
                        for (double& v : crop.a) v = wire::get_f32(is, "crop");
                        *ex.detections[det_idx].face_crop = std::move(crop);
                        ++next_crop[ordinal];
                        placed = true;
                        break;
                    }
                    ++seen;
                }
                if (!placed) throw FormatError("extra crop tensor for " + ex.id);
            } else {
                throw FormatError("unknown tensor kind " + std::to_string(kind));
            }
        }
    }

    for (const Example& ex : corpus.examples) {
        for (const Detection& d : ex.detections) {
            if (d.face_crop && d.face_crop->empty())
                throw FormatError("missing crop tensor for " + ex.id);
            if (d.face_embedding && d.face_embedding->empty())
                throw FormatError("missing face embedding tensor for " + ex.id);
        }
        validate_example(ex, corpus.header);
    }
    return corpus;
}

}  // namespace namelink
