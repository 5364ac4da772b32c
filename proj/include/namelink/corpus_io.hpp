#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "namelink/datamodel.hpp"

namespace namelink {

// On-disk corpus layout (all integers little-endian):
//   <dir>/manifest.json   {version, d_v, d_f, vocab_size, example_count}
//   <dir>/records.jsonl   one structured-text record per example
//   <dir>/features.bin    magic "WWF1", then per-tensor records
//                         [u32 example_ordinal, u32 tensor_kind, u32 rows,
//                          u32 cols, rows*cols little-endian f32]
// tensor_kind: 0 = visual features (m x d_v), 1 = face embeddings (one row
// per detection that has one, in detection order), 2 = one face crop per
// record (per crop-bearing detection, in detection order).

constexpr std::uint32_t kTensorVisual = 0;
constexpr std::uint32_t kTensorFace = 1;
constexpr std::uint32_t kTensorCrop = 2;

Corpus load_corpus(const std::filesystem::path& dir);
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);

// Little-endian wire helpers, shared with the checkpoint format.
namespace wire {

void put_u32(std::ostream& os, std::uint32_t v);
std::uint32_t get_u32(std::istream& is, const char* what);
void put_f32(std::ostream& os, float v);
float get_f32(std::istream& is, const char* what);
void put_f32_block(std::ostream& os, const float* data, std::size_t count);
void get_f32_block(std::istream& is, float* data, std::size_t count, const char* what);

}  // namespace wire

}  // namespace namelink
