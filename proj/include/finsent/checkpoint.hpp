#pragma once

#include <string>

#include "finsent/model.hpp"
#include "finsent/tokenizer.hpp"
#include "finsent/vocab.hpp"

namespace finsent {

/// Checkpoint layout (version 1):
///   bytes 0-7    magic "FSBCKPT1"
///   bytes 8-15   little-endian u64 header length N
///   N bytes      UTF-8 JSON {format_version, model, manifest}
///   payload      concatenated little-endian IEEE-754 f32 tensors
/// The manifest lists {name, shape, dtype:"f32", byte_offset, byte_length}
/// per parameter, offsets relative to the payload start. A save/load round
/// trip reproduces every tensor bit-exactly; corrupt or truncated files raise
/// CheckpointError without yielding a partial model.
void save_checkpoint(const EncoderModel& model, const std::string& path);
EncoderModel load_checkpoint(const std::string& path);

/// Runs an eval-mode forward and writes tokens, the per-layer per-head
/// attention weights over the live positions, and a config summary as JSON.
void export_attention(const EncoderModel& model, const InputFeatures& features,
                      const Vocabulary& vocab, const std::string& path);

}  // namespace finsent
