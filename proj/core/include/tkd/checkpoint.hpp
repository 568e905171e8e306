#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "tkd/encoder.hpp"

namespace tkd {

// Checkpoint layout: one manifest line
//   TKD1 num_layers=.. num_heads=.. d_model=.. d_ff=.. vocab_size=..
//        max_seq_len=.. num_classes=.. layernorm_eps=.. params=name:AxB,...
// followed by every parameter's data as little-endian IEEE-754 doubles in
// manifest order.

std::string serialize_checkpoint(const EncoderModel& model);
EncoderModel deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const EncoderModel& model, const std::filesystem::path& path);
EncoderModel load_checkpoint(const std::filesystem::path& path);

/// FNV-1a 64-bit hash as 16 lowercase hex digits.
std::string fnv1a_hex(std::string_view bytes);
/// Identity of a model's serialized checkpoint.
std::string checkpoint_checksum(const EncoderModel& model);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace tkd
