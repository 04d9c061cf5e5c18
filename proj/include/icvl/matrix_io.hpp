// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "icvl/matrix.hpp"

namespace icvl {

using NamedMatrices = std::map<std::string, Matrix>;

/// On-disk element type of an ICVLMAT payload. In-memory matrices are
/// always double; f32 is a storage option only.
enum class DType : std::uint8_t { kF64 = 0, kF32 = 1 };

inline constexpr std::uint32_t kIcvlMatVersion = 1;

// ICVLMAT layout (all little-endian):
//   "ICVL" | version u32 | dtype u8 | rows u64 | dims u64 | payload
std::vector<std::uint8_t> encode_matrix(const Matrix& m, DType dtype = DType::kF64);

/// Decodes one matrix starting at `offset`; advances `offset` past it.
Matrix decode_matrix(const std::vector<std::uint8_t>& bytes, std::size_t& offset);
Matrix decode_matrix(const std::vector<std::uint8_t>& bytes);

void write_matrix(const std::filesystem::path& path, const Matrix& m, DType dtype = DType::kF64);
Matrix read_matrix(const std::filesystem::path& path);

/// Multi-tensor checkpoint: a text manifest followed by one ICVLMAT blob
/// per tensor in manifest order.
///
///   ICVLCKPT 1
///   seed <u64>
///   tensor <name> <rows> <dims>
///   ...
///   end
struct Checkpoint {
  std::uint64_t seed = 0;
  NamedMatrices tensors;
  std::map<std::string, std::string> meta;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace icvl
