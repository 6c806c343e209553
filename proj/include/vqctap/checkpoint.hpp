#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

namespace vqctap {

inline constexpr uint32_t kCheckpointVersion = 1;

/// Versioned binary container: a string manifest plus named tensor blocks,
/// closed by a 64-bit checksum over everything before it.
///
///   "VQCTAPCK" | u32 version | u32 n, n x (str key, str value)
///   | u32 m, m x (str name, u8 dtype, u32 ndim, i64 dims[ndim], u64 nbytes, bytes)
///   | u64 fnv1a64
///
/// Strings are u32 length plus bytes; all integers little-endian.
struct Checkpoint {
  std::map<std::string, std::string> manifest;
  std::map<std::string, torch::Tensor> blocks;

  bool has_block(const std::string& name) const { return blocks.count(name) != 0; }
  /// Throws FormatError when the block is absent.
  const torch::Tensor& block(const std::string& name) const;
  /// Throws FormatError when the key is absent.
  const std::string& meta(const std::string& key) const;
};

/// Throws FileError when the file cannot be written.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);

/// Throws FileError when unreadable, FormatError on a foreign file or a
/// version mismatch and IntegrityError on truncation or a checksum mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Adds every parameter and buffer of `module` as `<prefix><name>`.
void store_parameters(Checkpoint& checkpoint, const std::string& prefix,
                      const torch::nn::Module& module);

/// Copies `<prefix><name>` blocks into `module`. Throws FormatError on a
/// missing block or a shape/dtype mismatch.
void restore_parameters(const Checkpoint& checkpoint, const std::string& prefix,
                        torch::nn::Module& module);

/// Shortest round-trip decimal text for a double, and its inverse (which
/// throws FormatError on malformed text).
std::string format_double(double value);
double parse_double(const std::string& text);
int64_t parse_int(const std::string& text);

}  // namespace vqctap
