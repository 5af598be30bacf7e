#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "sos/nets.hpp"

namespace sos {

enum class CheckpointErrorKind { Io, BadMagic, UnsupportedVersion, Truncated, Mismatch };

std::string to_string(CheckpointErrorKind kind);

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(CheckpointErrorKind kind, const std::string& message)
      : std::runtime_error(to_string(kind) + ": " + message), kind_(kind) {}
  CheckpointErrorKind kind() const { return kind_; }

 private:
  CheckpointErrorKind kind_;
};

// On-disk layout, all integers little-endian:
//   8 bytes  magic "SOSCKPT\0"
//   u32      format version (1)
//   u32 d, u32 n, u32 P
//   u32      tensor count
//   per tensor: u32 name length, name bytes, u32 rank, u32 extents[rank],
//               f64 values in row-major order
struct CheckpointTensor {
  std::string name;
  std::vector<std::uint32_t> shape;
  std::vector<double> values;

  bool operator==(const CheckpointTensor&) const = default;
};

struct Checkpoint {
  std::uint32_t version = 1;
  std::uint32_t feature_width = 0;
  std::uint32_t num_classes = 0;
  std::uint32_t num_patches = 0;
  std::vector<CheckpointTensor> tensors;

  bool operator==(const Checkpoint&) const = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

Checkpoint snapshot(const SosModel& model);
// Copies values into the model's tensors; names, order and shapes must match.
void restore(SosModel& model, const Checkpoint& checkpoint);

std::vector<char> encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(const std::vector<char>& bytes);

void write_checkpoint(const std::filesystem::path& path, const SosModel& model);
Checkpoint read_checkpoint(const std::filesystem::path& path);
void load_checkpoint(const std::filesystem::path& path, SosModel& model);

}  // namespace sos
