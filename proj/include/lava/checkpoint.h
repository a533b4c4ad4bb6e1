#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "lava/config.h"
#include "lava/data.h"
#include "lava/nat.h"
#include "lava/params.h"
#include "lava/teacher.h"

namespace lava {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class ModelKind : std::uint32_t { kTeacher = 0, kNat = 1 };

// On-disk layout (little-endian):
//   "LAVA" | u32 version | u32 kind
//   u32 n_config | n_config × (str key, str value)
//   u32 n_tensors | n_tensors × (str name, u32 ndim, ndim × u64 extent, f64 payload)
//   u32 n_tokens | n_tokens × str           (ordinary tokens, id order from 4)
// where str = u32 byte length + bytes.
struct Checkpoint {
  ModelKind kind = ModelKind::kNat;
  ModelConfig config;
  NamedTensors tensors;
  Vocabulary vocab;
};

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
// Reads the whole file before returning; any defect throws CheckpointError.
Checkpoint read_checkpoint(const std::string& path);

void save_checkpoint(const NatModel& model, const Vocabulary& vocab, const std::string& path);
void save_checkpoint(const Teacher& teacher, const Vocabulary& vocab, const std::string& path);

// Builds a model from the stored config and copies every tensor in. Throws
// on a kind mismatch, a missing tensor (named), or an unexpected extra one.
NatModel load_nat(const std::string& path, Vocabulary* vocab_out = nullptr);
Teacher load_teacher(const std::string& path, Vocabulary* vocab_out = nullptr);

}  // namespace lava
