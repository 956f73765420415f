//
// Copyright 2026 The blindadv Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

// Self-describing binary checkpoints:
//
//   "BLNDADV\0" | u32 format version | u32 header bytes | JSON header |
//   u32 tensor count | { u64 rows | u64 cols | rows*cols f64, column-major }*
//
// All integers and doubles are little-endian.

#ifndef BLINDADV_CHECKPOINT_HPP_
#define BLINDADV_CHECKPOINT_HPP_

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "blindadv/common.hpp"

namespace blindadv {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string kind;  // "classifier" or "generator"
  nlohmann::json header;
  std::vector<Matrix> tensors;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
// Throws ValidationError on a bad magic, version or kind.
Checkpoint read_checkpoint(const std::filesystem::path& path,
                           const std::string& expected_kind);

}  // namespace blindadv

#endif  // BLINDADV_CHECKPOINT_HPP_
