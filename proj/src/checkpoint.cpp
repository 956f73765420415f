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

#include "blindadv/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

namespace blindadv {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

constexpr std::array<char, 8> kMagic = {'B', 'L', 'N', 'D', 'A', 'D', 'V', '\0'};

template <typename T>
void put(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::ifstream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw ValidationError("truncated checkpoint");
  return value;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  nlohmann::json header = ckpt.header;
  header["kind"] = ckpt.kind;
  const std::string text = header.dump();
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const Matrix& m : ckpt.tensors) {
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
  if (!out) throw Error("failed writing " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path,
                           const std::string& expected_kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw ValidationError("not a checkpoint: " + path.string());
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw ValidationError("checkpoint version " + std::to_string(version) +
                          " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const auto header_len = get<std::uint32_t>(in);
  std::string text(header_len, '\0');
  in.read(text.data(), header_len);
  if (!in) throw ValidationError("truncated checkpoint header");

  Checkpoint ckpt;
  try {
    ckpt.header = nlohmann::json::parse(text);
    ckpt.kind = ckpt.header.at("kind").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad checkpoint header: ") + e.what());
  }
  if (ckpt.kind != expected_kind) {
    throw ConfigError("checkpoint holds a " + ckpt.kind + ", expected " + expected_kind);
  }
  const auto count = get<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto rows = get<std::uint64_t>(in);
    const auto cols = get<std::uint64_t>(in);
    Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!in) throw ValidationError("truncated checkpoint tensor");
    ckpt.tensors.push_back(std::move(m));
  }
  return ckpt;
}

}  // namespace blindadv
