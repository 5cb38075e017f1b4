/* Copyright 2026 The DefXAttn Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#include "defxattn/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <memory>
#include <vector>

#include "defxattn/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoints are little-endian; big-endian hosts need a "
              "byte-swapping port");

namespace defxattn {
namespace {

constexpr char kMagic[4] = {'D', 'C', 'A', 'X'};

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f != nullptr) std::fclose(f);
  }
};
using FileHandle = std::unique_ptr<std::FILE, FileCloser>;

struct Reader {
  FileHandle file;
  std::string path;

  void read(void* dst, size_t bytes) {
    if (std::fread(dst, 1, bytes, file.get()) != bytes) {
      throw FormatError("'" + path + "' is truncated");
    }
  }
  template <typename T>
  T scalar() {
    T v;
    read(&v, sizeof v);
    return v;
  }
  std::string text(size_t bytes) {
    std::string s(bytes, '\0');
    read(s.data(), bytes);
    return s;
  }
};

struct TensorEntry {
  std::string name;
  Shape shape;
  uint64_t offset;  // in floats
  int64_t count;
};

struct ParsedHeader {
  std::string config;
  std::vector<TensorEntry> entries;
  uint64_t payload_floats;
};

ParsedHeader parse_header(Reader& in) {
  char magic[4];
  in.read(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("'" + in.path + "' is not a checkpoint (bad magic)");
  }
  const auto version = in.scalar<uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError("'" + in.path + "' has version " +
                      std::to_string(version) + "; supported versions: " +
                      std::to_string(kCheckpointVersion));
  }
  ParsedHeader h;
  h.config = in.text(in.scalar<uint32_t>());
  const auto n_tensors = in.scalar<uint32_t>();
  h.payload_floats = 0;
  for (uint32_t t = 0; t < n_tensors; ++t) {
    TensorEntry e;
    e.name = in.text(in.scalar<uint16_t>());
    const auto rank = in.scalar<uint8_t>();
    e.count = 1;
    for (uint8_t r = 0; r < rank; ++r) {
      const auto extent = in.scalar<uint32_t>();
      if (extent == 0) {
        throw FormatError("'" + in.path + "' tensor '" + e.name +
                          "' has a zero extent");
      }
      e.shape.push_back(static_cast<int64_t>(extent));
      e.count *= static_cast<int64_t>(extent);
    }
    e.offset = in.scalar<uint64_t>();
    if (e.offset != h.payload_floats) {
      throw FormatError("'" + in.path + "' tensor '" + e.name +
                        "' has a non-sequential payload offset");
    }
    h.payload_floats += static_cast<uint64_t>(e.count);
    h.entries.push_back(std::move(e));
  }
  return h;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParameterStore& store,
                     const std::string& config_echo) {
  FileHandle f(std::fopen(path.c_str(), "wb"));
  if (!f) {
    throw IoError("cannot open '" + path + "' for writing");
  }
  auto put = [&](const void* src, size_t bytes) {
    if (std::fwrite(src, 1, bytes, f.get()) != bytes) {
      throw IoError("short write to '" + path + "'");
    }
  };
  auto put32 = [&](uint32_t v) { put(&v, 4); };

  put(kMagic, 4);
  put32(kCheckpointVersion);
  put32(static_cast<uint32_t>(config_echo.size()));
  put(config_echo.data(), config_echo.size());
  put32(static_cast<uint32_t>(store.size()));

  uint64_t offset = 0;
  for (const auto& [name, tensor] : store.entries()) {
    const auto name_len = static_cast<uint16_t>(name.size());
    put(&name_len, 2);
    put(name.data(), name.size());
    const auto rank = static_cast<uint8_t>(tensor.shape().size());
    put(&rank, 1);
    for (int64_t e : tensor.shape()) {
      put32(static_cast<uint32_t>(e));
    }
    put(&offset, 8);
    offset += static_cast<uint64_t>(tensor.data().size());
  }
  for (const auto& [name, tensor] : store.entries()) {
    std::vector<float> payload;
    payload.reserve(tensor.data().size());
    for (double v : tensor.data()) payload.push_back(static_cast<float>(v));
    put(payload.data(), payload.size() * sizeof(float));
  }
}

std::string load_checkpoint(const std::string& path, ParameterStore& store) {
  Reader in{FileHandle(std::fopen(path.c_str(), "rb")), path};
  if (!in.file) {
    throw IoError("cannot open '" + path + "'");
  }
  ParsedHeader h = parse_header(in);

  std::vector<std::string> problems;
  for (const TensorEntry& e : h.entries) {
    if (!store.contains(e.name)) {
      problems.push_back("'" + e.name + "' is not a model parameter");
    } else if (store.get(e.name).shape() != e.shape) {
      problems.push_back("'" + e.name + "' has shape " + shape_str(e.shape) +
                         ", model expects " +
                         shape_str(store.get(e.name).shape()));
    }
  }
  for (const std::string& name : store.names()) {
    bool found = false;
    for (const TensorEntry& e : h.entries) {
      if (e.name == name) {
        found = true;
        break;
      }
    }
    if (!found) {
      problems.push_back("'" + name + "' is missing from the checkpoint");
    }
  }
  if (!problems.empty()) {
    std::string msg = "checkpoint '" + path + "' does not fit the model:";
    for (const std::string& p : problems) msg += "\n  - " + p;
    throw ConfigError(msg);
  }

  for (const TensorEntry& e : h.entries) {
    std::vector<float> payload(static_cast<size_t>(e.count));
    in.read(payload.data(), payload.size() * sizeof(float));
    auto dst = store.get(e.name).mutable_data();
    for (size_t i = 0; i < payload.size(); ++i) {
      dst[i] = static_cast<double>(payload[i]);
    }
  }
  char extra;
  if (std::fread(&extra, 1, 1, in.file.get()) == 1) {
    throw FormatError("'" + path + "' has trailing bytes after the payload");
  }
  return h.config;
}

std::string read_checkpoint_config(const std::string& path) {
  Reader in{FileHandle(std::fopen(path.c_str(), "rb")), path};
  if (!in.file) {
    throw IoError("cannot open '" + path + "'");
  }
  return parse_header(in).config;
}

}  // namespace defxattn
