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
#include "defxattn/volume_io.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <sstream>
#include <vector>

#include "defxattn/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "raw volume files are little-endian; big-endian hosts need a "
              "byte-swapping port");

namespace defxattn {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f != nullptr) std::fclose(f);
  }
};
using FileHandle = std::unique_ptr<std::FILE, FileCloser>;

FileHandle open_or_throw(const std::string& path, const char* mode) {
  FileHandle f(std::fopen(path.c_str(), mode));
  if (!f) {
    throw IoError("cannot open '" + path + "'");
  }
  return f;
}

void write_header(const std::string& base, const char* dtype,
                  const Shape& extents) {
  FileHandle f = open_or_throw(base + ".hdr", "wb");
  std::ostringstream out;
  out << "dtype: " << dtype << "\nextents:";
  for (int64_t e : extents) out << ' ' << e;
  out << '\n';
  const std::string text = out.str();
  if (std::fwrite(text.data(), 1, text.size(), f.get()) != text.size()) {
    throw IoError("short write to '" + base + ".hdr'");
  }
}

struct Header {
  std::string dtype;
  Shape extents;
  int64_t count = 1;
};

Header read_header(const std::string& base) {
  FileHandle f = open_or_throw(base + ".hdr", "rb");
  std::string text;
  char buf[256];
  size_t got;
  while ((got = std::fread(buf, 1, sizeof buf, f.get())) > 0) {
    text.append(buf, got);
  }
  Header h;
  std::istringstream in(text);
  std::string key;
  if (!(in >> key) || key != "dtype:" || !(in >> h.dtype)) {
    throw FormatError("'" + base + ".hdr' is missing the dtype line");
  }
  if (!(in >> key) || key != "extents:") {
    throw FormatError("'" + base + ".hdr' is missing the extents line");
  }
  int64_t e;
  while (in >> e) {
    if (e < 1) {
      throw FormatError("'" + base + ".hdr' has non-positive extent " +
                        std::to_string(e));
    }
    h.extents.push_back(e);
    h.count *= e;
  }
  if (h.extents.empty()) {
    throw FormatError("'" + base + ".hdr' lists no extents");
  }
  return h;
}

template <typename T>
void write_payload(const std::string& base, const std::vector<T>& values) {
  FileHandle f = open_or_throw(base + ".raw", "wb");
  if (std::fwrite(values.data(), sizeof(T), values.size(), f.get()) !=
      values.size()) {
    throw IoError("short write to '" + base + ".raw'");
  }
}

template <typename T>
std::vector<T> read_payload(const std::string& base, int64_t count) {
  FileHandle f = open_or_throw(base + ".raw", "rb");
  std::vector<T> values(static_cast<size_t>(count));
  const size_t got =
      std::fread(values.data(), sizeof(T), values.size(), f.get());
  if (got != values.size()) {
    throw FormatError("'" + base + ".raw' holds " + std::to_string(got) +
                      " values, header promises " + std::to_string(count));
  }
  char extra;
  if (std::fread(&extra, 1, 1, f.get()) == 1) {
    throw FormatError("'" + base + ".raw' is longer than the header promises");
  }
  return values;
}

}  // namespace

void save_raw_volume(const std::string& base, const Tensor& tensor) {
  std::vector<float> payload;
  payload.reserve(tensor.data().size());
  for (double v : tensor.data()) payload.push_back(static_cast<float>(v));
  write_header(base, "float32", tensor.shape());
  write_payload(base, payload);
}

Tensor load_raw_volume(const std::string& base) {
  const Header h = read_header(base);
  if (h.dtype != "float32") {
    throw FormatError("'" + base + ".hdr' has dtype '" + h.dtype +
                      "', expected float32");
  }
  const std::vector<float> payload = read_payload<float>(base, h.count);
  std::vector<double> values(payload.begin(), payload.end());
  return Tensor::create(h.extents, std::move(values));
}

void save_label_volume(const std::string& base, const LabelMap& labels) {
  write_header(base, "int32",
               {labels.extents[0], labels.extents[1], labels.extents[2]});
  write_payload(base, labels.labels);
}

LabelMap load_label_volume(const std::string& base) {
  const Header h = read_header(base);
  if (h.dtype != "int32") {
    throw FormatError("'" + base + ".hdr' has dtype '" + h.dtype +
                      "', expected int32");
  }
  if (h.extents.size() != 3) {
    throw FormatError("'" + base + ".hdr' must list 3 extents for labels, got " +
                      std::to_string(h.extents.size()));
  }
  return LabelMap({h.extents[0], h.extents[1], h.extents[2]},
                  read_payload<int32_t>(base, h.count));
}

}  // namespace defxattn
