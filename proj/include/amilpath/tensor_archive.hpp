#pragma once
// Minimal named-tensor container: checkpoint parameter storage and the
// feature-matrix archive share this format. Native-endian doubles; files are
// not meant to cross architectures.

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <map>
#include <string>

#include "amilpath/nn/tensor.hpp"

namespace amilpath {

namespace detail {

constexpr char kArchiveMagic[8] = {'A', 'M', 'T', 'A', 'R', 'C','H', '1'};

inline void write_raw(std::FILE* f, const void* p, size_t n, const fs::path& path) {
  if (std::fwrite(p, 1, n, f) != n) {
    std::fclose(f);
    fail("short write: ", path.string());
  }
}

inline void read_raw(std::FILE* f, void* p, size_t n, const fs::path& path) {
  if (std::fread(p, 1, n, f) != n) {
    std::fclose(f);
    fail("truncated archive: ", path.string());
  }
}

}  // namespace detail

inline void save_tensors(const fs::path& path, const std::map<std::string, nn::Tensor>& tensors) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::FILE* f = std::fopen(path.string().c_str(), "wb");
  if (!f) fail("cannot write archive: ", path.string());
  detail::write_raw(f, detail::kArchiveMagic, sizeof(detail::kArchiveMagic), path);
  uint64_t count = tensors.size();
  detail::write_raw(f, &count, sizeof(count), path);
  for (const auto& [name, t] : tensors) {
    uint32_t name_len = static_cast<uint32_t>(name.size());
    detail::write_raw(f, &name_len, sizeof(name_len), path);
    detail::write_raw(f, name.data(), name.size(), path);
    uint32_t ndim = static_cast<uint32_t>(t.shape.size());
    detail::write_raw(f, &ndim, sizeof(ndim), path);
    for (int d : t.shape) {
      int64_t dim = d;
      detail::write_raw(f, &dim, sizeof(dim), path);
    }
    detail::write_raw(f, t.data.data(), t.data.size() * sizeof(double), path);
  }
  std::fclose(f);
}

inline std::map<std::string, nn::Tensor> load_tensors(const fs::path& path) {
  std::FILE* f = std::fopen(path.string().c_str(), "rb");
  if (!f) fail("cannot open archive: ", path.string());
  char magic[8];
  detail::read_raw(f, magic, sizeof(magic), path);
  if (std::memcmp(magic, detail::kArchiveMagic, sizeof(magic)) != 0) {
    std::fclose(f);
    fail("not a tensor archive: ", path.string());
  }
  uint64_t count = 0;
  detail::read_raw(f, &count, sizeof(count), path);
  std::map<std::string, nn::Tensor> out;
  for (uint64_t i = 0; i < count; ++i) {
    uint32_t name_len = 0;
    detail::read_raw(f, &name_len, sizeof(name_len), path);
    std::string name(name_len, '\0');
    detail::read_raw(f, name.data(), name_len, path);
    uint32_t ndim = 0;
    detail::read_raw(f, &ndim, sizeof(ndim), path);
    std::vector<int> shape(ndim);
    for (uint32_t d = 0; d < ndim; ++d) {
      int64_t dim = 0;
      detail::read_raw(f, &dim, sizeof(dim), path);
      if (dim < 0 || dim > (int64_t{1} << 32)) {
        std::fclose(f);
        fail("corrupt dimension in archive: ", path.string());
      }
      shape[d] = static_cast<int>(dim);
    }
    nn::Tensor t(shape);
    detail::read_raw(f, t.data.data(), t.data.size() * sizeof(double), path);
    if (!out.emplace(std::move(name), std::move(t)).second) {
      std::fclose(f);
      fail("duplicate tensor name in archive: ", path.string());
    }
  }
  std::fclose(f);
  return out;
}

}  // namespace amilpath
