#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "icemamba/error.hpp"

namespace icemamba::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats are written from little-endian hosts only");

inline void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
void write_array(std::ostream& os, std::span<const T> values) {
  os.write(reinterpret_cast<const char*>(values.data()),
           static_cast<std::streamsize>(values.size_bytes()));
}

/// Sequential reader over an in-memory file image; every short read is a
/// "truncated payload" data error.
class Reader {
 public:
  explicit Reader(std::vector<char> bytes, std::string what)
      : bytes_(std::move(bytes)), what_(std::move(what)) {}

  static Reader open(const std::string& path, const std::string& what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(what + ": cannot open '" + path + "'");
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return Reader(std::move(bytes), what + " '" + path + "'");
  }

  void expect_magic(std::string_view magic) {
    if (bytes_.size() < magic.size() ||
        std::string_view(bytes_.data(), magic.size()) != magic) {
      throw DataError(what_ + ": bad magic");
    }
    pos_ = magic.size();
  }

  std::uint32_t u32() {
    std::uint32_t v;
    std::memcpy(&v, take(sizeof v), sizeof v);
    return v;
  }

  std::string text(std::size_t n) { return std::string(take(n), n); }

  template <class T>
  void array(std::span<T> out) {
    std::memcpy(out.data(), take(out.size_bytes()), out.size_bytes());
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }
  const std::string& what() const { return what_; }

 private:
  const char* take(std::size_t n) {
    if (remaining() < n) throw DataError(what_ + ": truncated payload");
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  std::vector<char> bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

/// Writes to `path` through a temporary sibling and renames on success.
template <class Fn>
void write_atomically(const std::string& path, Fn&& body) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write '" + path + "'");
    body(os);
    if (!os) throw DataError("write failed for '" + path + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw DataError("cannot rename '" + tmp + "' to '" + path + "'");
  }
}

}  // namespace icemamba::io
