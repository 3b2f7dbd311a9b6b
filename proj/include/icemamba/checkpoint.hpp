#pragma once

#include <string>
#include <type_traits>

#include <json.hpp>

#include "icemamba/binary_io.hpp"
#include "icemamba/param_store.hpp"

namespace icemamba {

// Layout: "IMCK1\n", u32 header length, JSON header
// {"precision": "f32"|"f64", "step": n, "params": [{"name", "shape"}...]},
// then the raw little-endian values of every parameter in header order.
inline constexpr std::string_view kCheckpointMagic = "IMCK1\n";

template <class T>
constexpr const char* precision_tag() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? "f32" : "f64";
}

template <class T>
void save_checkpoint(const std::string& path, const ParamStore<T>& store) {
  nlohmann::json header;
  header["precision"] = precision_tag<T>();
  header["step"] = store.step();
  header["params"] = nlohmann::json::array();
  for (const auto& e : store.entries()) {
    header["params"].push_back({{"name", e.name}, {"shape", e.value.shape()}});
  }
  const std::string text = header.dump();
  io::write_atomically(path, [&](std::ostream& os) {
    os.write(kCheckpointMagic.data(), static_cast<std::streamsize>(kCheckpointMagic.size()));
    io::write_u32(os, static_cast<std::uint32_t>(text.size()));
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& e : store.entries()) io::write_array(os, e.value.values());
  });
}

/// Loads values into an already-built store; names, order and shapes must match.
template <class T>
void load_checkpoint(const std::string& path, ParamStore<T>& store) {
  auto reader = io::Reader::open(path, "checkpoint");
  reader.expect_magic(kCheckpointMagic);
  const std::uint32_t len = reader.u32();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(reader.text(len));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(reader.what() + ": malformed header: " + e.what());
  }
  if (header.value("precision", "") != precision_tag<T>()) {
    throw DataError(reader.what() + ": precision " + header.value("precision", "?") +
                    " does not match " + precision_tag<T>());
  }
  const auto& params = header.at("params");
  if (params.size() != store.size()) {
    throw DataError(reader.what() + ": header lists " + std::to_string(params.size()) +
                    " parameters, model has " + std::to_string(store.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& e = store.entries()[i];
    const auto name = params[i].at("name").get<std::string>();
    const auto shape = params[i].at("shape").get<Shape>();
    if (name != e.name || shape != e.value.shape()) {
      throw DataError(reader.what() + ": header mismatch at parameter '" + name + "'");
    }
    reader.array(e.value.mutable_values());
  }
  if (reader.remaining() != 0) throw DataError(reader.what() + ": trailing bytes after payload");
  store.set_step(header.at("step").get<std::uint64_t>());
}

}  // namespace icemamba
