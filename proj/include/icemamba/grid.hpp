#pragma once

#include <algorithm>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "icemamba/binary_io.hpp"
#include "icemamba/types.hpp"

namespace icemamba {

/// Monthly 2D fields of one variable on a fixed grid, stored [t, y, x].
struct GridSeries {
  std::string variable;
  std::string units;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Month> months;  // strictly increasing
  std::vector<float> values;
  Mask land;
  std::optional<Mask> pole_hole;

  std::size_t cells() const { return height * width; }
  std::size_t steps() const { return months.size(); }

  std::span<const float> field(std::size_t t) const {
    return std::span<const float>(values).subspan(t * cells(), cells());
  }
  std::span<float> field(std::size_t t) { return std::span<float>(values).subspan(t * cells(), cells()); }

  std::optional<std::size_t> index_of(Month m) const {
    auto it = std::lower_bound(months.begin(), months.end(), m);
    if (it == months.end() || *it != m) return std::nullopt;
    return static_cast<std::size_t>(it - months.begin());
  }

  std::span<const float> field_at(Month m) const {
    const auto t = index_of(m);
    if (!t) throw DataError("variable '" + variable + "' has no field for " + m.str());
    return field(*t);
  }

  void validate() const {
    if (height == 0 || width == 0) throw DataError("grid '" + variable + "': empty spatial extent");
    if (values.size() != steps() * cells()) {
      throw DataError("grid '" + variable + "': " + std::to_string(values.size()) + " values for " +
                      std::to_string(steps()) + " fields of " + std::to_string(cells()) + " cells");
    }
    if (land.size() != cells()) throw DataError("grid '" + variable + "': land mask does not cover the grid");
    if (pole_hole && pole_hole->size() != cells()) {
      throw DataError("grid '" + variable + "': pole-hole mask does not cover the grid");
    }
    for (std::size_t i = 1; i < months.size(); ++i) {
      if (!(months[i - 1] < months[i])) {
        throw DataError("grid '" + variable + "': months not strictly increasing at " + months[i].str());
      }
    }
  }

  /// Copy restricted to months in [first, last].
  GridSeries slice(Month first, Month last) const {
    GridSeries out = *this;
    out.months.clear();
    out.values.clear();
    for (std::size_t t = 0; t < steps(); ++t) {
      if (months[t] < first || last < months[t]) continue;
      out.months.push_back(months[t]);
      out.values.insert(out.values.end(), field(t).begin(), field(t).end());
    }
    return out;
  }
};

/// Consecutive months from `first`, `count` of them.
inline std::vector<Month> month_range(Month first, std::size_t count) {
  std::vector<Month> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(first.plus(static_cast<long>(i)));
  return out;
}

// IMGR layout: "IMGR1\n", u32 header length, JSON header {variable, units,
// shape [T,H,W], months, masks {land, pole_hole}, precision "f32"}, land
// mask (1 byte/cell), optional pole-hole mask, then T*H*W float32 values.
inline constexpr std::string_view kGridMagic = "IMGR1\n";

inline void write_grid(const std::string& path, const GridSeries& g) {
  g.validate();
  nlohmann::json header;
  header["variable"] = g.variable;
  header["units"] = g.units;
  header["shape"] = {g.steps(), g.height, g.width};
  header["months"] = nlohmann::json::array();
  for (const auto& m : g.months) header["months"].push_back(m.str());
  header["masks"] = {{"land", true}, {"pole_hole", g.pole_hole.has_value()}};
  header["precision"] = "f32";
  const std::string text = header.dump();
  io::write_atomically(path, [&](std::ostream& os) {
    os.write(kGridMagic.data(), static_cast<std::streamsize>(kGridMagic.size()));
    io::write_u32(os, static_cast<std::uint32_t>(text.size()));
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    io::write_array(os, std::span<const std::uint8_t>(g.land));
    if (g.pole_hole) io::write_array(os, std::span<const std::uint8_t>(*g.pole_hole));
    io::write_array(os, std::span<const float>(g.values));
  });
}

inline GridSeries read_grid(const std::string& path) {
  auto reader = io::Reader::open(path, "grid");
  reader.expect_magic(kGridMagic);
  const std::uint32_t len = reader.u32();
  GridSeries g;
  std::size_t steps = 0;
  bool has_hole = false;
  try {
    const auto header = nlohmann::json::parse(reader.text(len));
    if (header.value("precision", "f32") != "f32") {
      throw DataError(reader.what() + ": unsupported precision " + header.value("precision", ""));
    }
    g.variable = header.at("variable").get<std::string>();
    g.units = header.value("units", "");
    const auto shape = header.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 3) throw DataError(reader.what() + ": header mismatch: shape must be [T,H,W]");
    steps = shape[0];
    g.height = shape[1];
    g.width = shape[2];
    for (const auto& m : header.at("months")) g.months.push_back(Month::parse(m.get<std::string>()));
    has_hole = header.at("masks").value("pole_hole", false);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(reader.what() + ": malformed header: " + e.what());
  }
  if (g.months.size() != steps) {
    throw DataError(reader.what() + ": header mismatch: shape declares " + std::to_string(steps) +
                    " months, month list has " + std::to_string(g.months.size()));
  }
  g.land.resize(g.cells());
  reader.array(std::span<std::uint8_t>(g.land));
  if (has_hole) {
    g.pole_hole.emplace(g.cells());
    reader.array(std::span<std::uint8_t>(*g.pole_hole));
  }
  const std::size_t field_bytes = g.cells() * sizeof(float);
  const std::size_t expected = steps * field_bytes;
  if (reader.remaining() != expected) {
    if (field_bytes == 0 || reader.remaining() % field_bytes != 0) {
      throw DataError(reader.what() + ": truncated payload (" + std::to_string(reader.remaining()) +
                      " of " + std::to_string(expected) + " bytes)");
    }
    throw DataError(reader.what() + ": header mismatch: header declares " + std::to_string(steps) +
                    " fields, payload holds " + std::to_string(reader.remaining() / field_bytes));
  }
  g.values.resize(steps * g.cells());
  reader.array(std::span<float>(g.values));
  g.validate();
  return g;
}

}  // namespace icemamba
