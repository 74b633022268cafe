// SPDX-License-Identifier: Apache-2.0
#include "xmr/augment.hpp"

#include <algorithm>
#include <set>

#include "xmr/error.hpp"

namespace xmr {

Palette::Palette(std::vector<PaletteEntry> entries) : entries_(std::move(entries)) {
  if (entries_.size() < 2) throw Error(ErrorCode::ConfigInvalid, "palette needs at least 2 entries");
  std::set<int> ids;
  std::set<std::tuple<int, int, int>> colors;
  std::set<std::string> names;
  for (const auto& e : entries_) {
    if (!ids.insert(e.id).second) throw Error(ErrorCode::ConfigInvalid, "duplicate palette id");
    if (!colors.insert({e.rgb.r, e.rgb.g, e.rgb.b}).second) {
      throw Error(ErrorCode::ConfigInvalid, "duplicate palette color");
    }
    if (!names.insert(e.name).second) throw Error(ErrorCode::ConfigInvalid, "duplicate palette name");
  }
  std::sort(entries_.begin(), entries_.end(),
            [](const PaletteEntry& a, const PaletteEntry& b) { return a.id < b.id; });
}

Palette Palette::standard() {
  return Palette({
      {0, "white", {240, 240, 240}},
      {1, "silver", {190, 190, 195}},
      {2, "gray", {128, 128, 128}},
      {3, "black", {20, 20, 20}},
      {4, "red", {200, 30, 30}},
      {5, "blue", {30, 60, 200}},
      {6, "green", {30, 160, 60}},
      {7, "yellow", {230, 200, 40}},
  });
}

Palette Palette::from_json(const Json& j) {
  if (!j.is_array()) throw Error(ErrorCode::ConfigInvalid, "palette must be an array");
  std::vector<PaletteEntry> entries;
  for (const auto& e : j) {
    reject_unknown_keys(e, {"id", "name", "rgb"}, "palette entry");
    const auto rgb = e.at("rgb").get<std::vector<int>>();
    if (rgb.size() != 3 || std::any_of(rgb.begin(), rgb.end(), [](int c) { return c < 0 || c > 255; })) {
      throw Error(ErrorCode::ConfigInvalid, "palette rgb must be three values in [0, 255]");
    }
    entries.push_back({e.at("id").get<int>(), e.at("name").get<std::string>(),
                       {static_cast<std::uint8_t>(rgb[0]), static_cast<std::uint8_t>(rgb[1]),
                        static_cast<std::uint8_t>(rgb[2])}});
  }
  return Palette(std::move(entries));
}

Json Palette::to_json() const {
  Json out = Json::array();
  for (const auto& e : entries_) {
    out.push_back({{"id", e.id}, {"name", e.name}, {"rgb", {e.rgb.r, e.rgb.g, e.rgb.b}}});
  }
  return out;
}

const PaletteEntry& Palette::by_id(int id) const {
  for (const auto& e : entries_)
    if (e.id == id) return e;
  throw Error(ErrorCode::ConfigInvalid, "unknown palette id " + std::to_string(id));
}

std::optional<int> Palette::id_of(std::string_view name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.id;
  return std::nullopt;
}

const PaletteEntry& Palette::nearest(Rgb c) const {
  const PaletteEntry* best = nullptr;
  int best_d = 0;
  for (const auto& e : entries_) {  // sorted by id, strict < keeps the lowest id on ties
    const int dr = int{c.r} - e.rgb.r;
    const int dg = int{c.g} - e.rgb.g;
    const int db = int{c.b} - e.rgb.b;
    const int d = dr * dr + dg * dg + db * db;
    if (best == nullptr || d < best_d) {
      best = &e;
      best_d = d;
    }
  }
  return *best;
}

DetectedColor dominant_color(const Image& image, const Palette& palette,
                             const std::optional<Rect>& region) {
  if (image.empty()) throw Error(ErrorCode::EmptyImage, "dominant_color on empty image");
  Rect r = region.value_or(Rect{0, 0, image.width(), image.height()});
  const int x0 = std::max(r.x, 0);
  const int y0 = std::max(r.y, 0);
  const int x1 = std::min(r.x + r.width, image.width());
  const int y1 = std::min(r.y + r.height, image.height());
  if (x1 <= x0 || y1 <= y0) throw Error(ErrorCode::EmptyImage, "detection region has no pixels");

  std::vector<long> counts(palette.size(), 0);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      const auto& e = palette.nearest(image.at(x, y));
      const auto idx = static_cast<std::size_t>(&e - palette.entries().data());
      ++counts[idx];
    }
  std::size_t best = 0;
  for (std::size_t i = 1; i < counts.size(); ++i)
    if (counts[i] > counts[best]) best = i;
  const auto& e = palette.entries()[best];
  return {e.id, e.rgb};
}

Image apply_color_patch(const Image& image, Rgb rgb, const PatchSpec& spec) {
  if (spec.side < 1 || spec.side > image.width() || spec.side > image.height()) {
    throw Error(ErrorCode::PatchOutOfBounds,
                "patch side " + std::to_string(spec.side) + " does not fit the image");
  }
  Image out = image;
  for (int y = 0; y < spec.side; ++y)
    for (int x = 0; x < spec.side; ++x) out.set(x, y, rgb);
  return out;
}

PatchSpec default_patch_for(const Image& image) {
  return {std::min(image.width(), image.height()) / kFeatureGrid};
}

std::vector<double> image_to_features(const Image& image) {
  if (image.width() != kImageSide || image.height() != kImageSide) {
    throw Error(ErrorCode::DimensionMismatch, "image features expect a 32x32 raster");
  }
  constexpr int block = kImageSide / kFeatureGrid;
  std::vector<double> features(kImageFeatureDim, 0.0);
  for (int by = 0; by < kFeatureGrid; ++by)
    for (int bx = 0; bx < kFeatureGrid; ++bx) {
      double sum[3] = {0.0, 0.0, 0.0};
      for (int y = by * block; y < (by + 1) * block; ++y)
        for (int x = bx * block; x < (bx + 1) * block; ++x) {
          const Rgb c = image.at(x, y);
          sum[0] += c.r;
          sum[1] += c.g;
          sum[2] += c.b;
        }
      const auto base = static_cast<std::size_t>((by * kFeatureGrid + bx) * 3);
      for (int ch = 0; ch < 3; ++ch) features[base + ch] = sum[ch] / (block * block * 255.0);
    }
  return features;
}

}  // namespace xmr
