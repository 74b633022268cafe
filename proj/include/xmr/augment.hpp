// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "xmr/io.hpp"
#include "xmr/raster.hpp"

namespace xmr {

struct PaletteEntry {
  int id = 0;
  std::string name;
  Rgb rgb;
};

/// Named reference colors. Ids and RGB values are unique.
class Palette {
 public:
  explicit Palette(std::vector<PaletteEntry> entries);

  /// white, silver, gray, black, red, blue, green, yellow
  static Palette standard();
  static Palette from_json(const Json& j);
  Json to_json() const;

  const std::vector<PaletteEntry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  const PaletteEntry& by_id(int id) const;
  std::optional<int> id_of(std::string_view name) const;

  /// Nearest entry by squared RGB distance; ties go to the lowest id.
  const PaletteEntry& nearest(Rgb c) const;

 private:
  std::vector<PaletteEntry> entries_;
};

struct PatchSpec {
  int side = 8;
};

struct DetectedColor {
  int color_id = 0;
  Rgb rgb;
};

/// Modal palette entry over the pixels of `region` (whole image when absent).
DetectedColor dominant_color(const Image& image, const Palette& palette,
                             const std::optional<Rect>& region = std::nullopt);

/// Copy of `image` with the top-left side×side block painted `rgb`.
Image apply_color_patch(const Image& image, Rgb rgb, const PatchSpec& spec);

/// Default patch covers one cell of the 4×4 feature grid.
PatchSpec default_patch_for(const Image& image);

/// 4×4 grid of block means per channel, scaled to [0, 1]. Layout is
/// block-major: feature[(by * 4 + bx) * 3 + channel].
std::vector<double> image_to_features(const Image& image);

inline constexpr int kImageSide = 32;
inline constexpr int kFeatureGrid = 4;
inline constexpr int kImageFeatureDim = kFeatureGrid * kFeatureGrid * 3;

}  // namespace xmr
