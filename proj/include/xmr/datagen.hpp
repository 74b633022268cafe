// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "xmr/augment.hpp"
#include "xmr/io.hpp"
#include "xmr/numerics.hpp"
#include "xmr/raster.hpp"

namespace xmr {

using TokenId = int;
using ImageId = std::uint32_t;

/// Closed word list shared by both branches. Id 0 is the mask token.
class Vocabulary {
 public:
  static const Vocabulary& standard();

  std::size_t size() const noexcept { return words_.size(); }
  const std::string& word(TokenId id) const { return words_.at(static_cast<std::size_t>(id)); }
  std::optional<TokenId> find(std::string_view word) const;
  /// Throws UnknownToken for words outside the vocabulary.
  TokenId id(std::string_view word) const;
  std::vector<TokenId> encode(const std::vector<std::string>& words) const;
  std::vector<std::string> decode(const std::vector<TokenId>& ids) const;

  static constexpr TokenId kMask = 0;

 private:
  explicit Vocabulary(std::vector<std::string> words);
  std::vector<std::string> words_;
};

/// Lower-cases, strips punctuation, splits on whitespace.
std::vector<std::string> tokenize(std::string_view text);
std::string join_words(const std::vector<std::string>& words);

/// Bitset over attribute indices. Index k is bit k.
struct AttributeSet {
  std::uint64_t bits = 0;

  bool has(int k) const { return (bits >> k) & 1U; }
  void set(int k) { bits |= std::uint64_t{1} << k; }
  int count() const { return __builtin_popcountll(bits); }
  bool empty() const { return bits == 0; }
  bool subset_of(AttributeSet other) const { return (bits & ~other.bits) == 0; }

  std::string to_hex() const;
  static AttributeSet from_hex(std::string_view hex);

  friend bool operator==(const AttributeSet&, const AttributeSet&) = default;
};

struct AttributeInfo {
  std::string name;
  std::vector<std::string> phrase;  // caption words for this attribute
  std::string key_word;             // the word predicted when the phrase is masked
};

class AttributeVocabulary {
 public:
  /// The first `q` entries of: glasses, long-sleeves, short-sleeves, hat, backpack,
  /// skirt, trousers, coat, mask, handbag, boots, umbrella.
  static AttributeVocabulary standard(int q = 12);

  int size() const noexcept { return static_cast<int>(items_.size()); }
  const AttributeInfo& at(int k) const { return items_.at(static_cast<std::size_t>(k)); }
  std::optional<int> index_of(std::string_view name) const;

 private:
  std::vector<AttributeInfo> items_;
};

/// "a man wearing <phrase> and <phrase> ..." in vocabulary order.
std::vector<std::string> caption_from_attributes(AttributeSet attrs, const AttributeVocabulary& vocab);

/// Replaces the words of attribute `k`'s phrase in `caption` with mask tokens.
/// Returns the masked words and the key word id to predict.
struct MaskedCaption {
  std::vector<TokenId> tokens;
  TokenId target = 0;
};
MaskedCaption mask_attribute(AttributeSet caption_attrs, int k, const AttributeVocabulary& vocab);

// ---------------------------------------------------------------------------

struct PedestrianSample {
  ImageId id = 0;
  std::vector<double> image_features;
  std::vector<TokenId> caption_tokens;
  AttributeSet image_attributes;
  AttributeSet caption_attributes;
};

struct VehicleTag {
  int color_id = 0;
  int type_id = 0;
  friend bool operator==(const VehicleTag&, const VehicleTag&) = default;
  friend auto operator<=>(const VehicleTag&, const VehicleTag&) = default;
};

struct VehicleSample {
  ImageId id = 0;
  Image image;
  std::vector<TokenId> caption_tokens;
  VehicleTag tag;
  Rgb true_body_color;
  Rect bbox;  // detector stand-in: vehicle bounding box
};

struct Query {
  std::uint32_t id = 0;  // the paired image id, unique across both domains
  std::vector<TokenId> tokens;
  ImageId paired_image = 0;
  std::vector<ImageId> ground_truth;  // ascending
  bool strict_subset = false;         // pedestrian slice
  bool confusable = false;            // vehicle slice
};

struct PedestrianConfig {
  int train_size = 512;
  int query_count = 128;
  int gallery_size = 128;
  int attribute_count = 12;
  int min_attributes = 2;
  int max_attributes = 5;
  int feature_dim = 48;
  double feature_noise = 0.1;
  double strict_subset_fraction = 0.3;
  double train_strict_subset_fraction = 0.3;
  double caption_keep_probability = 0.5;  // per attribute, for strict-subset captions
  ImageId id_base = 100000;

  void validate() const;
  Json to_json() const;
  static PedestrianConfig from_json(const Json& j);
};

struct VehicleTypeShape {
  std::string name;
  int body_width = 22;
  int body_height = 6;
  int cabin_width = 12;
  int cabin_height = 5;
  int cabin_offset = 5;
};

struct VehicleConfig {
  int train_size = 512;
  int query_count = 128;
  int gallery_size = 128;
  int noise = 12;
  double confusable_fraction = 0.4;
  Palette palette = Palette::standard();
  std::vector<VehicleTypeShape> types = default_vehicle_types();
  ImageId id_base = 200000;

  static std::vector<VehicleTypeShape> default_vehicle_types();
  void validate() const;
  Json to_json() const;
  static VehicleConfig from_json(const Json& j);
};

struct PedestrianDataset {
  PedestrianConfig config;
  std::uint64_t seed = 0;
  std::vector<PedestrianSample> train;
  std::vector<PedestrianSample> gallery;
  std::vector<Query> queries;
};

struct VehicleDataset {
  VehicleConfig config;
  std::uint64_t seed = 0;
  std::vector<VehicleSample> train;
  std::vector<VehicleSample> gallery;
  std::vector<Query> queries;
};

PedestrianDataset generate_pedestrian_dataset(const PedestrianConfig& config, std::uint64_t seed);
VehicleDataset generate_vehicle_dataset(const VehicleConfig& config, std::uint64_t seed);

/// Single vehicle, exposed for tests and the augment tool.
VehicleSample generate_vehicle_sample(const VehicleConfig& config, VehicleTag tag, Rng rng, ImageId id);

/// white, silver or gray.
bool is_confusable_color(const Palette& palette, int color_id);

std::vector<std::string> vehicle_caption(VehicleTag tag, const VehicleConfig& config);

}  // namespace xmr
