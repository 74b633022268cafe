// SPDX-License-Identifier: Apache-2.0
#include "xmr/datagen.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "xmr/error.hpp"

namespace xmr {

namespace {

const std::vector<AttributeInfo>& all_attributes() {
  static const std::vector<AttributeInfo> items = {
      {"glasses", {"glasses"}, "glasses"},
      {"long-sleeves", {"long", "sleeves"}, "long"},
      {"short-sleeves", {"short", "sleeves"}, "short"},
      {"hat", {"a", "hat"}, "hat"},
      {"backpack", {"a", "backpack"}, "backpack"},
      {"skirt", {"a", "skirt"}, "skirt"},
      {"trousers", {"trousers"}, "trousers"},
      {"coat", {"a", "coat"}, "coat"},
      {"mask", {"a", "mask"}, "mask"},
      {"handbag", {"a", "handbag"}, "handbag"},
      {"boots", {"boots"}, "boots"},
      {"umbrella", {"an", "umbrella"}, "umbrella"},
  };
  return items;
}

std::uint8_t clamp_byte(int v) { return static_cast<std::uint8_t>(std::clamp(v, 0, 255)); }

Rgb jitter(Rgb c, int radius, Rng& rng) {
  if (radius == 0) return c;
  const auto span = static_cast<std::uint64_t>(2 * radius + 1);
  const int dr = static_cast<int>(rng.below(span)) - radius;
  const int dg = static_cast<int>(rng.below(span)) - radius;
  const int db = static_cast<int>(rng.below(span)) - radius;
  return {clamp_byte(c.r + dr), clamp_byte(c.g + dg), clamp_byte(c.b + db)};
}

Rgb background_at(int x, int y) {
  return ((x + y) / 3) % 2 == 0 ? Rgb{70, 72, 78} : Rgb{96, 92, 88};
}

void check(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::ConfigInvalid, what);
}

}  // namespace

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {}

const Vocabulary& Vocabulary::standard() {
  static const Vocabulary vocab = [] {
    std::vector<std::string> words = {"<mask>", "a", "an", "man", "woman", "person", "wearing", "and"};
    for (const auto& a : all_attributes())
      for (const auto& w : a.phrase)
        if (std::find(words.begin(), words.end(), w) == words.end()) words.push_back(w);
    const Palette palette = Palette::standard();
    for (const auto& e : palette.entries()) words.push_back(e.name);
    for (const auto& t : VehicleConfig::default_vehicle_types()) words.push_back(t.name);
    for (const char* w : {"car", "vehicle"}) words.emplace_back(w);
    return Vocabulary(std::move(words));
  }();
  return vocab;
}

std::optional<TokenId> Vocabulary::find(std::string_view word) const {
  const auto it = std::find(words_.begin(), words_.end(), word);
  if (it == words_.end()) return std::nullopt;
  return static_cast<TokenId>(it - words_.begin());
}

TokenId Vocabulary::id(std::string_view word) const {
  if (auto found = find(word)) return *found;
  throw Error(ErrorCode::UnknownToken, "'" + std::string(word) + "' is not in the vocabulary");
}

std::vector<TokenId> Vocabulary::encode(const std::vector<std::string>& words) const {
  std::vector<TokenId> ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(id(w));
  return ids;
}

std::vector<std::string> Vocabulary::decode(const std::vector<TokenId>& ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (TokenId t : ids) {
    if (t < 0 || static_cast<std::size_t>(t) >= words_.size()) {
      throw Error(ErrorCode::UnknownToken, "token id out of range");
    }
    out.push_back(words_[static_cast<std::size_t>(t)]);
  }
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || ch == '-' || ch == '<' || ch == '>') {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      words.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Attributes

std::string AttributeSet::to_hex() const {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 0; i < 16; ++i) out[15 - i] = kHex[(bits >> (4 * i)) & 0xF];
  // trim to the shortest even-length form, at least 4 digits
  const auto first = out.find_first_not_of('0');
  std::size_t keep = first == std::string::npos ? 4 : std::max<std::size_t>(4, 16 - first);
  keep += keep % 2;
  return out.substr(16 - keep);
}

AttributeSet AttributeSet::from_hex(std::string_view hex) {
  if (hex.empty() || hex.size() > 16) throw Error(ErrorCode::Io, "bad attribute hex");
  AttributeSet a;
  for (char c : hex) {
    int v;
    if (c >= '0' && c <= '9') v = c - '0';
    else if (c >= 'a' && c <= 'f') v = c - 'a' + 10;
    else if (c >= 'A' && c <= 'F') v = c - 'A' + 10;
    else throw Error(ErrorCode::Io, "bad attribute hex digit");
    a.bits = (a.bits << 4) | static_cast<std::uint64_t>(v);
  }
  return a;
}

AttributeVocabulary AttributeVocabulary::standard(int q) {
  const auto& all = all_attributes();
  if (q < 2 || q > static_cast<int>(all.size())) {
    throw Error(ErrorCode::ConfigInvalid, "attribute count must be in [2, 12]");
  }
  AttributeVocabulary v;
  v.items_.assign(all.begin(), all.begin() + q);
  return v;
}

std::optional<int> AttributeVocabulary::index_of(std::string_view name) const {
  for (std::size_t k = 0; k < items_.size(); ++k)
    if (items_[k].name == name) return static_cast<int>(k);
  return std::nullopt;
}

std::vector<std::string> caption_from_attributes(AttributeSet attrs, const AttributeVocabulary& vocab) {
  if (attrs.empty()) throw Error(ErrorCode::EmptyAttributeSet, "caption needs at least one attribute");
  std::vector<std::string> words = {"a", "man", "wearing"};
  bool first = true;
  for (int k = 0; k < vocab.size(); ++k) {
    if (!attrs.has(k)) continue;
    if (!first) words.emplace_back("and");
    first = false;
    const auto& phrase = vocab.at(k).phrase;
    words.insert(words.end(), phrase.begin(), phrase.end());
  }
  if (first) throw Error(ErrorCode::EmptyAttributeSet, "no attribute bits inside the vocabulary");
  return words;
}

MaskedCaption mask_attribute(AttributeSet caption_attrs, int k, const AttributeVocabulary& vocab) {
  if (!caption_attrs.has(k)) throw Error(ErrorCode::NoMaskPresent, "masked attribute not in caption");
  const auto& words_vocab = Vocabulary::standard();
  std::vector<TokenId> tokens = {words_vocab.id("a"), words_vocab.id("man"), words_vocab.id("wearing")};
  bool first = true;
  for (int j = 0; j < vocab.size(); ++j) {
    if (!caption_attrs.has(j)) continue;
    if (!first) tokens.push_back(words_vocab.id("and"));
    first = false;
    for (const auto& w : vocab.at(j).phrase) {
      tokens.push_back(j == k ? Vocabulary::kMask : words_vocab.id(w));
    }
  }
  return {std::move(tokens), words_vocab.id(vocab.at(k).key_word)};
}

// ---------------------------------------------------------------------------
// Configs

void PedestrianConfig::validate() const {
  check(train_size >= 8 && query_count >= 8 && gallery_size >= 8, "dataset sizes must be >= 8");
  check(gallery_size >= query_count, "gallery_size must be >= query_count");
  check(attribute_count >= 2 && attribute_count <= 12, "attribute_count must be in [2, 12]");
  check(min_attributes >= 2 && min_attributes <= max_attributes && max_attributes <= attribute_count,
        "need 2 <= min_attributes <= max_attributes <= attribute_count");
  check(feature_dim >= 1, "feature_dim must be positive");
  check(feature_noise >= 0.0, "feature_noise must be non-negative");
  check(strict_subset_fraction >= 0.0 && strict_subset_fraction <= 1.0, "strict_subset_fraction in [0, 1]");
  check(caption_keep_probability > 0.0 && caption_keep_probability < 1.0, "caption_keep_probability in (0, 1)");
  check(train_strict_subset_fraction >= 0.0 && train_strict_subset_fraction <= 1.0,
        "train_strict_subset_fraction in [0, 1]");
}

Json PedestrianConfig::to_json() const {
  return {{"train_size", train_size},
          {"query_count", query_count},
          {"gallery_size", gallery_size},
          {"attribute_count", attribute_count},
          {"min_attributes", min_attributes},
          {"max_attributes", max_attributes},
          {"feature_dim", feature_dim},
          {"feature_noise", feature_noise},
          {"strict_subset_fraction", strict_subset_fraction},
          {"train_strict_subset_fraction", train_strict_subset_fraction},
          {"caption_keep_probability", caption_keep_probability},
          {"id_base", id_base}};
}

PedestrianConfig PedestrianConfig::from_json(const Json& j) {
  reject_unknown_keys(j,
                      {"train_size", "query_count", "gallery_size", "attribute_count", "min_attributes",
                       "max_attributes", "feature_dim", "feature_noise", "strict_subset_fraction",
                       "train_strict_subset_fraction", "caption_keep_probability", "id_base"},
                      "pedestrian dataset config");
  PedestrianConfig c;
  c.train_size = j.value("train_size", c.train_size);
  c.query_count = j.value("query_count", c.query_count);
  c.gallery_size = j.value("gallery_size", c.gallery_size);
  c.attribute_count = j.value("attribute_count", c.attribute_count);
  c.min_attributes = j.value("min_attributes", c.min_attributes);
  c.max_attributes = j.value("max_attributes", c.max_attributes);
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.feature_noise = j.value("feature_noise", c.feature_noise);
  c.strict_subset_fraction = j.value("strict_subset_fraction", c.strict_subset_fraction);
  c.train_strict_subset_fraction = j.value("train_strict_subset_fraction", c.train_strict_subset_fraction);
  c.caption_keep_probability = j.value("caption_keep_probability", c.caption_keep_probability);
  c.id_base = j.value("id_base", c.id_base);
  c.validate();
  return c;
}

std::vector<VehicleTypeShape> VehicleConfig::default_vehicle_types() {
  return {
      {"audi", 24, 6, 12, 4, 6},
      {"bmw", 20, 7, 10, 5, 3},
      {"truck", 26, 8, 8, 8, 0},
      {"van", 24, 11, 24, 5, 0},
      {"suv", 22, 9, 18, 6, 2},
      {"sedan", 22, 6, 14, 5, 4},
  };
}

void VehicleConfig::validate() const {
  check(train_size >= 8 && query_count >= 8 && gallery_size >= 8, "dataset sizes must be >= 8");
  check(gallery_size >= query_count, "gallery_size must be >= query_count");
  check(noise >= 0 && noise <= 64, "noise must be in [0, 64]");
  check(confusable_fraction >= 0.0 && confusable_fraction <= 1.0, "confusable_fraction in [0, 1]");
  check(palette.size() >= 2, "palette needs at least 2 colors");
  check(types.size() >= 2, "need at least 2 vehicle types");
  for (const auto& t : types) {
    const int width = std::max(t.body_width, t.cabin_offset + t.cabin_width);
    const int height = t.cabin_height + t.body_height + 2;
    check(t.body_width >= 8 && t.body_height >= 2 && t.cabin_width >= 3 && t.cabin_height >= 2,
          "vehicle type '" + t.name + "' is too small");
    check(width <= kImageSide - 2 && height <= kImageSide - 10,
          "vehicle type '" + t.name + "' does not fit below the prompt corner");
  }
}

Json VehicleConfig::to_json() const {
  Json types_json = Json::array();
  for (const auto& t : types) {
    types_json.push_back({{"name", t.name},
                          {"body_width", t.body_width},
                          {"body_height", t.body_height},
                          {"cabin_width", t.cabin_width},
                          {"cabin_height", t.cabin_height},
                          {"cabin_offset", t.cabin_offset}});
  }
  return {{"train_size", train_size},       {"query_count", query_count},
          {"gallery_size", gallery_size},   {"noise", noise},
          {"confusable_fraction", confusable_fraction},
          {"palette", palette.to_json()},   {"types", types_json},
          {"id_base", id_base}};
}

VehicleConfig VehicleConfig::from_json(const Json& j) {
  reject_unknown_keys(j,
                      {"train_size", "query_count", "gallery_size", "noise", "confusable_fraction",
                       "palette", "types", "id_base"},
                      "vehicle dataset config");
  VehicleConfig c;
  c.train_size = j.value("train_size", c.train_size);
  c.query_count = j.value("query_count", c.query_count);
  c.gallery_size = j.value("gallery_size", c.gallery_size);
  c.noise = j.value("noise", c.noise);
  c.confusable_fraction = j.value("confusable_fraction", c.confusable_fraction);
  if (j.contains("palette")) c.palette = Palette::from_json(j.at("palette"));
  if (j.contains("types")) {
    c.types.clear();
    for (const auto& t : j.at("types")) {
      reject_unknown_keys(t, {"name", "body_width", "body_height", "cabin_width", "cabin_height", "cabin_offset"},
                          "vehicle type");
      c.types.push_back({t.at("name").get<std::string>(), t.at("body_width").get<int>(),
                         t.at("body_height").get<int>(), t.at("cabin_width").get<int>(),
                         t.at("cabin_height").get<int>(), t.at("cabin_offset").get<int>()});
    }
  }
  c.id_base = j.value("id_base", c.id_base);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Pedestrian generation

namespace {

AttributeSet draw_image_attributes(const PedestrianConfig& c, Rng& rng) {
  const int k = c.min_attributes + static_cast<int>(rng.below(c.max_attributes - c.min_attributes + 1));
  std::vector<int> indices(static_cast<std::size_t>(c.attribute_count));
  for (int i = 0; i < c.attribute_count; ++i) indices[static_cast<std::size_t>(i)] = i;
  rng.shuffle(indices);
  AttributeSet a;
  for (int i = 0; i < k; ++i) a.set(indices[static_cast<std::size_t>(i)]);
  return a;
}

// Per-bit coin flips; draws that violate the requested shape are discarded and
// redrawn, so an empty caption is never emitted.
AttributeSet draw_caption_attributes(AttributeSet image, bool strict, double keep, Rng& rng) {
  if (!strict) return image;
  for (;;) {
    AttributeSet c;
    for (int k = 0; k < 64; ++k)
      if (image.has(k) && rng.bernoulli(keep)) c.set(k);
    if (!c.empty() && c != image) return c;
  }
}

PedestrianSample make_pedestrian(const PedestrianConfig& c, const Matrix& mixing,
                                 const AttributeVocabulary& attrs, double strict_fraction, Rng rng,
                                 ImageId id) {
  PedestrianSample s;
  s.id = id;
  s.image_attributes = draw_image_attributes(c, rng);
  const bool strict = rng.bernoulli(strict_fraction);
  s.caption_attributes = draw_caption_attributes(s.image_attributes, strict, c.caption_keep_probability, rng);
  s.caption_tokens = Vocabulary::standard().encode(caption_from_attributes(s.caption_attributes, attrs));
  s.image_features.assign(static_cast<std::size_t>(c.feature_dim), 0.0);
  for (int d = 0; d < c.feature_dim; ++d) {
    double v = 0.0;
    for (int k = 0; k < c.attribute_count; ++k)
      if (s.image_attributes.has(k)) v += mixing(static_cast<std::size_t>(d), static_cast<std::size_t>(k));
    s.image_features[static_cast<std::size_t>(d)] = v + c.feature_noise * rng.normal();
  }
  return s;
}

}  // namespace

PedestrianDataset generate_pedestrian_dataset(const PedestrianConfig& config, std::uint64_t seed) {
  config.validate();
  const Rng root(seed);
  const auto attrs = AttributeVocabulary::standard(config.attribute_count);

  Matrix mixing(static_cast<std::size_t>(config.feature_dim), static_cast<std::size_t>(config.attribute_count));
  Rng mix_rng = root.child("mixing");
  for (double& v : mixing.values()) v = mix_rng.normal();

  PedestrianDataset ds;
  ds.config = config;
  ds.seed = seed;
  ImageId next = config.id_base;
  for (int i = 0; i < config.train_size; ++i) {
    ds.train.push_back(make_pedestrian(config, mixing, attrs, config.train_strict_subset_fraction,
                                       root.child("train", static_cast<std::uint64_t>(i)), next++));
  }
  for (int i = 0; i < config.gallery_size; ++i) {
    // only the first query_count gallery images carry a query caption; the
    // rest are distractors whose captions are never used
    ds.gallery.push_back(make_pedestrian(config, mixing, attrs, config.strict_subset_fraction,
                                         root.child("gallery", static_cast<std::uint64_t>(i)), next++));
  }
  for (int i = 0; i < config.query_count; ++i) {
    const auto& paired = ds.gallery[static_cast<std::size_t>(i)];
    Query q;
    q.id = paired.id;
    q.tokens = paired.caption_tokens;
    q.paired_image = paired.id;
    q.strict_subset = paired.caption_attributes != paired.image_attributes;
    // relevant: every gallery image that has all the attributes the caption names
    for (const auto& g : ds.gallery)
      if (paired.caption_attributes.subset_of(g.image_attributes)) q.ground_truth.push_back(g.id);
    ds.queries.push_back(std::move(q));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Vehicle generation

bool is_confusable_color(const Palette& palette, int color_id) {
  const auto& name = palette.by_id(color_id).name;
  return name == "white" || name == "silver" || name == "gray";
}

std::vector<std::string> vehicle_caption(VehicleTag tag, const VehicleConfig& config) {
  return {"a", config.palette.by_id(tag.color_id).name,
          config.types.at(static_cast<std::size_t>(tag.type_id)).name};
}

VehicleSample generate_vehicle_sample(const VehicleConfig& config, VehicleTag tag, Rng rng, ImageId id) {
  const auto& shape = config.types.at(static_cast<std::size_t>(tag.type_id));
  const Rgb paint = config.palette.by_id(tag.color_id).rgb;

  VehicleSample s;
  s.id = id;
  s.tag = tag;
  s.true_body_color = paint;
  s.caption_tokens = Vocabulary::standard().encode(vehicle_caption(tag, config));

  const int width = std::max(shape.body_width, shape.cabin_offset + shape.cabin_width);
  const int height = shape.cabin_height + shape.body_height + 2;
  const int x0 = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(kImageSide - width - 1)));
  const int y0 = 9 + static_cast<int>(rng.below(static_cast<std::uint64_t>(kImageSide - height - 9)));
  s.bbox = {x0, y0, width, height};

  // glass reflects either a dark interior or a bright sky
  const bool bright_glass = rng.bernoulli(0.5);
  const Rgb glass = bright_glass ? Rgb{215, 225, 240} : Rgb{45, 50, 62};

  Image img(kImageSide, kImageSide);
  for (int y = 0; y < kImageSide; ++y)
    for (int x = 0; x < kImageSide; ++x) img.set(x, y, background_at(x, y));

  const Rect cabin{x0 + shape.cabin_offset, y0, shape.cabin_width, shape.cabin_height};
  const Rect body{x0, y0 + shape.cabin_height, shape.body_width, shape.body_height};
  for (int y = cabin.y; y < cabin.y + cabin.height; ++y)
    for (int x = cabin.x; x < cabin.x + cabin.width; ++x) {
      const bool frame = y == cabin.y || x == cabin.x || x == cabin.x + cabin.width - 1;
      img.set(x, y, jitter(frame ? paint : glass, config.noise, rng));
    }
  for (int y = body.y; y < body.y + body.height; ++y)
    for (int x = body.x; x < body.x + body.width; ++x) img.set(x, y, jitter(paint, config.noise, rng));
  const Rgb tyre{25, 25, 25};
  const int wheel_y = body.y + body.height;
  for (int y = wheel_y; y < wheel_y + 2; ++y)
    for (int dx = 0; dx < 4; ++dx) {
      img.set(body.x + 2 + dx, y, tyre);
      img.set(body.x + body.width - 6 + dx, y, tyre);
    }
  s.image = std::move(img);
  return s;
}

VehicleDataset generate_vehicle_dataset(const VehicleConfig& config, std::uint64_t seed) {
  config.validate();
  const auto& vocab = Vocabulary::standard();
  for (const auto& e : config.palette.entries()) vocab.id(e.name);
  for (const auto& t : config.types) vocab.id(t.name);

  std::vector<int> confusable;
  std::vector<int> other;
  for (const auto& e : config.palette.entries())
    (is_confusable_color(config.palette, e.id) ? confusable : other).push_back(e.id);
  if (confusable.empty() || other.empty()) {
    throw Error(ErrorCode::ConfigInvalid, "palette needs both confusable and distinct colors");
  }

  const Rng root(seed);
  auto draw = [&](Rng rng, ImageId id) {
    VehicleTag tag;
    const auto& pool = rng.bernoulli(config.confusable_fraction) ? confusable : other;
    tag.color_id = pool[rng.below(pool.size())];
    tag.type_id = static_cast<int>(rng.below(config.types.size()));
    return generate_vehicle_sample(config, tag, rng.child("raster"), id);
  };

  VehicleDataset ds;
  ds.config = config;
  ds.seed = seed;
  ImageId next = config.id_base;
  for (int i = 0; i < config.train_size; ++i)
    ds.train.push_back(draw(root.child("train", static_cast<std::uint64_t>(i)), next++));
  for (int i = 0; i < config.gallery_size; ++i)
    ds.gallery.push_back(draw(root.child("gallery", static_cast<std::uint64_t>(i)), next++));
  for (int i = 0; i < config.query_count; ++i) {
    const auto& paired = ds.gallery[static_cast<std::size_t>(i)];
    Query q;
    q.id = paired.id;
    q.tokens = paired.caption_tokens;
    q.paired_image = paired.id;
    q.confusable = is_confusable_color(config.palette, paired.tag.color_id);
    for (const auto& g : ds.gallery)
      if (g.tag == paired.tag) q.ground_truth.push_back(g.id);
    ds.queries.push_back(std::move(q));
  }
  return ds;
}

}  // namespace xmr
