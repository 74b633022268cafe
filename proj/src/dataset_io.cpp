// SPDX-License-Identifier: Apache-2.0
#include "xmr/dataset_io.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include "xmr/error.hpp"
#include "xmr/io.hpp"

namespace xmr {

namespace fs = std::filesystem;

std::string_view task_name(Task task) { return task == Task::Pedestrian ? "ped" : "veh"; }

Task parse_task(std::string_view name) {
  if (name == "ped" || name == "pedestrian") return Task::Pedestrian;
  if (name == "veh" || name == "vehicle") return Task::Vehicle;
  throw Error(ErrorCode::ConfigInvalid, "task must be ped or veh, got '" + std::string(name) + "'");
}

namespace {

Json vocabulary_json() {
  const auto& v = Vocabulary::standard();
  Json words = Json::array();
  for (std::size_t i = 0; i < v.size(); ++i) words.push_back(v.word(static_cast<TokenId>(i)));
  return words;
}

void check_vocabulary(const Json& words) {
  if (words != vocabulary_json()) {
    throw Error(ErrorCode::Io, "dataset vocabulary differs from the built-in vocabulary");
  }
}

std::string caption_text(const std::vector<TokenId>& tokens) {
  return join_words(Vocabulary::standard().decode(tokens));
}

Json query_json(const Query& q) {
  return {{"id", q.id},
          {"split", "query"},
          {"caption", caption_text(q.tokens)},
          {"tokens", q.tokens},
          {"paired_image", q.paired_image},
          {"ground_truth", q.ground_truth},
          {"strict_subset", q.strict_subset},
          {"confusable", q.confusable}};
}

Query query_from_json(const Json& j) {
  Query q;
  q.id = j.at("id").get<std::uint32_t>();
  q.tokens = j.at("tokens").get<std::vector<TokenId>>();
  q.paired_image = j.at("paired_image").get<ImageId>();
  q.ground_truth = j.at("ground_truth").get<std::vector<ImageId>>();
  q.strict_subset = j.at("strict_subset").get<bool>();
  q.confusable = j.at("confusable").get<bool>();
  return q;
}

std::vector<Json> read_jsonl(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::vector<Json> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(Json::parse(line));
  }
  return out;
}

void write_jsonl(const fs::path& path, const std::vector<Json>& records) {
  std::string text;
  for (const auto& r : records) {
    text += r.dump();
    text.push_back('\n');
  }
  write_text(path, text);
}

std::string raster_name(ImageId id) { return "rasters/" + std::to_string(id) + ".ppm"; }

}  // namespace

void save_dataset(const fs::path& dir, const PedestrianDataset& ds) {
  fs::create_directories(dir);
  std::vector<Json> records;
  std::vector<double> features;
  std::size_t row = 0;
  auto emit = [&](const PedestrianSample& s, const char* split) {
    records.push_back({{"id", s.id},
                       {"split", split},
                       {"caption", caption_text(s.caption_tokens)},
                       {"tokens", s.caption_tokens},
                       {"image_attrs", s.image_attributes.to_hex()},
                       {"caption_attrs", s.caption_attributes.to_hex()},
                       {"tag", nullptr},
                       {"image", {{"features_row", row++}}}});
    features.insert(features.end(), s.image_features.begin(), s.image_features.end());
  };
  for (const auto& s : ds.train) emit(s, "train");
  for (const auto& s : ds.gallery) emit(s, "gallery");
  for (const auto& q : ds.queries) records.push_back(query_json(q));
  write_jsonl(dir / "samples.jsonl", records);

  const auto bytes = encode_f64(features);
  write_bytes(dir / "features.f64", bytes);
  const Json features_manifest = {{"file", "features.f64"},
                                  {"dims", ds.config.feature_dim},
                                  {"count", row},
                                  {"dtype", "float64-le"},
                                  {"sha256", sha256_hex(bytes)}};
  write_text(dir / "features.json", features_manifest.dump(2) + "\n");

  const auto attrs = AttributeVocabulary::standard(ds.config.attribute_count);
  Json attr_names = Json::array();
  for (int k = 0; k < attrs.size(); ++k) attr_names.push_back(attrs.at(k).name);
  const Json manifest = {{"task", "ped"},
                         {"seed", ds.seed},
                         {"config", ds.config.to_json()},
                         {"attributes", attr_names},
                         {"vocabulary", vocabulary_json()}};
  write_text(dir / "dataset.json", manifest.dump(2) + "\n");
}

void save_dataset(const fs::path& dir, const VehicleDataset& ds) {
  fs::create_directories(dir / "rasters");
  std::vector<Json> records;
  auto emit = [&](const VehicleSample& s, const char* split) {
    const auto& color = ds.config.palette.by_id(s.tag.color_id);
    const auto& type = ds.config.types.at(static_cast<std::size_t>(s.tag.type_id));
    records.push_back({{"id", s.id},
                       {"split", split},
                       {"caption", caption_text(s.caption_tokens)},
                       {"tokens", s.caption_tokens},
                       {"image_attrs", nullptr},
                       {"caption_attrs", nullptr},
                       {"tag",
                        {{"color_id", s.tag.color_id},
                         {"type_id", s.tag.type_id},
                         {"name", color.name + " " + type.name}}},
                       {"true_body_color", {s.true_body_color.r, s.true_body_color.g, s.true_body_color.b}},
                       {"bbox", {s.bbox.x, s.bbox.y, s.bbox.width, s.bbox.height}},
                       {"image", raster_name(s.id)}});
    write_ppm(dir / raster_name(s.id), s.image);
  };
  for (const auto& s : ds.train) emit(s, "train");
  for (const auto& s : ds.gallery) emit(s, "gallery");
  for (const auto& q : ds.queries) records.push_back(query_json(q));
  write_jsonl(dir / "samples.jsonl", records);

  const Json manifest = {{"task", "veh"},
                         {"seed", ds.seed},
                         {"config", ds.config.to_json()},
                         {"vocabulary", vocabulary_json()}};
  write_text(dir / "dataset.json", manifest.dump(2) + "\n");
}

Task dataset_task(const fs::path& dir) {
  if (!fs::exists(dir / "dataset.json")) {
    throw Error(ErrorCode::Io, "no dataset.json in " + dir.string());
  }
  return parse_task(Json::parse(read_text(dir / "dataset.json")).at("task").get<std::string>());
}

AnyDataset load_dataset(const fs::path& dir) {
  const Json manifest = Json::parse(read_text(dir / "dataset.json"));
  check_vocabulary(manifest.at("vocabulary"));
  const auto task = parse_task(manifest.at("task").get<std::string>());
  const auto seed = manifest.at("seed").get<std::uint64_t>();
  const auto records = read_jsonl(dir / "samples.jsonl");

  if (task == Task::Pedestrian) {
    PedestrianDataset ds;
    ds.seed = seed;
    ds.config = PedestrianConfig::from_json(manifest.at("config"));
    const Json fm = Json::parse(read_text(dir / "features.json"));
    const auto bytes = read_bytes(dir / fm.at("file").get<std::string>());
    if (sha256_hex(bytes) != fm.at("sha256").get<std::string>()) {
      throw Error(ErrorCode::Io, "features.f64 does not match its manifest hash");
    }
    const auto values = decode_f64(bytes);
    const auto dims = fm.at("dims").get<std::size_t>();
    if (values.size() != dims * fm.at("count").get<std::size_t>()) {
      throw Error(ErrorCode::Io, "features.f64 size does not match manifest");
    }
    for (const auto& r : records) {
      const auto split = r.at("split").get<std::string>();
      if (split == "query") {
        ds.queries.push_back(query_from_json(r));
        continue;
      }
      PedestrianSample s;
      s.id = r.at("id").get<ImageId>();
      s.caption_tokens = r.at("tokens").get<std::vector<TokenId>>();
      s.image_attributes = AttributeSet::from_hex(r.at("image_attrs").get<std::string>());
      s.caption_attributes = AttributeSet::from_hex(r.at("caption_attrs").get<std::string>());
      const auto row = r.at("image").at("features_row").get<std::size_t>();
      if ((row + 1) * dims > values.size()) throw Error(ErrorCode::Io, "feature row out of range");
      s.image_features.assign(values.begin() + static_cast<std::ptrdiff_t>(row * dims),
                              values.begin() + static_cast<std::ptrdiff_t>((row + 1) * dims));
      (split == "train" ? ds.train : ds.gallery).push_back(std::move(s));
    }
    return ds;
  }

  VehicleDataset ds;
  ds.seed = seed;
  ds.config = VehicleConfig::from_json(manifest.at("config"));
  for (const auto& r : records) {
    const auto split = r.at("split").get<std::string>();
    if (split == "query") {
      ds.queries.push_back(query_from_json(r));
      continue;
    }
    VehicleSample s;
    s.id = r.at("id").get<ImageId>();
    s.caption_tokens = r.at("tokens").get<std::vector<TokenId>>();
    s.tag.color_id = r.at("tag").at("color_id").get<int>();
    s.tag.type_id = r.at("tag").at("type_id").get<int>();
    const auto rgb = r.at("true_body_color").get<std::vector<int>>();
    s.true_body_color = {static_cast<std::uint8_t>(rgb.at(0)), static_cast<std::uint8_t>(rgb.at(1)),
                         static_cast<std::uint8_t>(rgb.at(2))};
    const auto box = r.at("bbox").get<std::vector<int>>();
    s.bbox = {box.at(0), box.at(1), box.at(2), box.at(3)};
    s.image = read_ppm(dir / r.at("image").get<std::string>());
    (split == "train" ? ds.train : ds.gallery).push_back(std::move(s));
  }
  return ds;
}

std::string dataset_hash(const fs::path& dir) {
  std::vector<std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file()) files.push_back(fs::relative(entry.path(), dir).generic_string());
  }
  std::sort(files.begin(), files.end());
  std::string digest_input;
  for (const auto& f : files) {
    digest_input += f;
    digest_input.push_back('\0');
    digest_input += sha256_hex(read_bytes(dir / f));
    digest_input.push_back('\n');
  }
  return sha256_hex(digest_input);
}

}  // namespace xmr
