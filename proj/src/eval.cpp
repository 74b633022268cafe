// SPDX-License-Identifier: Apache-2.0
#include "xmr/eval.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "xmr/augment.hpp"
#include "xmr/error.hpp"
#include "xmr/training.hpp"

namespace xmr {

GalleryIndex build_gallery(Domain domain, const std::vector<ImageId>& ids, const Matrix& features,
                           const ParamSet& params) {
  if (ids.empty()) throw Error(ErrorCode::EmptyGallery, std::string(domain_name(domain)) + " gallery is empty");
  if (features.rows() != ids.size()) throw Error(ErrorCode::DimensionMismatch, "one feature row per gallery id");
  if (std::set<ImageId>(ids.begin(), ids.end()).size() != ids.size()) {
    throw Error(ErrorCode::ConfigInvalid, "duplicate gallery ids");
  }
  return {domain, normalize_rows(encode_image(features, params)).normalized, ids};
}

GalleryIndex build_pedestrian_gallery(std::span<const PedestrianSample> images, const ParamSet& params) {
  if (images.empty()) throw Error(ErrorCode::EmptyGallery, "ped gallery is empty");
  std::vector<ImageId> ids;
  Matrix features(images.size(), images.front().image_features.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    ids.push_back(images[i].id);
    std::copy(images[i].image_features.begin(), images[i].image_features.end(), features.row(i).begin());
  }
  return build_gallery(Domain::Pedestrian, ids, features, params);
}

GalleryIndex build_vehicle_gallery(std::span<const VehicleSample> images, const Palette& palette,
                                   const ParamSet& params, bool augment) {
  if (images.empty()) throw Error(ErrorCode::EmptyGallery, "veh gallery is empty");
  std::vector<ImageId> ids;
  Matrix features(images.size(), kImageFeatureDim);
  for (std::size_t i = 0; i < images.size(); ++i) {
    ids.push_back(images[i].id);
    const auto f = vehicle_features(images[i], palette, augment);
    std::copy(f.begin(), f.end(), features.row(i).begin());
  }
  return build_gallery(Domain::Vehicle, ids, features, params);
}

Matrix encode_query(const std::vector<std::string>& words, const ParamSet& params) {
  const auto& vocab = Vocabulary::standard();
  std::vector<TokenId> tokens;
  for (const auto& w : words)
    if (const auto id = vocab.find(w); id && *id != Vocabulary::kMask) tokens.push_back(*id);
  if (tokens.empty()) throw Error(ErrorCode::EmptyQuery, "query has no known words");
  return normalize_rows(encode_text({tokens}, params)).normalized;
}

std::vector<ImageId> rank_gallery(const GalleryIndex& index, const Matrix& query, std::size_t k) {
  if (k < 1) throw Error(ErrorCode::ConfigInvalid, "k must be >= 1");
  if (query.rows() != 1 || query.cols() != index.embeddings.cols()) {
    throw Error(ErrorCode::DimensionMismatch, "query embedding does not match the gallery");
  }
  const Matrix scores = matmul_bt(query, index.embeddings);
  std::vector<std::size_t> order(index.ids.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t n = std::min(k, order.size());
  const auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return index.ids[a] < index.ids[b];
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n), order.end(), better);
  std::vector<ImageId> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(index.ids[order[i]]);
  return out;
}

Retrieval retrieve(const std::vector<std::string>& words, const RuleSet& rules, const LinearClassifier& classifier,
                   const Branch& ped, const Branch& veh, std::size_t k) {
  Retrieval r;
  r.route = route_text(words, rules, classifier);
  const Branch& branch = r.route.domain == Domain::Pedestrian ? ped : veh;
  r.ranking = rank_gallery(branch.index, encode_query(words, branch.params), k);
  return r;
}

// ---------------------------------------------------------------------------

namespace {

void check_truth(std::span<const Ranking> rankings, std::span<const GroundTruth> truth) {
  if (rankings.size() != truth.size()) throw Error(ErrorCode::DimensionMismatch, "one ground-truth list per query");
  for (const auto& t : truth)
    if (t.empty()) throw Error(ErrorCode::MissingGroundTruth, "query without ground truth");
}

bool relevant(const GroundTruth& truth, ImageId id) { return std::find(truth.begin(), truth.end(), id) != truth.end(); }

double query_ap(const Ranking& ranking, const GroundTruth& truth, std::size_t k) {
  double hits = 0.0;
  double sum = 0.0;
  for (std::size_t r = 0; r < std::min(k, ranking.size()); ++r) {
    if (relevant(truth, ranking[r])) {
      hits += 1.0;
      sum += hits / static_cast<double>(r + 1);
    }
  }
  return sum / static_cast<double>(std::min(truth.size(), k));
}

std::optional<std::size_t> first_hit(const Ranking& ranking, const GroundTruth& truth) {
  for (std::size_t r = 0; r < ranking.size(); ++r)
    if (relevant(truth, ranking[r])) return r + 1;
  return std::nullopt;
}

}  // namespace

double recall_at_k(std::span<const Ranking> rankings, std::span<const GroundTruth> truth, std::size_t k) {
  check_truth(rankings, truth);
  if (rankings.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t q = 0; q < rankings.size(); ++q) {
    const auto hit = first_hit(rankings[q], truth[q]);
    hits += hit && *hit <= k ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(rankings.size());
}

double mean_ap(std::span<const Ranking> rankings, std::span<const GroundTruth> truth, std::size_t k) {
  check_truth(rankings, truth);
  if (rankings.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t q = 0; q < rankings.size(); ++q) sum += query_ap(rankings[q], truth[q], k);
  return sum / static_cast<double>(rankings.size());
}

double mean_rank(std::span<const Ranking> rankings, std::span<const GroundTruth> truth) {
  check_truth(rankings, truth);
  if (rankings.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t q = 0; q < rankings.size(); ++q) {
    sum += static_cast<double>(first_hit(rankings[q], truth[q]).value_or(rankings[q].size() + 1));
  }
  return sum / static_cast<double>(rankings.size());
}

Json MetricSet::to_json() const {
  return {{"count", count},         {"recall@1", recall_1}, {"recall@5", recall_5},
          {"recall@10", recall_10}, {"mAP@10", map_10},     {"mean_rank", mean_rank}};
}

MetricSet compute_metrics(std::span<const Ranking> rankings, std::span<const GroundTruth> truth,
                          const std::vector<bool>& mask) {
  check_truth(rankings, truth);
  std::vector<Ranking> r;
  std::vector<GroundTruth> t;
  for (std::size_t q = 0; q < rankings.size(); ++q) {
    if (!mask.empty() && !mask.at(q)) continue;
    r.push_back(rankings[q]);
    t.push_back(truth[q]);
  }
  MetricSet m;
  m.count = r.size();
  if (r.empty()) return m;
  m.recall_1 = recall_at_k(r, t, 1);
  m.recall_5 = recall_at_k(r, t, 5);
  m.recall_10 = recall_at_k(r, t, 10);
  m.map_10 = mean_ap(r, t, 10);
  m.mean_rank = xmr::mean_rank(r, t);
  return m;
}

Json PedestrianReport::to_json() const {
  return {{"all", all.to_json()}, {"exact", exact.to_json()}, {"strict_subset", strict_subset.to_json()}};
}

Json VehicleReport::to_json() const {
  return {{"all", all.to_json()},
          {"confusable", confusable.to_json()},
          {"color_correct_r1", {{"all", color_r1}, {"confusable", color_r1_confusable}}}};
}

namespace {

std::vector<std::string> words_of(const std::vector<TokenId>& tokens) { return Vocabulary::standard().decode(tokens); }

std::vector<GroundTruth> truths(const std::vector<Query>& queries) {
  std::vector<GroundTruth> out;
  for (const auto& q : queries) out.push_back(q.ground_truth);
  return out;
}

PedestrianReport pedestrian_report(const std::vector<Ranking>& rankings, const std::vector<Query>& queries) {
  const auto truth = truths(queries);
  std::vector<bool> strict;
  std::vector<bool> exact;
  for (const auto& q : queries) {
    strict.push_back(q.strict_subset);
    exact.push_back(!q.strict_subset);
  }
  return {compute_metrics(rankings, truth), compute_metrics(rankings, truth, exact),
          compute_metrics(rankings, truth, strict)};
}

VehicleReport vehicle_report(const std::vector<Ranking>& rankings, const VehicleDataset& data) {
  const auto truth = truths(data.queries);
  std::map<ImageId, int> color;
  for (const auto& s : data.gallery) color[s.id] = s.tag.color_id;
  std::vector<bool> confusable;
  std::size_t correct = 0;
  std::size_t correct_confusable = 0;
  std::size_t n_confusable = 0;
  for (std::size_t q = 0; q < data.queries.size(); ++q) {
    const auto& query = data.queries[q];
    confusable.push_back(query.confusable);
    const int want = color.at(query.paired_image);
    const auto& r = rankings[q];
    const bool ok = !r.empty() && color.contains(r.front()) && color.at(r.front()) == want;
    correct += ok ? 1 : 0;
    if (query.confusable) {
      ++n_confusable;
      correct_confusable += ok ? 1 : 0;
    }
  }
  VehicleReport rep;
  rep.all = compute_metrics(rankings, truth);
  rep.confusable = compute_metrics(rankings, truth, confusable);
  if (!data.queries.empty()) rep.color_r1 = static_cast<double>(correct) / static_cast<double>(data.queries.size());
  if (n_confusable > 0) {
    rep.color_r1_confusable = static_cast<double>(correct_confusable) / static_cast<double>(n_confusable);
  }
  return rep;
}

std::vector<Ranking> rank_all(const std::vector<Query>& queries, const GalleryIndex& index, const ParamSet& params) {
  std::vector<Ranking> out;
  out.reserve(queries.size());
  for (const auto& q : queries) out.push_back(rank_gallery(index, encode_query(words_of(q.tokens), params), index.ids.size()));
  return out;
}

}  // namespace

PedestrianReport evaluate_pedestrian(const ParamSet& params, const PedestrianDataset& data) {
  const auto index = build_pedestrian_gallery(data.gallery, params);
  return pedestrian_report(rank_all(data.queries, index, params), data.queries);
}

VehicleReport evaluate_vehicle(const ParamSet& params, const VehicleDataset& data, bool augment) {
  const auto index = build_vehicle_gallery(data.gallery, data.config.palette, params, augment);
  return vehicle_report(rank_all(data.queries, index, params), data);
}

// ---------------------------------------------------------------------------

std::string fuse_results(std::span<const SubmissionRow> rows) {
  std::ostringstream out;
  out << "query_id,domain";
  for (int r = 1; r <= 10; ++r) out << ",rank" << r;
  out << "\n";
  for (const auto& row : rows) {
    if (!row.domain) throw Error(ErrorCode::UnroutedQuery, "query " + std::to_string(row.query_id) + " was not routed");
    out << row.query_id << ',' << domain_name(*row.domain);
    for (std::size_t r = 0; r < 10; ++r) {
      out << ',';
      if (r < row.ids.size()) out << row.ids[r];
    }
    out << "\n";
  }
  return out.str();
}

EvalOutput evaluate(const EvalInputs& in) {
  const auto& palette = in.veh.config.palette;
  const bool augment = in.augment.value_or(in.veh_run.augment);
  Json warnings = Json::array();
  if (augment != in.veh_run.augment) {
    warnings.push_back(std::string("vehicle gallery augment=") + (augment ? "on" : "off") +
                       " differs from the checkpoint's training flag");
  }

  // router, trained on both training splits
  LogisticOptions options;
  options.seed = in.router_seed;
  std::vector<LabeledCaption> captions;
  for (const auto& s : in.ped.train) captions.push_back({words_of(s.caption_tokens), Domain::Pedestrian});
  for (const auto& s : in.veh.train) captions.push_back({words_of(s.caption_tokens), Domain::Vehicle});
  const auto text_classifier = train_router_classifier(captions, options);

  Matrix train_features(in.ped.train.size() + in.veh.train.size(), kImageFeatureDim);
  std::vector<Domain> train_domains;
  std::size_t row = 0;
  for (const auto& s : in.ped.train) {
    std::copy(s.image_features.begin(), s.image_features.end(), train_features.row(row++).begin());
    train_domains.push_back(Domain::Pedestrian);
  }
  for (const auto& s : in.veh.train) {
    const auto f = image_to_features(s.image);
    std::copy(f.begin(), f.end(), train_features.row(row++).begin());
    train_domains.push_back(Domain::Vehicle);
  }
  const auto image_classifier = train_image_classifier(train_features, train_domains, options);

  // pooled gallery, split by the image router
  std::vector<ImageId> ids[2];
  std::vector<std::vector<double>> rows[2];
  std::size_t images_correct = 0;
  const auto place = [&](ImageId id, const std::vector<double>& raw, const std::vector<double>& patched,
                         Domain truth) {
    const auto d = route_image(raw, image_classifier).domain;
    images_correct += d == truth ? 1 : 0;
    const int slot = d == Domain::Pedestrian ? 0 : 1;
    ids[slot].push_back(id);
    rows[slot].push_back(d == Domain::Vehicle ? patched : raw);
  };
  for (const auto& s : in.ped.gallery) place(s.id, s.image_features, s.image_features, Domain::Pedestrian);
  for (const auto& s : in.veh.gallery) {
    const auto raw = image_to_features(s.image);
    place(s.id, raw, augment ? vehicle_features(s, palette, true) : raw, Domain::Vehicle);
  }
  const auto to_matrix = [](const std::vector<std::vector<double>>& r) {
    Matrix m(r.size(), kImageFeatureDim);
    for (std::size_t i = 0; i < r.size(); ++i) std::copy(r[i].begin(), r[i].end(), m.row(i).begin());
    return m;
  };
  const auto ped_index = build_gallery(Domain::Pedestrian, ids[0], to_matrix(rows[0]), in.ped_params);
  const auto veh_index = build_gallery(Domain::Vehicle, ids[1], to_matrix(rows[1]), in.veh_params);

  const RuleSet rules = RuleSet::standard();
  const Branch ped{in.ped_params, ped_index};
  const Branch veh{in.veh_params, veh_index};
  EvalOutput out;
  std::size_t text_correct = 0;
  std::size_t by_rule = 0;
  const auto run = [&](const std::vector<Query>& queries, Domain truth) {
    std::vector<Ranking> rankings;
    for (const auto& q : queries) {
      const auto r = retrieve(words_of(q.tokens), rules, text_classifier, ped, veh, 1u << 30);
      text_correct += r.route.domain == truth ? 1 : 0;
      by_rule += r.route.source == RouteSource::Rule ? 1 : 0;
      out.rows.push_back({q.id, r.route.domain, {r.ranking.begin(), r.ranking.begin() + std::min<std::size_t>(10, r.ranking.size())}});
      rankings.push_back(r.ranking);
    }
    return rankings;
  };
  const auto ped_rankings = run(in.ped.queries, Domain::Pedestrian);
  const auto veh_rankings = run(in.veh.queries, Domain::Vehicle);
  out.submission = fuse_results(out.rows);

  const double n_queries = static_cast<double>(in.ped.queries.size() + in.veh.queries.size());
  const double n_images = static_cast<double>(in.ped.gallery.size() + in.veh.gallery.size());
  out.report = {
      {"config_hashes", {{"ped", in.ped_run.config_hash}, {"veh", in.veh_run.config_hash}}},
      {"dataset_hashes", {{"ped", in.ped_run.dataset_hash}, {"veh", in.veh_run.dataset_hash}}},
      {"augment", augment},
      {"router",
       {{"text_accuracy", static_cast<double>(text_correct) / n_queries},
        {"text_rule_fraction", static_cast<double>(by_rule) / n_queries},
        {"image_accuracy", static_cast<double>(images_correct) / n_images}}},
      {"ped", pedestrian_report(ped_rankings, in.ped.queries).to_json()},
      {"veh", vehicle_report(veh_rankings, in.veh).to_json()},
      {"warnings", warnings}};
  return out;
}

// ---------------------------------------------------------------------------

namespace {

void flatten(const Json& j, const std::string& prefix, std::vector<std::pair<std::string, double>>& out) {
  if (j.is_object()) {
    for (const auto& [k, v] : j.items()) {
      if (k == "config_hashes" || k == "dataset_hashes" || k == "warnings") continue;
      flatten(v, prefix.empty() ? k : prefix + "." + k, out);
    }
  } else if (j.is_number()) {
    out.emplace_back(prefix, j.get<double>());
  }
}

}  // namespace

Json ablation_report(std::span<const Json> reports, std::span<const std::string> names) {
  if (reports.size() < 2) throw Error(ErrorCode::ConfigInvalid, "an ablation needs at least two runs");
  if (names.size() != reports.size()) throw Error(ErrorCode::ConfigInvalid, "one name per run");
  const Json base_hashes = reports[0].value("dataset_hashes", Json());
  for (std::size_t r = 1; r < reports.size(); ++r) {
    if (reports[r].value("dataset_hashes", Json()) != base_hashes) {
      throw Error(ErrorCode::IncomparableRuns, "run '" + names[r] + "' used a different dataset");
    }
  }
  std::vector<std::vector<std::pair<std::string, double>>> flat(reports.size());
  for (std::size_t r = 0; r < reports.size(); ++r) flatten(reports[r], "", flat[r]);

  Json rows = Json::array();
  for (const auto& [metric, base] : flat[0]) {
    Json row = {{"metric", metric}, {"base", base}, {"runs", Json::array()}};
    for (std::size_t r = 1; r < reports.size(); ++r) {
      const auto it = std::find_if(flat[r].begin(), flat[r].end(), [&](const auto& p) { return p.first == metric; });
      if (it == flat[r].end()) continue;
      row["runs"].push_back({{"name", names[r]}, {"value", it->second}, {"delta", it->second - base}});
    }
    rows.push_back(row);
  }
  Json run_names = Json::array();
  for (const auto& n : names) run_names.push_back(n);
  return {{"runs", run_names}, {"dataset_hashes", base_hashes}, {"rows", rows}};
}

std::string render_ablation(const Json& table) {
  std::ostringstream out;
  const auto& runs = table.at("runs");
  out << "metric";
  for (const auto& n : runs) out << '\t' << n.get<std::string>();
  for (std::size_t r = 1; r < runs.size(); ++r) out << "\tdelta(" << runs[r].get<std::string>() << ")";
  out << "\n";
  for (const auto& row : table.at("rows")) {
    out << row.at("metric").get<std::string>() << '\t' << format_double(row.at("base").get<double>());
    for (const auto& run : row.at("runs")) out << '\t' << format_double(run.at("value").get<double>());
    for (const auto& run : row.at("runs")) out << '\t' << format_double(run.at("delta").get<double>());
    out << "\n";
  }
  return out.str();
}

}  // namespace xmr
