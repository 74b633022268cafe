// SPDX-License-Identifier: Apache-2.0
#include <set>

#include "doctest.h"
#include "test_util.hpp"
#include "xmr/eval.hpp"
#include "xmr/training.hpp"

using namespace xmr;
using xmr::test::code_of;

namespace {

GalleryIndex toy_index(Matrix rows, std::vector<ImageId> ids) {
  GalleryIndex g;
  g.embeddings = normalize_rows(rows).normalized;
  g.ids = std::move(ids);
  return g;
}

struct Tiny {
  PedestrianDataset ped;
  VehicleDataset veh;
  ParamSet ped_params;
  ParamSet veh_params;
};

const Tiny& tiny() {
  static const Tiny t = [] {
    PedestrianConfig pc;
    pc.train_size = 32;
    pc.query_count = 8;
    pc.gallery_size = 12;
    VehicleConfig vc;
    vc.train_size = 32;
    vc.query_count = 8;
    vc.gallery_size = 12;
    return Tiny{generate_pedestrian_dataset(pc, 1), generate_vehicle_dataset(vc, 1),
                init_params(ModelConfig::standard(), 1), init_params(ModelConfig::standard(), 2)};
  }();
  return t;
}

EvalInputs tiny_inputs() {
  const auto& t = tiny();
  return EvalInputs{t.ped, t.veh, t.ped_params, t.veh_params, {"c1", "d1", true}, {"c2", "d2", true}, {}, 0};
}

}  // namespace

TEST_CASE("ranking by cosine") {
  const auto g = toy_index(Matrix{{0, 1, 0}, {1, 0, 0}, {0, 0, 1}}, {30, 10, 20});
  CHECK(rank_gallery(g, Matrix{{2, 0, 0}}, 1) == std::vector<ImageId>{10});
  CHECK(rank_gallery(g, Matrix{{1, 0, 0}}, 99).size() == 3);
  // all three tie: ascending id
  const auto tied = toy_index(Matrix{{1, 0}, {1, 0}, {1, 0}}, {7, 3, 5});
  CHECK(rank_gallery(tied, Matrix{{1, 0}}, 3) == std::vector<ImageId>{3, 5, 7});
  CHECK(rank_gallery(g, Matrix{{0, 1, 1}}, 3) == std::vector<ImageId>{20, 30, 10});
  CHECK(code_of([&] { rank_gallery(g, Matrix{{1, 0}}, 3); }) == ErrorCode::DimensionMismatch);
}

TEST_CASE("gallery construction") {
  const auto& p = tiny().ped_params;
  CHECK(code_of([&] { build_gallery(Domain::Pedestrian, {}, Matrix(0, 48), p); }) == ErrorCode::EmptyGallery);
  CHECK(code_of([&] { build_gallery(Domain::Pedestrian, {1, 1}, Matrix(2, 48, 0.5), p); }) == ErrorCode::ConfigInvalid);
  const auto a = build_pedestrian_gallery(tiny().ped.gallery, p);
  const auto b = build_pedestrian_gallery(tiny().ped.gallery, p);
  CHECK(a.embeddings == b.embeddings);
  CHECK(a.ids.size() == 12);
  for (std::size_t r = 0; r < a.embeddings.rows(); ++r) CHECK(norm2(a.embeddings.row(r)) == doctest::Approx(1.0));

  const auto& v = tiny().veh;
  const auto on = build_vehicle_gallery(v.gallery, v.config.palette, tiny().veh_params, true);
  const auto off = build_vehicle_gallery(v.gallery, v.config.palette, tiny().veh_params, false);
  CHECK_FALSE(on.embeddings == off.embeddings);
}

TEST_CASE("query encoding") {
  const auto& p = tiny().ped_params;
  const auto q = encode_query({"a", "man", "zebra"}, p);
  CHECK(q.rows() == 1);
  CHECK(norm2(q.row(0)) == doctest::Approx(1.0));
  CHECK(q == encode_query({"a", "man"}, p));
  CHECK(code_of([&] { encode_query({"zebra"}, p); }) == ErrorCode::EmptyQuery);
}

TEST_CASE("recall at k") {
  const std::vector<Ranking> r{{1, 2, 3}, {4, 5, 6}, {7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17}};
  const std::vector<GroundTruth> t{{1}, {6}, {17}};
  CHECK(recall_at_k(r, t, 5) == doctest::Approx(2.0 / 3.0));
  CHECK(recall_at_k(r, t, 1) == doctest::Approx(1.0 / 3.0));
  CHECK(recall_at_k(r, t, 11) == 1.0);
  const std::vector<GroundTruth> never{{99}, {99}, {99}};
  CHECK(recall_at_k(r, never, 10) == 0.0);
  const std::vector<GroundTruth> missing{{1}, {}, {17}};
  CHECK(code_of([&] { recall_at_k(r, missing, 5); }) == ErrorCode::MissingGroundTruth);
}

TEST_CASE("average precision") {
  const std::vector<Ranking> one{{5, 1, 2}};
  CHECK(mean_ap(one, std::vector<GroundTruth>{{5}}, 10) == 1.0);
  CHECK(mean_ap(one, std::vector<GroundTruth>{{1}}, 10) == 0.5);
  CHECK(mean_ap(one, std::vector<GroundTruth>{{9}}, 10) == 0.0);
  // hits at 1 and 3 of two relevant: (1 + 2/3) / 2
  CHECK(mean_ap(one, std::vector<GroundTruth>{{2, 5}}, 10) == doctest::Approx(5.0 / 6.0));
  // twelve relevant, k = 2, both top slots hit
  GroundTruth many;
  for (ImageId i = 0; i < 12; ++i) many.push_back(i);
  CHECK(mean_ap(std::vector<Ranking>{{0, 1, 50}}, std::vector<GroundTruth>{many}, 2) == 1.0);
}

TEST_CASE("mean rank") {
  const std::vector<Ranking> r{{1, 2, 3}, {4, 5, 6}};
  CHECK(mean_rank(r, std::vector<GroundTruth>{{2}, {99}}) == doctest::Approx((2.0 + 4.0) / 2.0));
}

TEST_CASE("metric sets") {
  const std::vector<Ranking> r{{1, 2}, {3, 4}};
  const std::vector<GroundTruth> t{{1}, {4}};
  const auto all = compute_metrics(r, t);
  CHECK(all.count == 2);
  CHECK(all.recall_1 == 0.5);
  CHECK(all.recall_5 == 1.0);
  CHECK(all.map_10 == 0.75);
  const auto second = compute_metrics(r, t, {false, true});
  CHECK(second.count == 1);
  CHECK(second.recall_1 == 0.0);
  CHECK(compute_metrics(r, t, {false, false}).count == 0);
  const auto j = all.to_json();
  CHECK(j.at("recall@1") == 0.5);
  CHECK(j.contains("mAP@10"));

  // permuting the queries changes nothing
  const std::vector<Ranking> rr{{3, 4}, {1, 2}};
  const std::vector<GroundTruth> tt{{4}, {1}};
  CHECK(compute_metrics(rr, tt).to_json() == j);
}

TEST_CASE("misrouted queries score zero") {
  // a pedestrian query ranked against the vehicle gallery never meets its truth
  const std::vector<Ranking> wrong{{200001, 200002, 200003}};
  const std::vector<GroundTruth> truth{{100004}};
  CHECK(recall_at_k(wrong, truth, 10) == 0.0);
  CHECK(mean_ap(wrong, truth, 10) == 0.0);
  CHECK(mean_rank(wrong, truth) == 4.0);
}

TEST_CASE("submission csv") {
  const std::vector<SubmissionRow> rows{{7, Domain::Vehicle, {3, 1}}, {2, Domain::Pedestrian, {9}}};
  const auto csv = fuse_results(rows);
  CHECK(csv ==
        "query_id,domain,rank1,rank2,rank3,rank4,rank5,rank6,rank7,rank8,rank9,rank10\n"
        "7,veh,3,1,,,,,,,,\n"
        "2,ped,9,,,,,,,,,\n");
  const std::vector<SubmissionRow> lost{{1, std::nullopt, {}}};
  CHECK(code_of([&] { fuse_results(lost); }) == ErrorCode::UnroutedQuery);
}

TEST_CASE("routed retrieval stays in one domain") {
  const auto& t = tiny();
  const auto ped_index = build_pedestrian_gallery(t.ped.gallery, t.ped_params);
  const auto veh_index = build_vehicle_gallery(t.veh.gallery, t.veh.config.palette, t.veh_params, true);
  std::vector<LabeledCaption> captions{{{"a", "man", "wearing", "hat"}, Domain::Pedestrian},
                                       {{"a", "white", "audi"}, Domain::Vehicle}};
  const auto classifier = train_router_classifier(captions);
  const Branch ped{t.ped_params, ped_index};
  const Branch veh{t.veh_params, veh_index};
  const std::set<ImageId> ped_ids(ped_index.ids.begin(), ped_index.ids.end());
  const std::set<ImageId> veh_ids(veh_index.ids.begin(), veh_index.ids.end());

  const auto r1 = retrieve({"a", "man", "wearing", "glasses"}, RuleSet::standard(), classifier, ped, veh, 10);
  const auto r2 = retrieve({"a", "black", "truck"}, RuleSet::standard(), classifier, ped, veh, 10);
  CHECK(r1.route.domain == Domain::Pedestrian);
  CHECK(r2.route.domain == Domain::Vehicle);
  CHECK(r1.ranking.size() == 10);
  for (auto id : r1.ranking) CHECK(ped_ids.contains(id));
  for (auto id : r2.ranking) CHECK(veh_ids.contains(id));
}

TEST_CASE("full evaluation") {
  const auto out = evaluate(tiny_inputs());
  CHECK(out.rows.size() == 16);
  std::set<std::uint32_t> query_ids;
  for (const auto& row : out.rows) {
    query_ids.insert(row.query_id);
    CHECK(row.ids.size() == 10);
    REQUIRE(row.domain.has_value());
    const ImageId base = *row.domain == Domain::Pedestrian ? 100000 : 200000;
    for (auto id : row.ids) CHECK((id >= base && id < base + 100000));
  }
  CHECK(query_ids.size() == 16);
  const auto& rep = out.report;
  CHECK(rep.at("router").at("text_accuracy") == 1.0);
  CHECK(rep.at("router").at("image_accuracy") == 1.0);
  CHECK(rep.at("ped").at("all").at("count") == 8);
  CHECK(rep.at("dataset_hashes").at("veh") == "d2");
  CHECK(rep.at("warnings").empty());

  const auto again = evaluate(tiny_inputs());
  CHECK(again.report.dump() == out.report.dump());
  CHECK(again.submission == out.submission);

  auto skewed = tiny_inputs();
  skewed.augment = false;
  CHECK(evaluate(skewed).report.at("warnings").size() == 1);
}

TEST_CASE("ablation tables") {
  const auto base = evaluate(tiny_inputs()).report;
  const std::vector<Json> same{base, base};
  const std::vector<std::string> names{"base", "copy"};
  const auto table = ablation_report(same, names);
  for (const auto& row : table.at("rows")) CHECK(row.at("runs")[0].at("delta") == 0.0);
  bool has_slice = false;
  for (const auto& row : table.at("rows")) has_slice |= row.at("metric") == "ped.strict_subset.recall@10";
  CHECK(has_slice);
  CHECK(render_ablation(table).find("copy") != std::string::npos);

  Json other = base;
  other["dataset_hashes"]["ped"] = "elsewhere";
  const std::vector<Json> mixed{base, other};
  CHECK(code_of([&] { ablation_report(mixed, names); }) == ErrorCode::IncomparableRuns);
  const std::vector<Json> alone{base};
  const std::vector<std::string> one{"base"};
  CHECK(code_of([&] { ablation_report(alone, one); }) == ErrorCode::ConfigInvalid);
}
