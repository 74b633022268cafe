// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xmr/datagen.hpp"
#include "xmr/io.hpp"
#include "xmr/model.hpp"
#include "xmr/router.hpp"

namespace xmr {

struct GalleryIndex {
  Domain domain = Domain::Pedestrian;
  Matrix embeddings;  // unit rows
  std::vector<ImageId> ids;
};

/// Encodes `features` with the image tower. Throws EmptyGallery, and
/// ConfigInvalid on duplicate ids.
GalleryIndex build_gallery(Domain domain, const std::vector<ImageId>& ids, const Matrix& features,
                           const ParamSet& params);
GalleryIndex build_pedestrian_gallery(std::span<const PedestrianSample> images, const ParamSet& params);
/// Images are color-patched first when `augment` is set.
GalleryIndex build_vehicle_gallery(std::span<const VehicleSample> images, const Palette& palette,
                                   const ParamSet& params, bool augment);

/// Unit-norm text embedding (1×d). Words outside the vocabulary are dropped;
/// throws EmptyQuery if nothing is left.
Matrix encode_query(const std::vector<std::string>& words, const ParamSet& params);

/// Top-k ids by cosine similarity, descending, ties by ascending id. k larger
/// than the gallery returns all of it.
std::vector<ImageId> rank_gallery(const GalleryIndex& index, const Matrix& query, std::size_t k);

struct Branch {
  const ParamSet& params;
  const GalleryIndex& index;
};

struct Retrieval {
  RouteDecision route;
  std::vector<ImageId> ranking;
};

Retrieval retrieve(const std::vector<std::string>& words, const RuleSet& rules, const LinearClassifier& classifier,
                   const Branch& ped, const Branch& veh, std::size_t k);

// --- metrics -----------------------------------------------------------------

using Ranking = std::vector<ImageId>;
using GroundTruth = std::vector<ImageId>;

/// Fraction of queries with a ground-truth id in the top k. Throws MissingGroundTruth.
double recall_at_k(std::span<const Ranking> rankings, std::span<const GroundTruth> truth, std::size_t k);
/// Mean of average precision truncated at k, normalized by min(|truth|, k).
double mean_ap(std::span<const Ranking> rankings, std::span<const GroundTruth> truth, std::size_t k);
/// Mean 1-based position of the first relevant id; ranking length + 1 when absent.
double mean_rank(std::span<const Ranking> rankings, std::span<const GroundTruth> truth);

struct MetricSet {
  std::size_t count = 0;
  double recall_1 = 0.0;
  double recall_5 = 0.0;
  double recall_10 = 0.0;
  double map_10 = 0.0;
  double mean_rank = 0.0;

  Json to_json() const;
};

/// Metrics over the queries selected by `mask` (all when empty). An empty
/// selection gives count 0 and zero metrics.
MetricSet compute_metrics(std::span<const Ranking> rankings, std::span<const GroundTruth> truth,
                          const std::vector<bool>& mask = {});

// --- per-domain evaluation ---------------------------------------------------

struct PedestrianReport {
  MetricSet all;
  MetricSet exact;
  MetricSet strict_subset;
  Json to_json() const;
};

struct VehicleReport {
  MetricSet all;
  MetricSet confusable;
  double color_r1 = 0.0;             // top-1 image has the query's color
  double color_r1_confusable = 0.0;
  Json to_json() const;
};

/// Full rankings for every query against the domain's own gallery.
PedestrianReport evaluate_pedestrian(const ParamSet& params, const PedestrianDataset& data);
VehicleReport evaluate_vehicle(const ParamSet& params, const VehicleDataset& data, bool augment);

// --- full pipeline -----------------------------------------------------------

struct RunInfo {
  std::string config_hash;
  std::string dataset_hash;
  bool augment = true;  // vehicle flag the checkpoint was trained with
};

struct EvalInputs {
  const PedestrianDataset& ped;
  const VehicleDataset& veh;
  const ParamSet& ped_params;
  const ParamSet& veh_params;
  RunInfo ped_run;
  RunInfo veh_run;
  std::optional<bool> augment;  // overrides the checkpoint flag (recorded as a warning)
  std::uint64_t router_seed = 0;
};

struct SubmissionRow {
  std::uint32_t query_id = 0;
  std::optional<Domain> domain;
  std::vector<ImageId> ids;  // top 10
};

/// CSV "query_id,domain,rank1..rank10" in input order. Throws UnroutedQuery.
std::string fuse_results(std::span<const SubmissionRow> rows);

struct EvalOutput {
  Json report;
  std::vector<SubmissionRow> rows;
  std::string submission;
};

/// Trains the router on both training splits, routes the pooled gallery and
/// every query, ranks within the routed branch only and scores by true domain.
EvalOutput evaluate(const EvalInputs& in);

/// Numeric leaves of each report next to the first (base) run, with deltas.
/// Throws IncomparableRuns when dataset hashes differ, ConfigInvalid for < 2 runs.
Json ablation_report(std::span<const Json> reports, std::span<const std::string> names);
std::string render_ablation(const Json& table);

}  // namespace xmr
