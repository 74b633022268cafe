// SPDX-License-Identifier: Apache-2.0
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "xmr/augment.hpp"
#include "xmr/error.hpp"
#include "xmr/gradcheck.hpp"
#include "xmr/io.hpp"
#include "xmr/pipeline.hpp"
#include "xmr/raster.hpp"
#include "xmr/router.hpp"

using namespace xmr;
namespace fs = std::filesystem;

namespace {

Json read_json_file(const fs::path& path) {
  try {
    return Json::parse(read_text(path));
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::ConfigInvalid, path.string() + ": " + e.what());
  }
}

std::optional<bool> parse_switch(const std::string& s) {
  if (s.empty()) return std::nullopt;
  if (s == "on") return true;
  if (s == "off") return false;
  throw Error(ErrorCode::ConfigInvalid, "expected on or off, got '" + s + "'");
}

int cmd_gen_data(const std::string& task, const std::string& config, const std::string& out, std::uint64_t seed) {
  const Json overrides = config.empty() ? Json::object() : read_json_file(config);
  generate_to_dir(parse_task(task), overrides, seed, out);
  std::cout << Json{{"dataset", out}, {"sha256", dataset_hash(out)}}.dump() << "\n";
  return 0;
}

int cmd_train(const std::string& config, const std::string& task, const std::string& data, const std::string& out) {
  TrainConfig cfg;
  if (!config.empty()) {
    cfg = TrainConfig::from_json(read_json_file(config));
  } else if (!task.empty()) {
    cfg = TrainConfig::defaults(parse_task(task));
  } else {
    cfg = TrainConfig::defaults(dataset_task(data));
  }
  const RunRecord record = train_to_dir(cfg, data, out);
  for (const auto& e : record.epochs) std::cerr << "epoch " << e.epoch << " loss " << e.total << "\n";
  Json summary = record.to_json();
  summary.erase("epochs");
  summary["checkpoint"] = out;
  summary["final_loss"] = record.epochs.empty() ? Json(nullptr) : Json(record.epochs.back().total);
  summary["wall_seconds"] = record.wall_seconds;
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_eval(const std::string& ped, const std::string& veh, const std::string& data, const std::string& out,
             const std::string& submission, const std::string& augment) {
  const auto result = evaluate_dirs(ped, veh, data, parse_switch(augment));
  write_eval_output(result, out, submission);
  for (const auto& w : result.report.at("warnings")) std::cerr << "warning: " << w.get<std::string>() << "\n";
  std::cout << Json{{"ped", result.report.at("ped").at("all")}, {"veh", result.report.at("veh").at("all")}}.dump()
            << "\n";
  return 0;
}

int cmd_gradcheck(const std::vector<std::string>& losses, int seeds) {
  GradcheckOptions o;
  o.seeds = seeds;
  const auto& names = losses.empty() || losses == std::vector<std::string>{"all"} ? gradcheck_loss_names() : losses;
  Json results = Json::array();
  bool ok = true;
  for (const auto& name : names) {
    const auto r = gradcheck_loss(name, o);
    ok = ok && r.passed;
    results.push_back({{"loss", r.loss},
                       {"batches", r.batches},
                       {"max_relative_error", r.max_relative_error},
                       {"worst_tensor", r.worst_tensor},
                       {"tolerance", o.tolerance},
                       {"passed", r.passed}});
  }
  std::cout << results.dump(2) << "\n";
  return ok ? 0 : 1;
}

LinearClassifier router_from(const std::string& data) {
  std::vector<LabeledCaption> captions;
  const auto& vocab = Vocabulary::standard();
  auto add = [&](const AnyDataset& any) {
    std::visit(
        [&](const auto& ds) {
          const Domain d = std::is_same_v<std::decay_t<decltype(ds)>, PedestrianDataset> ? Domain::Pedestrian
                                                                                          : Domain::Vehicle;
          for (const auto& s : ds.train) captions.push_back({vocab.decode(s.caption_tokens), d});
        },
        any);
  };
  if (data.empty()) {
    add(generate_pedestrian_dataset(PedestrianConfig{}, 0));
    add(generate_vehicle_dataset(VehicleConfig{}, 0));
  } else {
    add(load_dataset(fs::path(data) / "ped"));
    add(load_dataset(fs::path(data) / "veh"));
  }
  return train_router_classifier(captions);
}

int cmd_route(const std::string& text, const std::string& data) {
  const auto decision = route_text(tokenize(text), RuleSet::standard(), router_from(data));
  std::cout << decision.to_json().dump() << "\n";
  return 0;
}

int cmd_augment(const std::string& in, const std::string& out, const std::string& palette_path, int side,
                const std::vector<int>& bbox) {
  const Palette palette = palette_path.empty() ? Palette::standard() : Palette::from_json(read_json_file(palette_path));
  const Image image = read_ppm(in);
  std::optional<Rect> region;
  if (!bbox.empty()) region = Rect{bbox[0], bbox[1], bbox[2], bbox[3]};
  const auto color = dominant_color(image, palette, region);
  write_ppm(out, apply_color_patch(image, color.rgb, PatchSpec{side}));
  const auto& entry = palette.by_id(color.color_id);
  std::cout << Json{{"color_id", entry.id}, {"color", entry.name}, {"rgb", {color.rgb.r, color.rgb.g, color.rgb.b}}}.dump()
            << "\n";
  return 0;
}

int cmd_ablate(const std::vector<std::string>& reports, std::vector<std::string> names, const std::string& out) {
  std::vector<Json> loaded;
  for (const auto& r : reports) loaded.push_back(read_json_file(r));
  if (names.empty())
    for (const auto& r : reports) names.push_back(fs::path(r).stem().string());
  if (names.size() != reports.size()) throw Error(ErrorCode::ConfigInvalid, "one --names entry per report");
  const Json table = ablation_report(loaded, names);
  if (!out.empty()) write_text(out, table.dump(2) + "\n");
  std::cout << render_ablation(table);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cross-domain text-to-image retrieval: data, training, evaluation"};
  app.require_subcommand(1);

  std::string task, config, out, data;
  std::uint64_t seed = 0;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset directory");
  gen->add_option("--task", task, "ped or veh")->required();
  gen->add_option("--config", config, "generator config JSON; missing keys keep defaults");
  gen->add_option("--out", out, "output directory")->required();
  gen->add_option("--seed", seed, "generator seed");

  auto* trn = app.add_subcommand("train", "train one branch and write a checkpoint");
  trn->add_option("--config", config, "train config JSON (must name its task)");
  trn->add_option("--task", task, "ped or veh, for task defaults when no --config");
  trn->add_option("--data", data, "dataset directory")->required();
  trn->add_option("--out", out, "checkpoint directory")->required();

  std::string ckpt_ped, ckpt_veh, submission, augment;
  auto* ev = app.add_subcommand("eval", "route, retrieve and score both domains");
  ev->add_option("--ckpt-ped", ckpt_ped, "pedestrian checkpoint")->required();
  ev->add_option("--ckpt-veh", ckpt_veh, "vehicle checkpoint")->required();
  ev->add_option("--data", data, "directory holding ped/ and veh/ datasets")->required();
  ev->add_option("--out", out, "report JSON path")->required();
  ev->add_option("--submission", submission, "submission CSV path")->required();
  ev->add_option("--augment", augment, "override the vehicle color prompt: on or off");

  std::vector<std::string> losses;
  int seeds = 100;
  auto* gc = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients");
  gc->add_option("--loss", losses, "loss names, or all")->delimiter(',');
  gc->add_option("--seeds", seeds, "random batches per loss")->check(CLI::PositiveNumber);

  std::string text;
  auto* rt = app.add_subcommand("route", "route one caption to a domain");
  rt->add_option("--text", text, "caption")->required();
  rt->add_option("--data", data, "train the fallback classifier on ped/ and veh/ here (default: generated)");

  std::string in, palette;
  int side = 8;
  auto* aug = app.add_subcommand("augment", "paint the detected color into the top-left corner of a PPM");
  aug->add_option("--in", in, "input P6 image")->required();
  aug->add_option("--out", out, "output P6 image")->required();
  aug->add_option("--palette", palette, "palette JSON");
  aug->add_option("--side", side, "patch side in pixels");
  std::vector<int> bbox;
  aug->add_option("--bbox", bbox, "detect over x,y,w,h only")->delimiter(',')->expected(4);

  std::vector<std::string> reports, names;
  auto* abl = app.add_subcommand("ablate", "compare eval reports against the first one");
  abl->add_option("--reports", reports, "report JSON files, base first")->required()->expected(2, -1);
  abl->add_option("--names", names, "run names");
  abl->add_option("--out", out, "table JSON path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return cmd_gen_data(task, config, out, seed);
    if (*trn) return cmd_train(config, task, data, out);
    if (*ev) return cmd_eval(ckpt_ped, ckpt_veh, data, out, submission, augment);
    if (*gc) return cmd_gradcheck(losses, seeds);
    if (*rt) return cmd_route(text, data);
    if (*aug) return cmd_augment(in, out, palette, side, bbox);
    if (*abl) return cmd_ablate(reports, names, out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
