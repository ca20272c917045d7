/*
 * (C) Copyright 2026 thalseg developers
 *
 * This software is licensed under the terms of the Apache Licence Version 2.0
 * which can be obtained at http://www.apache.org/licenses/LICENSE-2.0.
 */
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "thalseg.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int report_failure(ts_status st, const std::string& what) {
  std::cerr << "error: " << what << ": " << ts_last_error() << "\n";
  return static_cast<int>(st);
}

std::string take_string(char* s) {
  if (!s) return {};
  std::string out = s;
  ts_string_free(s);
  return out;
}

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in.good()) {
    std::cerr << "error: cannot open config file " << path << "\n";
    std::exit(2);
  }
  return json::parse(in);
}

/// Config precedence: file < environment < flags.
std::string default_out_root() {
  const char* env = std::getenv("THALSEG_OUT_ROOT");
  return env ? env : ".";
}

void apply_jobs(int jobs) {
  if (jobs > 0) {
    ts_set_jobs(jobs);
    return;
  }
  if (const char* env = std::getenv("THALSEG_JOBS")) ts_set_jobs(std::atoi(env));
}

void write_snapshot(const std::string& out_dir, const json& cfg) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  std::ofstream out(fs::path(out_dir) / "resolved_config.json");
  if (out.good()) out << cfg.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"thalseg: cascaded multi-planar thalamic nuclei segmentation toolkit"};
  app.require_subcommand(1);
  int jobs = 0;
  app.add_option("--jobs", jobs, "worker threads for data-parallel steps (0 = auto)");

  // ------------------------------------------------------------- phantom
  auto* cmd_phantom = app.add_subcommand("phantom", "generate a synthetic phantom cohort");
  std::string ph_config, ph_cohort = "control", ph_out;
  int ph_n = 10;
  uint64_t ph_seed = 1;
  std::vector<std::string> ph_atrophy;
  std::string ph_spec_json;
  cmd_phantom->add_option("--config", ph_config, "JSON config file");
  cmd_phantom->add_option("--n", ph_n, "number of subjects");
  cmd_phantom->add_option("--cohort", ph_cohort, "control | ms-like | et-like | synthetic");
  cmd_phantom->add_option("--seed", ph_seed, "cohort seed");
  cmd_phantom->add_option("--out", ph_out, "output directory");
  cmd_phantom->add_option("--atrophy", ph_atrophy,
                          "per-structure atrophy, e.g. AV=0.15 (repeatable)");
  cmd_phantom->add_option("--phantom-spec", ph_spec_json, "phantom spec JSON file");

  // ------------------------------------------------------------- train
  auto* cmd_train = app.add_subcommand("train", "train cascade networks and build a bundle");
  std::string tr_config, tr_data, tr_out, tr_template, tr_finetune, tr_orientation = "all";
  int tr_epochs = -1, tr_batch = -1, tr_stage = 0, tr_depth = -1;
  double tr_lr = -1.0, tr_val_fraction = -1.0;
  uint64_t tr_seed = 0;
  bool tr_seed_set = false, tr_no_augment = false, tr_no_crop = false;
  std::string tr_loss;
  cmd_train->add_option("--config", tr_config, "JSON config file (TrainRun schema)");
  cmd_train->add_option("--data", tr_data, "training manifest (TSV)");
  cmd_train->add_option("--out", tr_out, "output/bundle directory");
  cmd_train->add_option("--template", tr_template, "crop template NIfTI (with .box.json)");
  cmd_train->add_option("--finetune-from", tr_finetune, "bundle to initialize weights from");
  cmd_train->add_option("--stage", tr_stage, "1, 2 or 0 for both");
  cmd_train->add_option("--orientation", tr_orientation, "axial | coronal | sagittal | all");
  cmd_train->add_flag("--all", "train all stages and orientations (default)");
  cmd_train->add_option("--epochs", tr_epochs, "training epochs");
  cmd_train->add_option("--batch", tr_batch, "batch size (2D slices)");
  cmd_train->add_option("--lr", tr_lr, "initial learning rate");
  cmd_train->add_option("--val-fraction", tr_val_fraction, "validation fraction");
  cmd_train->add_option("--loss", tr_loss, "dice | wbce");
  cmd_train->add_option("--seed", tr_seed, "training seed")->each([&](const std::string&) {
    tr_seed_set = true;
  });
  cmd_train->add_option("--depth", tr_depth, "encoder levels");
  cmd_train->add_flag("--no-augment", tr_no_augment, "disable rotation augmentation");
  cmd_train->add_flag("--no-crop", tr_no_crop, "disable template cropping");

  // ------------------------------------------------------------- segment
  auto* cmd_segment = app.add_subcommand("segment", "segment one or more subjects");
  std::string sg_model, sg_input, sg_template, sg_out, sg_manifest;
  bool sg_left_only = false, sg_no_crop = false;
  cmd_segment->add_option("--model", sg_model, "bundle directory")->required();
  cmd_segment->add_option("--input", sg_input, "input image (.nii/.nii.gz)");
  cmd_segment->add_option("--data", sg_manifest, "manifest of subjects to segment");
  cmd_segment->add_option("--template", sg_template, "crop template NIfTI");
  cmd_segment->add_option("--out", sg_out, "output prefix (single) or directory (manifest)");
  cmd_segment->add_flag("--left-only", sg_left_only, "skip the flipped right-hemisphere pass");
  cmd_segment->add_flag("--no-crop", sg_no_crop, "disable template cropping");

  // ------------------------------------------------------------- evaluate
  auto* cmd_evaluate = app.add_subcommand("evaluate", "segment and score labelled subjects");
  std::string ev_model, ev_data, ev_template, ev_out, ev_train_config;
  int ev_kfold = 0;
  uint64_t ev_seed = 0;
  cmd_evaluate->add_option("--model", ev_model, "bundle directory");
  cmd_evaluate->add_option("--data", ev_data, "manifest with reference labels")->required();
  cmd_evaluate->add_option("--template", ev_template, "crop template NIfTI");
  cmd_evaluate->add_option("--out", ev_out, "output directory");
  cmd_evaluate->add_option("--kfold", ev_kfold, "k-fold cross validation (trains per fold)");
  cmd_evaluate->add_option("--config", ev_train_config, "TrainRun JSON (required with --kfold)");
  cmd_evaluate->add_option("--seed", ev_seed, "fold-assignment seed");

  // ------------------------------------------------------------- noise sweep
  auto* cmd_sweep = app.add_subcommand("noise-sweep", "SNR robustness sweep");
  std::string ns_model, ns_image, ns_reference, ns_template, ns_out;
  double ns_from = 23.5, ns_to = 8.0;
  int ns_points = 10;
  uint64_t ns_seed = 0;
  cmd_sweep->add_option("--model", ns_model, "bundle directory")->required();
  cmd_sweep->add_option("--image", ns_image, "pristine magnitude image")->required();
  cmd_sweep->add_option("--reference", ns_reference, "reference label map")->required();
  cmd_sweep->add_option("--template", ns_template, "crop template NIfTI");
  cmd_sweep->add_option("--from", ns_from, "highest target SNR");
  cmd_sweep->add_option("--to", ns_to, "lowest target SNR");
  cmd_sweep->add_option("--points", ns_points, "number of sweep points");
  cmd_sweep->add_option("--seed", ns_seed, "noise seed");
  cmd_sweep->add_option("--out", ns_out, "output directory");

  // ------------------------------------------------------------- stats
  auto* cmd_stats = app.add_subcommand("stats", "ANCOVA over a cohort volume table");
  std::string st_table;
  double st_alpha = 0.05;
  int st_m = 11;
  bool st_json = false;
  cmd_stats->add_option("--table", st_table, "cohort table TSV")->required();
  cmd_stats->add_option("--alpha", st_alpha, "family-wise alpha");
  cmd_stats->add_option("--m", st_m, "number of comparisons (Bonferroni divisor)");
  cmd_stats->add_flag("--json", st_json, "emit JSON instead of text");

  // ------------------------------------------------------------- plot
  auto* cmd_plot = app.add_subcommand("plot", "render result files as SVG");
  std::string pl_kind, pl_data, pl_out;
  cmd_plot->add_option("--kind", pl_kind, "snr-dice | dice-bars | training-curve")->required();
  cmd_plot->add_option("--data", pl_data, "input result file")->required();
  cmd_plot->add_option("--out", pl_out, "output SVG path")->required();

  CLI11_PARSE(app, argc, argv);
  apply_jobs(jobs);

  // ---------------------------------------------------------------------
  if (cmd_phantom->parsed()) {
    json cfg = load_config_file(ph_config);
    if (!ph_spec_json.empty()) cfg["phantom"] = load_config_file(ph_spec_json);
    if (cmd_phantom->count("--n") || !cfg.contains("n")) cfg["n"] = ph_n;
    if (cmd_phantom->count("--cohort") || !cfg.contains("cohort")) cfg["cohort"] = ph_cohort;
    if (cmd_phantom->count("--seed") || !cfg.contains("seed")) cfg["seed"] = ph_seed;
    for (const auto& spec : ph_atrophy) {
      const auto eq = spec.find('=');
      if (eq == std::string::npos) {
        std::cerr << "error: --atrophy expects NAME=RATIO, got '" << spec << "'\n";
        return 2;
      }
      cfg["atrophy"][spec.substr(0, eq)] = std::stod(spec.substr(eq + 1));
    }
    std::string out = !ph_out.empty() ? ph_out
                                      : (cfg.contains("out_dir")
                                             ? cfg["out_dir"].get<std::string>()
                                             : default_out_root() + "/phantom_cohort");
    char* summary = nullptr;
    const ts_status st = ts_phantom_cohort(cfg.dump().c_str(), out.c_str(), &summary);
    if (st != TS_OK) return report_failure(st, "phantom");
    std::cout << take_string(summary) << "\n";
    return 0;
  }

  if (cmd_train->parsed()) {
    json cfg = load_config_file(tr_config);
    if (!tr_data.empty()) cfg["manifest"] = tr_data;
    if (!tr_out.empty()) cfg["out_dir"] = tr_out;
    if (!cfg.contains("out_dir")) cfg["out_dir"] = default_out_root() + "/train_run";
    if (!tr_template.empty()) cfg["template"] = tr_template;
    if (!tr_finetune.empty()) cfg["initialize_from"] = tr_finetune;
    if (cmd_train->count("--stage")) cfg["stage"] = tr_stage;
    if (cmd_train->count("--orientation")) cfg["plane"] = tr_orientation;
    if (cmd_train->count("--all")) {
      cfg["stage"] = 0;
      cfg["plane"] = "all";
    }
    if (tr_no_augment) cfg["augment_enabled"] = false;
    if (tr_no_crop) cfg["preprocess"]["crop_enabled"] = false;
    if (tr_depth > 0) cfg["depth"] = tr_depth;
    json& tcfg = cfg["training"];
    if (tr_epochs > 0) tcfg["epochs"] = tr_epochs;
    if (tr_batch > 0) tcfg["batch_size"] = tr_batch;
    if (tr_lr > 0) tcfg["lr_initial"] = tr_lr;
    if (tr_val_fraction > 0) tcfg["val_fraction"] = tr_val_fraction;
    if (!tr_loss.empty()) tcfg["loss"] = tr_loss;
    if (tr_seed_set) tcfg["seed"] = tr_seed;

    char* summary = nullptr;
    const ts_status st = ts_train(cfg.dump().c_str(), &summary);
    if (st != TS_OK) return report_failure(st, "train");
    std::cout << take_string(summary) << "\n";
    return 0;
  }

  if (cmd_segment->parsed()) {
    json opts;
    opts["bilateral"] = !sg_left_only;
    if (sg_no_crop) opts["preprocess"]["crop_enabled"] = false;
    ts_model* model = nullptr;
    ts_status st = ts_model_load(sg_model.c_str(), &model);
    if (st != TS_OK) return report_failure(st, "segment: loading bundle");

    std::vector<std::pair<std::string, std::string>> inputs;  // (image, out prefix)
    if (!sg_input.empty()) {
      std::string prefix = sg_out.empty() ? fs::path(sg_input).stem().stem().string() : sg_out;
      inputs.push_back({sg_input, prefix});
    } else if (!sg_manifest.empty()) {
      std::ifstream in(sg_manifest);
      if (!in.good()) {
        std::cerr << "error: cannot open manifest " << sg_manifest << "\n";
        ts_model_free(model);
        return 2;
      }
      const std::string out_dir = sg_out.empty() ? default_out_root() + "/segmented" : sg_out;
      fs::create_directories(out_dir);
      std::string line;
      std::getline(in, line);  // header
      while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto tab1 = line.find('\t');
        const auto tab2 = line.find('\t', tab1 + 1);
        if (tab1 == std::string::npos || tab2 == std::string::npos) continue;
        const std::string id = line.substr(0, tab1);
        const fs::path img =
            fs::path(sg_manifest).parent_path() / line.substr(tab1 + 1, tab2 - tab1 - 1);
        inputs.push_back({img.string(), (fs::path(out_dir) / id).string()});
      }
      write_snapshot(out_dir, opts);
    } else {
      std::cerr << "error: segment needs --input or --data\n";
      ts_model_free(model);
      return 2;
    }

    int failures = 0;
    for (const auto& [image, prefix] : inputs) {
      char* summary = nullptr;
      st = ts_segment(model, image.c_str(), sg_template.c_str(), opts.dump().c_str(),
                      prefix.c_str(), &summary);
      if (st != TS_OK) {
        std::cerr << "error: segment " << image << ": " << ts_last_error() << "\n";
        ++failures;
        continue;
      }
      std::cout << take_string(summary) << "\n";
    }
    ts_model_free(model);
    return failures == 0 ? 0 : 1;
  }

  if (cmd_evaluate->parsed()) {
    if (ev_kfold > 0) {
      json cfg = load_config_file(ev_train_config);
      if (cfg.empty()) {
        std::cerr << "error: --kfold needs --config with a TrainRun JSON\n";
        return 2;
      }
      cfg["manifest"] = ev_data;
      if (!ev_out.empty()) cfg["out_dir"] = ev_out;
      if (!ev_template.empty()) cfg["template"] = ev_template;
      char* summary = nullptr;
      const ts_status st = ts_crossval(cfg.dump().c_str(), ev_kfold, ev_seed, &summary);
      if (st != TS_OK) return report_failure(st, "evaluate --kfold");
      std::cout << take_string(summary) << "\n";
      return 0;
    }
    if (ev_model.empty()) {
      std::cerr << "error: evaluate needs --model (or --kfold with --config)\n";
      return 2;
    }
    json cfg;
    cfg["manifest"] = ev_data;
    cfg["bundle"] = ev_model;
    cfg["template"] = ev_template;
    cfg["out_dir"] = ev_out.empty() ? default_out_root() + "/evaluation" : ev_out;
    write_snapshot(cfg["out_dir"].get<std::string>(), cfg);
    char* summary = nullptr;
    const ts_status st = ts_evaluate(cfg.dump().c_str(), &summary);
    if (st != TS_OK) return report_failure(st, "evaluate");
    const std::string text = take_string(summary);
    const json parsed = json::parse(text);
    std::cout << text << "\n";
    const auto table = fs::path(cfg["out_dir"].get<std::string>()) / "evaluation_table.txt";
    std::ifstream tin(table);
    if (tin.good()) std::cout << tin.rdbuf();
    return parsed.contains("failures") && !parsed["failures"].empty() ? 1 : 0;
  }

  if (cmd_sweep->parsed()) {
    json cfg;
    cfg["bundle"] = ns_model;
    cfg["image"] = ns_image;
    cfg["reference"] = ns_reference;
    cfg["template"] = ns_template;
    cfg["snr_from"] = ns_from;
    cfg["snr_to"] = ns_to;
    cfg["points"] = ns_points;
    cfg["seed"] = ns_seed;
    cfg["out_dir"] = ns_out.empty() ? default_out_root() + "/noise_sweep" : ns_out;
    write_snapshot(cfg["out_dir"].get<std::string>(), cfg);
    char* report = nullptr;
    const ts_status st = ts_noise_sweep(cfg.dump().c_str(), &report);
    if (st != TS_OK) return report_failure(st, "noise-sweep");
    std::cout << take_string(report) << "\n";
    return 0;
  }

  if (cmd_stats->parsed()) {
    char* result = nullptr;
    const ts_status st = ts_stats_ancova(st_table.c_str(), st_alpha, st_m, &result);
    if (st != TS_OK) return report_failure(st, "stats");
    const std::string text = take_string(result);
    if (st_json) {
      std::cout << text << "\n";
      return 0;
    }
    const json j = json::parse(text);
    std::printf("ANCOVA: volume ~ group + age + gender + PI + ICV\n");
    for (const auto& e : j["entries"])
      std::printf("%-20s (F [%d,%d] = %.3g, p = %.4g)%s\n",
                  e["structure"].get<std::string>().c_str(), e["df1"].get<int>(),
                  e["df2"].get<int>(), e["f"].get<double>(), e["p"].get<double>(),
                  e["significant"].get<bool>() ? "  *" : "");
    std::printf("Bonferroni corrected alpha: %.3g/%d = %.4g\n", j["alpha"].get<double>(),
                j["comparisons"].get<int>(), j["bonferroni_alpha"].get<double>());
    return 0;
  }

  if (cmd_plot->parsed()) {
    const ts_status st = ts_plot(pl_kind.c_str(), pl_data.c_str(), pl_out.c_str());
    if (st != TS_OK) return report_failure(st, "plot");
    std::cout << "wrote " << pl_out << "\n";
    return 0;
  }

  return 0;
}
