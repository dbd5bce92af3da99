#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "simseg/config.hpp"
#include "simseg/data.hpp"
#include "simseg/phantom.hpp"
#include "simseg/png_io.hpp"
#include "simseg/rng.hpp"
#include "simseg/trainer.hpp"

namespace fs = std::filesystem;
using simseg::Json;

namespace {

// Options every subcommand shares. Dedicated flags become overrides on top
// of --set, which sits on top of the config file.
struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool verbose = false;
  std::vector<std::pair<std::string, std::string>> flag_overrides;
};

void add_common(CLI::App* cmd, Common& c, bool needs_out = true) {
  cmd->add_option("--config", c.config_file, "JSON config file")
      ->check(CLI::ExistingFile);
  cmd->add_option("--set", c.sets, "Override a config key (section.key=value)")
      ->take_all();
  cmd->add_option("--seed", c.seed, "Master seed (config key: seed)");
  auto* out = cmd->add_option("--out", c.out, "Run directory");
  if (needs_out) out->required();
  cmd->add_flag("--verbose", c.verbose, "Per-epoch progress on stderr");
}

void flag_override(Common& c, const std::string& key, const std::string& value) {
  c.flag_overrides.emplace_back(key, value);
}

simseg::RunConfig resolve(const std::string& command, Common& c) {
  std::vector<std::string> overrides = c.sets;
  if (c.seed) flag_override(c, "seed", std::to_string(*c.seed));
  for (const auto& [k, v] : c.flag_overrides) overrides.push_back(k + "=" + v);
  simseg::RunConfig cfg = simseg::resolve_config(c.config_file, overrides);
  std::fprintf(stderr, "simseg %s: defaults < %s", command.c_str(),
               c.config_file.empty() ? "(no file)" : c.config_file.c_str());
  for (const auto& o : overrides) std::fprintf(stderr, " < %s", o.c_str());
  std::fprintf(stderr, "\n");
  return cfg;
}

fs::path make_run_dir(const std::string& out, const simseg::RunConfig& cfg) {
  const fs::path dir(out);
  fs::create_directories(dir);
  std::ofstream f(dir / "config.json");
  if (!f) throw simseg::DataError("cannot write " + (dir / "config.json").string());
  f << simseg::to_json(cfg).dump(2) << "\n";
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw simseg::DataError("cannot write " + path.string());
  f << text;
}

fs::path require_dir(const std::string& p, const char* what) {
  if (!fs::is_directory(p))
    throw simseg::DataError(std::string(what) + " directory not found: " + p);
  return p;
}

// --- processed dataset -------------------------------------------------------
//
// <data>/split.json, stats.json, stats.txt, config.json,
// <data>/pretrain/<pid>/ and <data>/finetune/<pid>/ (export_png layout).

simseg::SplitSpec read_split(const fs::path& data) {
  const fs::path p = data / "split.json";
  std::ifstream in(p);
  if (!in) throw simseg::DataError("split manifest not found: " + p.string());
  try {
    const Json j = Json::parse(in);
    simseg::SplitSpec s;
    s.train = j.at("train").get<std::vector<std::string>>();
    s.val = j.at("val").get<std::vector<std::string>>();
    s.test = j.at("test").get<std::vector<std::string>>();
    s.seed = j.at("seed").get<std::uint64_t>();
    return s;
  } catch (const Json::exception& e) {
    throw simseg::DataError("malformed split manifest " + p.string() + ": " +
                            e.what());
  }
}

std::vector<std::string> all_ids(const simseg::SplitSpec& s) {
  std::vector<std::string> ids = s.train;
  ids.insert(ids.end(), s.val.begin(), s.val.end());
  ids.insert(ids.end(), s.test.begin(), s.test.end());
  return ids;
}

const std::vector<std::string>& split_ids(const simseg::SplitSpec& s,
                                          const std::string& name) {
  if (name == "train") return s.train;
  if (name == "val") return s.val;
  if (name == "test") return s.test;
  throw simseg::ConfigError("unknown split '" + name +
                            "' (expected train, val or test)");
}

std::vector<simseg::PreparedRoi> read_rois(const fs::path& dir,
                                           const std::vector<std::string>& ids) {
  std::vector<simseg::PreparedRoi> rois;
  for (const auto& id : ids) rois.push_back(simseg::import_png(dir / id, nullptr));
  return rois;
}

std::optional<simseg::AugmentConfig> augment_of(const simseg::RunConfig& cfg) {
  if (!cfg.augment_enabled) return std::nullopt;
  return cfg.augment;
}

simseg::EvalSettings eval_of(const simseg::RunConfig& cfg) {
  return {cfg.eval.threshold, cfg.eval.units, cfg.eval.level};
}

simseg::NetworkConfig network_2d(const simseg::RunConfig& cfg) {
  simseg::NetworkConfig c = cfg.network;
  c.mode = simseg::InputMode::slice2d;
  c.stack_depth = 1;
  c.use_sim = false;
  c.validate();
  return c;
}

std::string model_name(const simseg::Checkpoint& ck) {
  std::string n = ck.config.mode == simseg::InputMode::slice2d ? "2D" : "2.5D";
  if (ck.meta.stage == "finetune") n += " finetuned";
  else if (ck.meta.stage == "pretrain") n += " pretrained";
  else n += " baseline";
  if (ck.config.use_sim) n += " + SIM";
  return n;
}

Json summary_json(const simseg::MetricsSummary& s) {
  Json j{{"level", simseg::to_string(s.level)},
         {"iou", s.iou},
         {"dice", s.dice},
         {"acc", s.acc},
         {"n_records", s.n_records},
         {"n_groups", s.n_groups},
         {"hd95_undefined", s.hd95_undefined}};
  j["hd95"] = s.hd95 ? Json(*s.hd95) : Json(nullptr);
  return j;
}

void write_records(const fs::path& path,
                   const std::vector<simseg::MetricsRecord>& records) {
  std::ofstream f(path);
  if (!f) throw simseg::DataError("cannot write " + path.string());
  for (const auto& r : records) {
    Json j{{"patient_id", r.patient_id},
           {"slice", r.slice_index},
           {"iou", r.iou},
           {"dice", r.dice},
           {"acc", r.acc},
           {"n_pixels", r.n_pixels}};
    j["hd95"] = r.hd95 ? Json(*r.hd95) : Json(nullptr);
    f << j.dump() << "\n";
  }
}

void write_train_summary(const fs::path& dir, const simseg::TrainResult& r) {
  Json j{{"stage", r.checkpoint.meta.stage},
         {"best_epoch", r.checkpoint.meta.epoch},
         {"best_val_iou", r.checkpoint.meta.best_val_iou},
         {"epochs_run", r.history.size()},
         {"stopped_early", r.stopped_early},
         {"seed", r.checkpoint.meta.seed}};
  write_text(dir / "summary.json", j.dump(2) + "\n");
}

// --- overlays ----------------------------------------------------------------

// CT slice in grey with the ground truth outlined in red and the prediction in
// green, upsampled to the export size.
simseg::RgbImage overlay(const simseg::SliceSample& s, const simseg::Tensor& pred,
                         int depth) {
  const int h = s.input.h(), w = s.input.w(), S = simseg::kExportSize;
  simseg::RgbImage img{S, S, std::vector<std::uint8_t>(3u * S * S)};
  auto src = [&](int y, int x) { return std::pair{y * h / S, x * w / S}; };
  auto edge = [&](const simseg::Tensor& m, int y, int x) {
    auto on = [&](int yy, int xx) {
      if (yy < 0 || xx < 0 || yy >= S || xx >= S) return false;
      const auto [r, c] = src(yy, xx);
      return m(0, 0, r, c) > 0.5;
    };
    return on(y, x) &&
           !(on(y - 1, x) && on(y + 1, x) && on(y, x - 1) && on(y, x + 1));
  };
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      const auto [r, c] = src(y, x);
      const auto g = static_cast<std::uint8_t>(s.input(0, depth / 2, r, c));
      std::uint8_t* px = &img.pixels[3u * (static_cast<std::size_t>(y) * S + x)];
      px[0] = px[1] = px[2] = g;
      if (edge(s.target, y, x)) {
        px[0] = 255;
        px[1] = px[2] = 0;
      }
      if (edge(pred, y, x)) {
        px[1] = 255;
        px[0] = px[2] = 0;
      }
    }
  return img;
}

// --- commands ----------------------------------------------------------------

int cmd_phantom_gen(Common& c, int patients_flag) {
  if (patients_flag > 0)
    flag_override(c, "phantom.patients", std::to_string(patients_flag));
  const simseg::RunConfig cfg = resolve("phantom-gen", c);
  const fs::path dir = make_run_dir(c.out, cfg);
  const auto cohort = simseg::phantom_cohort(cfg.phantom_patients, cfg.phantom,
                                             cfg.seed);
  std::vector<simseg::PatientStudy> studies;
  Json index = Json::array();
  for (const auto& p : cohort) {
    studies.push_back(p.study);
    index.push_back({{"patient_id", p.study.patient_id},
                     {"seed", p.seed},
                     {"motion_amplitude_mm", p.config.motion_amplitude_mm},
                     {"tumor_semi_axes_mm", p.config.tumor_semi_axes_mm},
                     {"tumor_suv_peak", p.config.tumor_suv_peak},
                     {"scanner", p.config.scanner}});
  }
  simseg::write_cohort(studies, dir);
  write_text(dir / "phantoms.json", index.dump(2) + "\n");
  std::printf("wrote %zu phantom studies to %s\n", studies.size(),
              dir.string().c_str());
  return 0;
}

std::string stats_text(const std::string& roi, const simseg::DatasetStats& s) {
  auto line = [](const char* name, const simseg::Distribution& d) {
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "  %-15s mean %9.3f  sd %9.3f  median %9.3f  range [%.3f, %.3f]\n",
                  name, d.mean, d.sd, d.median, d.min, d.max);
    return std::string(buf);
  };
  std::string t = roi + ": " + std::to_string(s.n_rois) + " ROIs, " +
                  std::to_string(s.n_patients) + " patients\n";
  t += line("slices", s.slices_per_roi);
  t += line("volume_cc", s.volume_cc);
  t += line("suv_max", s.suv_max);
  for (const auto& [scanner, n] : s.scanners)
    t += "  scanner " + scanner + ": " + std::to_string(n) + "\n";
  return t;
}

Json stats_json(const simseg::DatasetStats& s) {
  auto dist = [](const simseg::Distribution& d) {
    return Json{{"mean", d.mean}, {"sd", d.sd}, {"median", d.median},
                {"min", d.min},   {"max", d.max}};
  };
  return {{"n_patients", s.n_patients},
          {"n_rois", s.n_rois},
          {"slices_per_roi", dist(s.slices_per_roi)},
          {"volume_cc", dist(s.volume_cc)},
          {"suv_max", dist(s.suv_max)},
          {"scanners", s.scanners}};
}

int cmd_preprocess(Common& c, const std::string& cohort_dir) {
  const simseg::RunConfig cfg = resolve("preprocess", c);
  const auto studies = simseg::read_cohort(require_dir(cohort_dir, "cohort"));
  const fs::path dir = make_run_dir(c.out, cfg);
  const std::string& pre_roi = cfg.data.pretrain_roi;
  const std::string& fine_roi = cfg.data.finetune_roi;

  std::vector<simseg::PatientStudy> accepted;
  Json excluded = Json::array();
  for (const auto& s : studies) {
    std::string reason;
    for (const std::string& name : {pre_roi, fine_roi}) {
      const simseg::QcResult qc = simseg::qc_filter(s.roi(name));
      if (!qc.accepted) reason += (reason.empty() ? "" : ";") + name + ":" + qc.reason;
      if (pre_roi == fine_roi) break;
    }
    if (reason.empty())
      accepted.push_back(s);
    else
      excluded.push_back({{"patient_id", s.patient_id}, {"reason", reason}});
  }
  if (accepted.size() < 3)
    throw simseg::DataError("only " + std::to_string(accepted.size()) +
                            " studies pass QC; a split needs at least 3");

  std::vector<std::string> ids;
  for (const auto& s : accepted) ids.push_back(s.patient_id);
  const simseg::SplitSpec split =
      simseg::patient_split(ids, cfg.data.split_ratios, cfg.seed);
  const Json manifest{{"seed", split.seed},
                      {"ratios", cfg.data.split_ratios},
                      {"train", split.train},
                      {"val", split.val},
                      {"test", split.test},
                      {"excluded", excluded}};
  write_text(dir / "split.json", manifest.dump(2) + "\n");

  for (const auto& s : accepted) {
    const simseg::Spacing sp = s.ct.spacing();
    simseg::export_png(simseg::prepare_roi(s, pre_roi, cfg.data.pretrain_window),
                       dir / "pretrain" / s.patient_id, sp);
    simseg::export_png(simseg::prepare_roi(s, fine_roi, cfg.data.finetune_window),
                       dir / "finetune" / s.patient_id, sp);
  }

  Json stats;
  std::string text;
  for (const std::string& name : {pre_roi, fine_roi}) {
    if (stats.contains(name)) continue;
    const simseg::DatasetStats st = simseg::dataset_stats(accepted, name);
    stats[name] = stats_json(st);
    text += stats_text(name, st);
  }
  write_text(dir / "stats.json", stats.dump(2) + "\n");
  write_text(dir / "stats.txt", text);
  std::printf("%zu/%zu studies accepted; split %zu/%zu/%zu\n%s", accepted.size(),
              studies.size(), split.train.size(), split.val.size(),
              split.test.size(), text.c_str());
  return 0;
}

simseg::TrainOptions train_options(const Common& c, const simseg::RunConfig& cfg,
                                   const fs::path& dir, const std::string& stage) {
  simseg::TrainOptions o;
  o.seed = cfg.seed;
  o.augment = augment_of(cfg);
  o.stage = stage;
  o.run_dir = dir;
  o.verbose = c.verbose;
  return o;
}

int cmd_pretrain(Common& c, const std::string& data_dir, int epochs) {
  if (epochs > 0) flag_override(c, "pretrain.max_epochs", std::to_string(epochs));
  const simseg::RunConfig cfg = resolve("pretrain", c);
  const fs::path data = require_dir(data_dir, "data");
  const simseg::SplitSpec split = read_split(data);
  const auto rois = read_rois(data / "pretrain", all_ids(split));
  const std::string roi = rois.front().roi_name;
  const simseg::Dataset train = simseg::make_dataset(rois, split.train, roi, 1);
  const simseg::Dataset val = simseg::make_dataset(rois, split.val, roi, 1);
  const fs::path dir = make_run_dir(c.out, cfg);
  fs::remove(dir / "metrics.jsonl");

  simseg::SegNetwork net = simseg::build_network(
      network_2d(cfg), simseg::derive_seed(cfg.seed, 0x1417));
  const simseg::TrainResult r = simseg::pretrain_gtv(
      net, train, val, cfg.pretrain, train_options(c, cfg, dir, "pretrain"));
  simseg::save_checkpoint(r.checkpoint, dir / "checkpoint.bin");
  write_train_summary(dir, r);
  std::printf("pretrain: best epoch %d, val IoU %.4f -> %s\n",
              r.checkpoint.meta.epoch, r.checkpoint.meta.best_val_iou,
              (dir / "checkpoint.bin").string().c_str());
  return 0;
}

int cmd_finetune(Common& c, const std::string& data_dir,
                 const std::string& pretrained, int epochs) {
  if (epochs > 0) flag_override(c, "finetune.max_epochs", std::to_string(epochs));
  const simseg::RunConfig cfg = resolve("finetune", c);
  const simseg::Checkpoint ck = simseg::load_checkpoint(pretrained);
  const fs::path data = require_dir(data_dir, "data");
  const simseg::SplitSpec split = read_split(data);
  const auto rois = read_rois(data / "finetune", all_ids(split));
  const std::string roi = rois.front().roi_name;
  const int depth = cfg.network.stack_depth;
  const simseg::Dataset train = simseg::make_dataset(rois, split.train, roi, depth);
  const simseg::Dataset val = simseg::make_dataset(rois, split.val, roi, depth);
  const fs::path dir = make_run_dir(c.out, cfg);
  fs::remove(dir / "metrics.jsonl");

  const simseg::TrainResult r =
      simseg::finetune_igtv(ck, cfg.network, train, val, cfg.finetune,
                            cfg.early_stop, train_options(c, cfg, dir, "finetune"));
  simseg::save_checkpoint(r.checkpoint, dir / "checkpoint.bin");
  write_train_summary(dir, r);
  std::printf("finetune: best epoch %d, val IoU %.4f -> %s\n",
              r.checkpoint.meta.epoch, r.checkpoint.meta.best_val_iou,
              (dir / "checkpoint.bin").string().c_str());
  return 0;
}

// Dataset for a checkpoint: the pre-training set for stage-1 networks, the
// fine-tuning set otherwise, at the network's stack depth.
simseg::Dataset checkpoint_dataset(const simseg::Checkpoint& ck,
                                   const fs::path& data,
                                   const std::string& split_name,
                                   std::vector<simseg::PreparedRoi>* rois_out) {
  const simseg::SplitSpec split = read_split(data);
  const auto& ids = split_ids(split, split_name);
  const char* sub = ck.meta.stage == "pretrain" ? "pretrain" : "finetune";
  auto rois = read_rois(data / sub, ids);
  const simseg::Dataset d = simseg::make_dataset(
      rois, ids, rois.front().roi_name, ck.config.stack_depth);
  if (rois_out) *rois_out = std::move(rois);
  return d;
}

int evaluate_dirs(Common& c, const std::string& pred_dir,
                  const std::string& gt_dir, const std::string& name) {
  const simseg::RunConfig cfg = resolve("evaluate", c);
  const fs::path pred = require_dir(pred_dir, "prediction");
  const fs::path gt = require_dir(gt_dir, "ground-truth");
  std::vector<fs::path> cases;
  for (const auto& e : fs::directory_iterator(pred))
    if (fs::exists(e.path() / "meta.txt")) cases.push_back(e.path().filename());
  std::sort(cases.begin(), cases.end());
  if (cases.empty())
    throw simseg::DataError("no mask directories under " + pred.string());

  std::vector<simseg::MetricsRecord> records;
  for (const auto& id : cases) {
    if (!fs::exists(gt / id / "meta.txt"))
      throw simseg::DataError("no ground truth for " + id.string() + " in " +
                              gt.string());
    const simseg::BinaryMask g = simseg::import_mask_png(gt / id);
    const simseg::BinaryMask p = simseg::import_mask_png(pred / id);
    if (!g.same_dims(p))
      throw simseg::InputError("prediction grid for " + id.string() +
                               " differs from the ground truth");
    const simseg::Spacing sp = g.spacing();
    for (int t = 0; t < g.depth(); ++t) {
      simseg::BinaryMask gs(1, g.height(), g.width(), sp);
      simseg::BinaryMask ps(1, g.height(), g.width(), sp);
      std::copy_n(g.slice(t), g.plane_size(), gs.values().data());
      std::copy_n(p.slice(t), g.plane_size(), ps.values().data());
      if (simseg::count_foreground(gs) == 0) continue;
      simseg::MetricsRecord r = simseg::evaluate_pair(ps, gs, cfg.eval.units);
      r.patient_id = id.string();
      r.slice_index = t;
      records.push_back(std::move(r));
    }
  }
  const fs::path dir = make_run_dir(c.out, cfg);
  const simseg::MetricsSummary s = simseg::aggregate(records, cfg.eval.level);
  const std::string table = simseg::format_report({{name, s}});
  write_text(dir / "report.txt", table);
  write_text(dir / "summary.json", summary_json(s).dump(2) + "\n");
  write_records(dir / "records.jsonl", records);
  std::printf("%s", table.c_str());
  return 0;
}

int cmd_evaluate(Common& c, const std::string& checkpoint,
                 const std::string& data_dir, const std::string& split_name,
                 const std::string& pred_dir, const std::string& gt_dir,
                 std::string name) {
  if (!pred_dir.empty() || !gt_dir.empty()) {
    if (pred_dir.empty() || gt_dir.empty())
      throw simseg::ConfigError("--pred-dir and --gt-dir go together");
    return evaluate_dirs(c, pred_dir, gt_dir, name.empty() ? "prediction" : name);
  }
  if (checkpoint.empty() || data_dir.empty())
    throw simseg::ConfigError(
        "evaluate needs --checkpoint and --data, or --pred-dir and --gt-dir");
  const simseg::RunConfig cfg = resolve("evaluate", c);
  const simseg::Checkpoint ck = simseg::load_checkpoint(checkpoint);
  const simseg::Dataset d =
      checkpoint_dataset(ck, require_dir(data_dir, "data"), split_name, nullptr);
  const simseg::EvalResult ev = simseg::evaluate(ck, d, eval_of(cfg));
  const fs::path dir = make_run_dir(c.out, cfg);
  if (name.empty()) name = model_name(ck);
  const std::string table = simseg::format_report({{name, ev.summary}});
  write_text(dir / "report.txt", table);
  write_text(dir / "summary.json", summary_json(ev.summary).dump(2) + "\n");
  write_records(dir / "records.jsonl", ev.records);
  std::printf("%s", table.c_str());
  return 0;
}

int cmd_predict(Common& c, const std::string& checkpoint,
                const std::string& data_dir, const std::string& split_name,
                bool overlays) {
  const simseg::RunConfig cfg = resolve("predict", c);
  const simseg::Checkpoint ck = simseg::load_checkpoint(checkpoint);
  std::vector<simseg::PreparedRoi> rois;
  const simseg::Dataset d = checkpoint_dataset(
      ck, require_dir(data_dir, "data"), split_name, &rois);
  const simseg::SegNetwork net = simseg::restore_network(ck);
  const std::vector<simseg::Tensor> logits = simseg::predict_logits(net, d);
  const fs::path dir = make_run_dir(c.out, cfg);
  if (overlays) fs::create_directories(dir / "overlays");

  std::size_t k = 0;
  for (const auto& roi : rois) {
    // Slices outside the ROI's extent are not segmented and stay empty.
    simseg::BinaryMask m(roi.mask.depth(), roi.mask.height(), roi.mask.width(),
                         roi.mask.spacing());
    for (; k < d.size() && d.samples[k].patient_id == roi.patient_id; ++k) {
      const simseg::SliceSample& s = d.samples[k];
      const simseg::Tensor p = simseg::predict_mask(logits[k], cfg.eval.threshold);
      std::uint8_t* dst = m.slice(s.slice_index);
      for (std::size_t i = 0; i < m.plane_size(); ++i) dst[i] = p[i] > 0.5;
      if (overlays) {
        char name[64];
        std::snprintf(name, sizeof name, "%s_%03d.png", s.patient_id.c_str(),
                      s.slice_index);
        simseg::write_png(dir / "overlays" / name,
                          overlay(s, p, ck.config.stack_depth));
      }
    }
    simseg::export_mask_png(m, dir / "masks" / roi.patient_id);
  }
  std::printf("predicted %zu slices of %zu patients -> %s\n", d.size(),
              rois.size(), (dir / "masks").string().c_str());
  return 0;
}

int cmd_ablation(Common& c, const std::string& data_dir, int pretrain_epochs,
                 int finetune_epochs) {
  if (pretrain_epochs > 0)
    flag_override(c, "pretrain.max_epochs", std::to_string(pretrain_epochs));
  if (finetune_epochs > 0)
    flag_override(c, "finetune.max_epochs", std::to_string(finetune_epochs));
  const simseg::RunConfig cfg = resolve("ablation", c);
  const fs::path data = require_dir(data_dir, "data");
  const simseg::SplitSpec split = read_split(data);
  const auto ids = all_ids(split);
  const simseg::AblationData ad = simseg::make_ablation_data(
      read_rois(data / "pretrain", ids), read_rois(data / "finetune", ids), split);
  const fs::path dir = make_run_dir(c.out, cfg);
  fs::remove(dir / "metrics.jsonl");

  simseg::AblationSettings st;
  st.network = cfg.network;
  st.pretrain = cfg.pretrain;
  st.finetune = cfg.finetune;
  st.stop = cfg.early_stop;
  st.augment = augment_of(cfg);
  st.eval = eval_of(cfg);
  st.seed = cfg.seed;
  st.run_dir = dir;
  st.verbose = c.verbose;
  const simseg::AblationResult r =
      simseg::run_ablation(simseg::default_ablation_matrix(), ad, st);
  Json rows = Json::array();
  for (const auto& row : r.rows)
    rows.push_back({{"model", row.name}, {"metrics", summary_json(row.summary)}});
  write_text(dir / "report.txt", r.table);
  write_text(dir / "report.json", rows.dump(2) + "\n");
  std::printf("%s", r.table.c_str());
  return 0;
}

void print_error(const char* kind, int code, const std::string& message) {
  std::cerr << Json{{"error", kind}, {"code", code}, {"message", message}}.dump()
            << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PET/CT tumour segmentation with slice interaction"};
  app.require_subcommand(1);

  Common c;
  int patients = 0, epochs = 0, pre_epochs = 0, fine_epochs = 0;
  std::string cohort, data, pretrained, checkpoint, split = "test", pred_dir,
                                                         gt_dir, name;
  bool no_overlays = false;

  auto* gen = app.add_subcommand("phantom-gen", "Generate a synthetic cohort");
  add_common(gen, c);
  gen->add_option("--patients", patients, "Cohort size (config key: phantom.patients)");

  auto* pre = app.add_subcommand("preprocess",
                                 "QC, split, windowing and PNG export of a cohort");
  add_common(pre, c);
  pre->add_option("--cohort", cohort, "Cohort directory")->required();

  auto* pt = app.add_subcommand("pretrain", "Stage 1: 2D network on GTV targets");
  add_common(pt, c);
  pt->add_option("--data", data, "Processed dataset")->required();
  pt->add_option("--epochs", epochs, "Config key: pretrain.max_epochs");

  auto* ft = app.add_subcommand("finetune",
                                "Stage 2: inflate to 2.5D and train on IGTV targets");
  add_common(ft, c);
  ft->add_option("--data", data, "Processed dataset")->required();
  ft->add_option("--pretrained", pretrained, "Stage-1 checkpoint")->required();
  ft->add_option("--epochs", epochs, "Config key: finetune.max_epochs");

  auto* ev = app.add_subcommand("evaluate", "Metrics report for a checkpoint or masks");
  add_common(ev, c);
  ev->add_option("--checkpoint", checkpoint, "Checkpoint to evaluate");
  ev->add_option("--data", data, "Processed dataset");
  ev->add_option("--split", split, "train, val or test")->capture_default_str();
  ev->add_option("--pred-dir", pred_dir, "Predicted mask directories");
  ev->add_option("--gt-dir", gt_dir, "Ground-truth mask directories");
  ev->add_option("--name", name, "Row label in the report");

  auto* pr = app.add_subcommand("predict", "Mask PNGs and contour overlays");
  add_common(pr, c);
  pr->add_option("--checkpoint", checkpoint, "Checkpoint")->required();
  pr->add_option("--data", data, "Processed dataset")->required();
  pr->add_option("--split", split, "train, val or test")->capture_default_str();
  pr->add_flag("--no-overlays", no_overlays, "Skip the overlay figures");

  auto* ab = app.add_subcommand("ablation", "Four-row ablation report");
  add_common(ab, c);
  ab->add_option("--data", data, "Processed dataset")->required();
  ab->add_option("--pretrain-epochs", pre_epochs, "Config key: pretrain.max_epochs");
  ab->add_option("--finetune-epochs", fine_epochs, "Config key: finetune.max_epochs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("config", 2, e.what());
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_phantom_gen(c, patients);
    if (pre->parsed()) return cmd_preprocess(c, cohort);
    if (pt->parsed()) return cmd_pretrain(c, data, epochs);
    if (ft->parsed()) return cmd_finetune(c, data, pretrained, epochs);
    if (ev->parsed())
      return cmd_evaluate(c, checkpoint, data, split, pred_dir, gt_dir, name);
    if (pr->parsed()) return cmd_predict(c, checkpoint, data, split, !no_overlays);
    if (ab->parsed()) return cmd_ablation(c, data, pre_epochs, fine_epochs);
  } catch (const simseg::Error& e) {
    print_error(e.kind(), e.exit_code(), e.what());
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    print_error("data", 3, e.what());
    return 3;
  } catch (const std::exception& e) {
    print_error("internal", 1, e.what());
    return 1;
  }
  return 0;
}
