#include "simseg/config.hpp"

#include <fstream>

namespace simseg {
namespace {

std::string units_str(DistanceUnits u) {
  return u == DistanceUnits::mm ? "mm" : "pixels";
}

DistanceUnits parse_units(const std::string& s) {
  if (s == "mm") return DistanceUnits::mm;
  if (s == "pixels") return DistanceUnits::pixels;
  throw ConfigError("unknown distance units '" + s + "'");
}

Json window_json(const HuWindow& w) { return {w.lo, w.hi}; }
HuWindow window_from(const Json& j) {
  const auto v = j.get<std::array<double, 2>>();
  return {v[0], v[1]};
}

Json optim_json(const OptimConfig& o) {
  Json j = {{"lr", o.lr},
            {"lr_min", o.lr_min},
            {"beta1", o.beta1},
            {"beta2", o.beta2},
            {"eps", o.eps},
            {"weight_decay", o.weight_decay},
            {"schedule", to_string(o.schedule)},
            {"batch_size", o.batch_size},
            {"max_epochs", o.max_epochs},
            {"mixed_precision", o.mixed_precision}};
  j["grad_clip"] = o.grad_clip ? Json(*o.grad_clip) : Json(nullptr);
  return j;
}

OptimConfig optim_from(const Json& j) {
  OptimConfig o;
  o.lr = j.at("lr").get<double>();
  o.lr_min = j.at("lr_min").get<double>();
  o.beta1 = j.at("beta1").get<double>();
  o.beta2 = j.at("beta2").get<double>();
  o.eps = j.at("eps").get<double>();
  o.weight_decay = j.at("weight_decay").get<double>();
  o.schedule = parse_schedule(j.at("schedule").get<std::string>());
  o.batch_size = j.at("batch_size").get<int>();
  o.max_epochs = j.at("max_epochs").get<int>();
  o.mixed_precision = j.at("mixed_precision").get<bool>();
  if (!j.at("grad_clip").is_null()) o.grad_clip = j.at("grad_clip").get<double>();
  return o;
}

Json augment_json(const AugmentConfig& a, bool enabled) {
  return {{"enabled", enabled},
          {"shift_frac", a.shift_frac},
          {"scale_range", {a.scale_min, a.scale_max}},
          {"hflip_prob", a.hflip_prob},
          {"crop_area_range", {a.crop_area_min, a.crop_area_max}},
          {"per_op_prob", a.per_op_prob}};
}

AugmentConfig augment_from(const Json& j) {
  AugmentConfig a;
  a.shift_frac = j.at("shift_frac").get<double>();
  const auto s = j.at("scale_range").get<std::array<double, 2>>();
  a.scale_min = s[0];
  a.scale_max = s[1];
  a.hflip_prob = j.at("hflip_prob").get<double>();
  const auto c = j.at("crop_area_range").get<std::array<double, 2>>();
  a.crop_area_min = c[0];
  a.crop_area_max = c[1];
  a.per_op_prob = j.at("per_op_prob").get<double>();
  return a;
}

Json phantom_json(const CohortDistribution& d, int patients) {
  const PhantomConfig& b = d.base;
  return {{"patients", patients},
          {"dims", {b.depth, b.height, b.width}},
          {"spacing_mm", {b.spacing.x, b.spacing.y, b.spacing.z}},
          {"n_phases", b.n_phases},
          {"background_suv", b.background_suv},
          {"lung_suv", b.lung_suv},
          {"ct_noise_sigma", b.ct_noise_sigma},
          {"pet_noise_sigma", b.pet_noise_sigma},
          {"pet_blur_fwhm_mm", b.pet_blur_fwhm_mm},
          {"semi_axis_range_mm", {d.semi_axis_min_mm, d.semi_axis_max_mm}},
          {"amplitude_range_mm", {d.amplitude_min_mm, d.amplitude_max_mm}},
          {"suv_peak_range", {d.suv_peak_min, d.suv_peak_max}},
          {"heart_suv_range", {d.heart_suv_min, d.heart_suv_max}},
          {"scanners", d.scanners}};
}

CohortDistribution phantom_from(const Json& j, int& patients) {
  CohortDistribution d;
  patients = j.at("patients").get<int>();
  const auto dims = j.at("dims").get<std::array<int, 3>>();
  d.base.depth = dims[0];
  d.base.height = dims[1];
  d.base.width = dims[2];
  const auto sp = j.at("spacing_mm").get<std::array<double, 3>>();
  d.base.spacing = {sp[0], sp[1], sp[2]};
  d.base.n_phases = j.at("n_phases").get<int>();
  d.base.background_suv = j.at("background_suv").get<double>();
  d.base.lung_suv = j.at("lung_suv").get<double>();
  d.base.ct_noise_sigma = j.at("ct_noise_sigma").get<double>();
  d.base.pet_noise_sigma = j.at("pet_noise_sigma").get<double>();
  d.base.pet_blur_fwhm_mm = j.at("pet_blur_fwhm_mm").get<double>();
  auto range = [&](const char* key, double& lo, double& hi) {
    const auto r = j.at(key).get<std::array<double, 2>>();
    lo = r[0];
    hi = r[1];
  };
  range("semi_axis_range_mm", d.semi_axis_min_mm, d.semi_axis_max_mm);
  range("amplitude_range_mm", d.amplitude_min_mm, d.amplitude_max_mm);
  range("suv_peak_range", d.suv_peak_min, d.suv_peak_max);
  range("heart_suv_range", d.heart_suv_min, d.heart_suv_max);
  d.scanners = j.at("scanners").get<std::vector<std::string>>();
  return d;
}

bool same_kind(const Json& def, const Json& val) {
  if (def.is_null()) return val.is_null() || val.is_number();
  if (def.is_number_integer()) return val.is_number_integer();
  if (def.is_number()) return val.is_number();
  if (def.is_boolean()) return val.is_boolean();
  if (def.is_string()) return val.is_string();
  if (def.is_array()) return val.is_array();
  if (def.is_object()) return val.is_object();
  return false;
}

const char* kind_name(const Json& def) {
  if (def.is_number_integer()) return "an integer";
  if (def.is_null() || def.is_number()) return "a number";
  if (def.is_boolean()) return "a boolean";
  if (def.is_string()) return "a string";
  if (def.is_array()) return "an array";
  return "an object";
}

void overlay(Json& base, const Json& doc, const std::string& path) {
  if (!doc.is_object())
    throw ConfigError("config " + (path.empty() ? "document" : "key '" + path + "'") +
                      " must be an object");
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key()))
      throw ConfigError("unknown config key '" + key + "'");
    Json& slot = base[it.key()];
    if (!same_kind(slot, it.value()))
      throw ConfigError("config key '" + key + "' must be " + kind_name(slot));
    if (slot.is_object())
      overlay(slot, it.value(), key);
    else
      slot = it.value();
  }
}

}  // namespace

Json to_json(const NetworkConfig& c) {
  const SIMConfig& s = c.sim;
  return {{"mode", to_string(c.mode)},
          {"stack_depth", c.stack_depth},
          {"base_width", c.base_width},
          {"depth", c.depth},
          {"use_sim", c.use_sim},
          {"sim_placement", to_string(c.sim_placement)},
          {"fusion", to_string(c.fusion)},
          {"norm", to_string(c.norm)},
          {"sim",
           {{"alpha", s.alpha},
            {"beta", s.beta},
            {"gamma", s.gamma},
            {"reduction_ratio", s.reduction_ratio},
            {"spatial_kernel", s.spatial_kernel},
            {"relation_kernels", s.relation_kernels},
            {"norm", to_string(s.norm)},
            {"learnable_weights", s.learnable_weights}}}};
}

NetworkConfig network_config_from_json(const Json& j) {
  try {
    NetworkConfig c;
    c.mode = parse_input_mode(j.at("mode").get<std::string>());
    c.stack_depth = j.at("stack_depth").get<int>();
    c.base_width = j.at("base_width").get<int>();
    c.depth = j.at("depth").get<int>();
    c.use_sim = j.at("use_sim").get<bool>();
    c.sim_placement = parse_sim_placement(j.at("sim_placement").get<std::string>());
    c.fusion = parse_fusion_kind(j.at("fusion").get<std::string>());
    c.norm = parse_norm_kind(j.at("norm").get<std::string>());
    const Json& s = j.at("sim");
    c.sim.alpha = s.at("alpha").get<double>();
    c.sim.beta = s.at("beta").get<double>();
    c.sim.gamma = s.at("gamma").get<double>();
    c.sim.reduction_ratio = s.at("reduction_ratio").get<int>();
    c.sim.spatial_kernel = s.at("spatial_kernel").get<int>();
    c.sim.relation_kernels = s.at("relation_kernels").get<std::array<int, 2>>();
    c.sim.norm = parse_norm_kind(s.at("norm").get<std::string>());
    c.sim.learnable_weights = s.at("learnable_weights").get<bool>();
    c.validate();
    return c;
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("malformed network config: ") + e.what());
  }
}

Json to_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"data",
           {{"finetune_window", window_json(c.data.finetune_window)},
            {"pretrain_window", window_json(c.data.pretrain_window)},
            {"split_ratios", c.data.split_ratios},
            {"pretrain_roi", c.data.pretrain_roi},
            {"finetune_roi", c.data.finetune_roi}}},
          {"phantom", phantom_json(c.phantom, c.phantom_patients)},
          {"network", to_json(c.network)},
          {"pretrain", optim_json(c.pretrain)},
          {"finetune", optim_json(c.finetune)},
          {"early_stop", {{"patience", c.early_stop.patience}}},
          {"augment", augment_json(c.augment, c.augment_enabled)},
          {"eval",
           {{"threshold", c.eval.threshold},
            {"units", units_str(c.eval.units)},
            {"level", to_string(c.eval.level)}}}};
}

RunConfig run_config_from_json(const Json& doc) {
  Json merged = to_json(RunConfig{});
  overlay(merged, doc, "");
  RunConfig c;
  try {
    c.seed = merged.at("seed").get<std::uint64_t>();
    const Json& d = merged.at("data");
    c.data.finetune_window = window_from(d.at("finetune_window"));
    c.data.pretrain_window = window_from(d.at("pretrain_window"));
    c.data.split_ratios = d.at("split_ratios").get<std::array<double, 3>>();
    c.data.pretrain_roi = d.at("pretrain_roi").get<std::string>();
    c.data.finetune_roi = d.at("finetune_roi").get<std::string>();
    c.phantom = phantom_from(merged.at("phantom"), c.phantom_patients);
    c.network = network_config_from_json(merged.at("network"));
    c.pretrain = optim_from(merged.at("pretrain"));
    c.finetune = optim_from(merged.at("finetune"));
    c.early_stop.patience = merged.at("early_stop").at("patience").get<int>();
    c.augment = augment_from(merged.at("augment"));
    c.augment_enabled = merged.at("augment").at("enabled").get<bool>();
    c.augment.seed = c.seed;
    const Json& e = merged.at("eval");
    c.eval.threshold = e.at("threshold").get<double>();
    c.eval.units = parse_units(e.at("units").get<std::string>());
    c.eval.level = parse_aggregation_level(e.at("level").get<std::string>());
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("invalid config value: ") + e.what());
  }
  c.validate();
  return c;
}

void RunConfig::validate() const {
  if (!(data.finetune_window.lo < data.finetune_window.hi) ||
      !(data.pretrain_window.lo < data.pretrain_window.hi))
    throw ConfigError("HU windows need lo < hi");
  if (phantom_patients < 1) throw ConfigError("phantom.patients must be >= 1");
  phantom.validate();
  network.validate();
  pretrain.validate();
  finetune.validate();
  early_stop.validate();
  augment.validate();
  if (!(eval.threshold >= 0.0 && eval.threshold <= 1.0))
    throw ConfigError("eval.threshold must lie in [0, 1]");
}

Json read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw ConfigError("cannot parse config file " + path + ": " + e.what());
  }
}

void apply_override(Json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(raw);
  } catch (const Json::exception&) {
    value = raw;
  }
  Json* node = &doc;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' is malformed");
    if (!node->is_object()) *node = Json::object();
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

RunConfig resolve_config(const std::string& file,
                         const std::vector<std::string>& overrides) {
  Json doc = file.empty() ? Json::object() : read_config_file(file);
  for (const auto& o : overrides) apply_override(doc, o);
  return run_config_from_json(doc);
}

}  // namespace simseg
