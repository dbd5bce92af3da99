#include "simseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "simseg/losses.hpp"
#include "simseg/ops.hpp"

namespace simseg {

std::string to_string(Schedule s) {
  return s == Schedule::cosine ? "cosine" : "constant";
}

Schedule parse_schedule(const std::string& s) {
  if (s == "cosine") return Schedule::cosine;
  if (s == "constant") return Schedule::constant;
  throw ConfigError("unknown schedule '" + s + "'");
}

OptimConfig OptimConfig::pretrain_defaults() {
  OptimConfig c;
  c.lr = 1e-3;
  c.batch_size = 16;
  c.max_epochs = 20;
  return c;
}

OptimConfig OptimConfig::finetune_defaults() {
  OptimConfig c;
  c.lr = 6e-5;
  c.batch_size = 4;
  c.max_epochs = 30;
  return c;
}

void OptimConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (!(lr_min >= 0.0 && lr_min <= lr))
    throw ConfigError("lr_min must lie in [0, lr]");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("eps must be > 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (grad_clip && !(*grad_clip > 0.0))
    throw ConfigError("grad_clip must be > 0 when set");
}

double scheduled_lr(const OptimConfig& cfg, int epoch) {
  if (cfg.schedule == Schedule::constant) return cfg.lr;
  const double e = std::clamp(epoch, 0, cfg.max_epochs);
  return cfg.lr_min + (cfg.lr - cfg.lr_min) *
                          (1.0 + std::cos(std::numbers::pi * e / cfg.max_epochs)) /
                          2.0;
}

void EarlyStopPolicy::validate() const {
  if (patience < 1) throw ConfigError("early_stop.patience must be >= 1");
}

// --- AdamW -------------------------------------------------------------------

AdamW::AdamW(ParamList params, const OptimConfig& cfg)
    : params_(std::move(params)), cfg_(cfg) {
  cfg_.validate();
  for (auto& [name, p] : params_) {
    m_.emplace_back(p.shape());
    v_.emplace_back(p.shape());
  }
}

void AdamW::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

double AdamW::clip_grad_norm(double max_norm) {
  double total = 0.0;
  for (auto& [name, p] : params_)
    if (!p.grad().empty())
      for (double g : p.grad().values()) total += g * g;
  const double norm = std::sqrt(total);
  if (norm > max_norm) {
    const double s = max_norm / (norm + 1e-12);
    for (auto& [name, p] : params_)
      if (!p.grad().empty())
        for (double& g : p.mutable_grad().values()) g *= s;
  }
  return norm;
}

void AdamW::step(double lr) {
  ++t_;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double decay = 1.0 - lr * cfg_.weight_decay;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ag::Var& p = params_[i].second;
    if (p.grad().empty()) continue;
    double* w = p.mutable_value().data();
    const double* g = p.grad().data();
    double* m = m_[i].data();
    double* v = v_[i].data();
    for (std::size_t k = 0; k < m_[i].size(); ++k) {
      m[k] = b1 * m[k] + (1.0 - b1) * g[k];
      v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
      w[k] *= decay;
      w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg_.eps);
    }
  }
}

OptimizerState AdamW::state() const {
  OptimizerState s;
  s.step = t_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    s.first_moment.emplace_back(params_[i].first, m_[i]);
    s.second_moment.emplace_back(params_[i].first, v_[i]);
  }
  return s;
}

void AdamW::set_state(const OptimizerState& s) {
  if (s.first_moment.size() != params_.size() ||
      s.second_moment.size() != params_.size())
    throw CheckpointError("optimizer state does not match the parameter set");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (s.first_moment[i].first != params_[i].first ||
        !(s.first_moment[i].second.shape() == m_[i].shape()) ||
        !(s.second_moment[i].second.shape() == v_[i].shape()))
      throw CheckpointError("optimizer state mismatch at " + params_[i].first);
    m_[i] = s.first_moment[i].second;
    v_[i] = s.second_moment[i].second;
  }
  t_ = s.step;
}

// --- datasets ----------------------------------------------------------------

int Dataset::stack_depth() const {
  if (samples.empty()) throw InputError("empty dataset has no stack depth");
  return samples.front().input.c() / 2;
}

Dataset make_dataset(const std::vector<PreparedRoi>& rois,
                     const std::vector<std::string>& patient_ids,
                     const std::string& roi_name, int depth) {
  Dataset d;
  for (const auto& id : patient_ids) {
    auto it = std::find_if(rois.begin(), rois.end(), [&](const PreparedRoi& r) {
      return r.patient_id == id && r.roi_name == roi_name;
    });
    if (it == rois.end())
      throw DataError("no prepared ROI '" + roi_name + "' for patient " + id);
    auto s = roi_samples(*it, depth);
    std::move(s.begin(), s.end(), std::back_inserter(d.samples));
  }
  return d;
}

std::pair<Tensor, Tensor> network_inputs(const Tensor& stack, int depth) {
  Tensor scaled = stack;
  for (double& v : scaled.values()) v /= 255.0;
  return split_modalities(scaled, depth);
}

namespace {

struct ReducedPrecisionScope {
  explicit ReducedPrecisionScope(bool on) : previous(ag::reduced_precision()) {
    ag::set_reduced_precision(on);
  }
  ~ReducedPrecisionScope() { ag::set_reduced_precision(previous); }
  bool previous;
};

void check_depth(const SegNetwork& net, const Dataset& d, const char* what) {
  if (d.empty()) return;
  if (d.stack_depth() != net.config().stack_depth)
    throw ConfigError(std::string(what) + " samples have stack depth " +
                      std::to_string(d.stack_depth()) + " but the network expects " +
                      std::to_string(net.config().stack_depth));
}

void append_jsonl(const std::filesystem::path& dir, const std::string& label,
                  const EpochRecord& r) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "metrics.jsonl", std::ios::app);
  if (!out) throw DataError("cannot append to " + (dir / "metrics.jsonl").string());
  nlohmann::json j = {{"run", label},
                      {"epoch", r.epoch},
                      {"lr", r.lr},
                      {"train_loss", r.train_loss},
                      {"best_val_iou", r.best_val_iou},
                      {"improved", r.improved},
                      {"steps", r.steps}};
  j["val_iou"] = r.val_iou ? nlohmann::json(*r.val_iou) : nlohmann::json(nullptr);
  out << j.dump() << "\n";
}

}  // namespace

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed,
                                     int epoch) {
  Rng rng(derive_seed(seed, 0x5u, epoch));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

TrainingBatch training_batch(const Dataset& train,
                             const std::vector<std::size_t>& order,
                             int batch_size, std::size_t index,
                             const TrainOptions& options, int epoch) {
  const std::size_t start = index * batch_size;
  if (batch_size < 1 || start >= order.size())
    throw InputError("batch index out of range");
  const std::size_t end = std::min(order.size(), start + batch_size);
  std::vector<Tensor> inputs, targets;
  TrainingBatch batch;
  for (std::size_t k = start; k < end; ++k) {
    const SliceSample* s = &train.samples.at(order[k]);
    SliceSample augmented;
    if (options.augment) {
      Rng rng(derive_seed(derive_seed(options.seed, 0xA, options.augment->seed),
                          epoch, order[k]));
      augmented = apply_pipeline(*s, *options.augment, rng);
      s = &augmented;
    }
    inputs.push_back(s->input);
    targets.push_back(s->target);
    batch.indices.push_back(order[k]);
  }
  batch.input = stack_batch(inputs);
  batch.target = stack_batch(targets);
  return batch;
}

TrainResult train_network(SegNetwork& net, const Dataset& train,
                          const Dataset& val, const OptimConfig& optim,
                          const EarlyStopPolicy& stop,
                          const TrainOptions& options) {
  optim.validate();
  stop.validate();
  if (train.empty()) throw InputError("training set is empty");
  check_depth(net, train, "training");
  check_depth(net, val, "validation");
  if (options.augment) options.augment->validate();
  const int depth = net.config().stack_depth;

  ReducedPrecisionScope precision(optim.mixed_precision);
  AdamW opt(net.parameters(), optim);
  TrainResult result;
  TrainState& st = result.state;
  std::optional<Checkpoint> best;
  bool first_batch = true;
  bool budget_spent = false;
  const std::string& label = options.label.empty() ? options.stage : options.label;

  for (int epoch = 0; epoch < optim.max_epochs && !budget_spent; ++epoch) {
    const double lr = scheduled_lr(optim, epoch);
    const std::vector<std::size_t> order = epoch_order(train.size(), options.seed, epoch);

    double loss_sum = 0.0;
    std::int64_t steps = 0;
    const std::size_t n_batches =
        (train.size() + optim.batch_size - 1) / optim.batch_size;
    for (std::size_t b = 0; b < n_batches; ++b) {
      const TrainingBatch batch =
          training_batch(train, order, optim.batch_size, b, options, epoch);
      auto [pet, ct] = network_inputs(batch.input, depth);
      const Tensor& y = batch.target;

      opt.zero_grad();
      ag::Var logits = net.forward(ag::constant(pet), ag::constant(ct), true);
      ag::Var loss = composite_loss(ag::sigmoid(logits), y);
      ag::backward(loss);
      if (optim.grad_clip) opt.clip_grad_norm(*optim.grad_clip);
      opt.step(lr);

      const double l = loss.value()[0];
      if (first_batch) {
        result.first_batch_loss = l;
        first_batch = false;
      }
      loss_sum += l;
      ++steps;
      ++st.global_step;
      if (options.max_steps && st.global_step >= *options.max_steps) {
        budget_spent = true;
        break;
      }
    }

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.lr = lr;
    rec.train_loss = loss_sum / static_cast<double>(steps);
    rec.steps = st.global_step;
    st.epoch = epoch + 1;
    if (!val.empty()) {
      rec.val_iou = evaluate(net, val).summary.iou;
      rec.improved = *rec.val_iou > st.best_val_iou;
      if (rec.improved) {
        st.best_val_iou = *rec.val_iou;
        st.epochs_since_improvement = 0;
        best = make_checkpoint(
            net, {options.stage, epoch + 1, st.best_val_iou, options.seed},
            opt.state());
      } else {
        ++st.epochs_since_improvement;
      }
    }
    rec.best_val_iou = std::max(st.best_val_iou, 0.0);
    result.history.push_back(rec);
    if (options.run_dir) append_jsonl(*options.run_dir, label, rec);
    if (options.verbose) {
      std::fprintf(stderr, "[%s] epoch %d lr %.3g loss %.4f", label.c_str(),
                   rec.epoch, rec.lr, rec.train_loss);
      if (rec.val_iou) std::fprintf(stderr, " val_iou %.4f", *rec.val_iou);
      std::fprintf(stderr, "\n");
    }
    if (!val.empty() && st.epochs_since_improvement >= stop.patience) {
      result.stopped_early = epoch + 1 < optim.max_epochs;
      break;
    }
  }

  if (best) {
    result.checkpoint = std::move(*best);
    load_into(net, result.checkpoint);
  } else {
    result.checkpoint = make_checkpoint(
        net, {options.stage, st.epoch, 0.0, options.seed}, opt.state());
  }
  return result;
}

TrainResult pretrain_gtv(SegNetwork& net2d, const Dataset& train,
                         const Dataset& val, const OptimConfig& optim,
                         TrainOptions options) {
  if (net2d.config().mode != InputMode::slice2d)
    throw ConfigError("pre-training expects a 2D network");
  options.stage = "pretrain";
  EarlyStopPolicy no_stop{optim.max_epochs};
  return train_network(net2d, train, val, optim, no_stop, options);
}

TrainResult finetune_igtv(const Checkpoint& ckpt2d, const NetworkConfig& cfg25d,
                          const Dataset& train, const Dataset& val,
                          const OptimConfig& optim, const EarlyStopPolicy& stop,
                          TrainOptions options) {
  if (ckpt2d.meta.stage != "pretrain")
    throw TransplantError("fine-tuning needs a pre-training checkpoint, got stage '" +
                          ckpt2d.meta.stage + "'");
  SegNetwork net2d = restore_network(ckpt2d);
  SegNetwork net =
      inflate_2d_to_25d(net2d, cfg25d, derive_seed(options.seed, 0x51));
  options.stage = "finetune";
  return train_network(net, train, val, optim, stop, options);
}

// --- evaluation ----------------------------------------------------------------

std::vector<Tensor> predict_logits(const SegNetwork& net, const Dataset& data,
                                   int batch_size) {
  check_depth(net, data, "evaluation");
  const int depth = net.config().stack_depth;
  std::vector<Tensor> out;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    std::vector<Tensor> inputs;
    for (std::size_t k = start; k < end; ++k)
      inputs.push_back(data.samples[k].input);
    auto [pet, ct] = network_inputs(stack_batch(inputs), depth);
    const Tensor logits = forward(net, pet, ct);
    for (int b = 0; b < logits.n(); ++b) out.push_back(logits.batch_slice(b, 1));
  }
  return out;
}

EvalResult evaluate(const SegNetwork& net, const Dataset& split,
                    const EvalSettings& settings) {
  if (split.empty()) throw InputError("evaluation split is empty");
  const std::vector<Tensor> logits = predict_logits(net, split);
  EvalResult r;
  for (std::size_t i = 0; i < split.size(); ++i) {
    const SliceSample& s = split.samples[i];
    const BinaryMask pred =
        mask_from_tensor(predict_mask(logits[i], settings.threshold), 0, s.spacing);
    const BinaryMask gt = mask_from_tensor(s.target, 0, s.spacing);
    MetricsRecord rec = evaluate_pair(pred, gt, settings.units);
    rec.patient_id = s.patient_id;
    rec.slice_index = s.slice_index;
    r.records.push_back(std::move(rec));
  }
  r.summary = aggregate(r.records, settings.level);
  return r;
}

EvalResult evaluate(const Checkpoint& ckpt, const Dataset& split,
                    const EvalSettings& settings) {
  return evaluate(restore_network(ckpt), split, settings);
}

std::string format_report(const std::vector<ReportRow>& rows) {
  std::size_t name_w = 5;
  for (const auto& r : rows) name_w = std::max(name_w, r.name.size());
  std::ostringstream o;
  o << std::left << std::setw(static_cast<int>(name_w)) << "Model" << std::right
    << std::setw(9) << "IoU" << std::setw(9) << "Dice" << std::setw(9) << "Acc"
    << std::setw(10) << "HD95" << "\n";
  o << std::string(name_w + 37, '-') << "\n";
  o << std::fixed;
  for (const auto& r : rows) {
    o << std::left << std::setw(static_cast<int>(name_w)) << r.name << std::right
      << std::setprecision(4) << std::setw(9) << r.summary.iou << std::setw(9)
      << r.summary.dice << std::setw(9) << r.summary.acc;
    if (r.summary.hd95)
      o << std::setprecision(2) << std::setw(10) << *r.summary.hd95;
    else
      o << std::setw(10) << "n/a";
    o << "\n";
  }
  return o.str();
}

// --- ablation ------------------------------------------------------------------

std::vector<AblationRow> default_ablation_matrix() {
  return {{"2D baseline", InputMode::slice2d, false, false},
          {"2.5D baseline", InputMode::stack25d, false, false},
          {"2.5D finetuned", InputMode::stack25d, true, false},
          {"2.5D finetuned + SIM", InputMode::stack25d, true, true}};
}

namespace {

NetworkConfig row_config(const NetworkConfig& base, const AblationRow& row) {
  NetworkConfig c = base;
  c.mode = row.mode;
  c.stack_depth = row.mode == InputMode::slice2d ? 1 : 3;
  c.use_sim = row.use_sim;
  c.validate();
  return c;
}

}  // namespace

AblationData make_ablation_data(const std::vector<PreparedRoi>& pretrain_rois,
                                const std::vector<PreparedRoi>& finetune_rois,
                                const SplitSpec& split) {
  auto roi_of = [](const std::vector<PreparedRoi>& rois) {
    if (rois.empty()) throw DataError("no prepared ROIs");
    return rois.front().roi_name;
  };
  const std::string pre = roi_of(pretrain_rois);
  const std::string fine = roi_of(finetune_rois);
  AblationData d;
  d.pretrain_train = make_dataset(pretrain_rois, split.train, pre, 1);
  d.pretrain_val = make_dataset(pretrain_rois, split.val, pre, 1);
  d.train_2d = make_dataset(finetune_rois, split.train, fine, 1);
  d.val_2d = make_dataset(finetune_rois, split.val, fine, 1);
  d.test_2d = make_dataset(finetune_rois, split.test, fine, 1);
  d.train_25d = make_dataset(finetune_rois, split.train, fine, 3);
  d.val_25d = make_dataset(finetune_rois, split.val, fine, 3);
  d.test_25d = make_dataset(finetune_rois, split.test, fine, 3);
  return d;
}

AblationData make_ablation_data(const std::vector<PatientStudy>& studies,
                                const SplitSpec& split,
                                const HuWindow& pretrain_window,
                                const HuWindow& finetune_window,
                                const std::string& pretrain_roi,
                                const std::string& finetune_roi) {
  std::vector<PreparedRoi> pre, fine;
  for (const auto& s : studies) {
    pre.push_back(prepare_roi(s, pretrain_roi, pretrain_window));
    fine.push_back(prepare_roi(s, finetune_roi, finetune_window));
  }
  return make_ablation_data(pre, fine, split);
}

AblationResult run_ablation(const std::vector<AblationRow>& matrix,
                            const AblationData& data,
                            const AblationSettings& settings) {
  if (matrix.empty()) throw ConfigError("ablation matrix is empty");
  const std::uint64_t init_seed = derive_seed(settings.seed, 0x1417);
  auto options_for = [&](const std::string& stage, const std::string& label) {
    TrainOptions o;
    o.seed = settings.seed;
    o.augment = settings.augment;
    o.stage = stage;
    o.label = label;
    o.verbose = settings.verbose;
    if (settings.run_dir) o.run_dir = *settings.run_dir;
    return o;
  };

  std::optional<Checkpoint> pretrained;
  const bool need_pretrain = std::any_of(
      matrix.begin(), matrix.end(), [](const AblationRow& r) { return r.finetune; });
  if (need_pretrain) {
    AblationRow base2d{"pretrain", InputMode::slice2d, false, false};
    SegNetwork net2d = build_network(row_config(settings.network, base2d), init_seed);
    pretrained = pretrain_gtv(net2d, data.pretrain_train, data.pretrain_val,
                              settings.pretrain, options_for("pretrain", "pretrain"))
                     .checkpoint;
  }

  AblationResult result;
  for (const AblationRow& row : matrix) {
    const NetworkConfig cfg = row_config(settings.network, row);
    const bool is2d = row.mode == InputMode::slice2d;
    const Dataset& train = is2d ? data.train_2d : data.train_25d;
    const Dataset& val = is2d ? data.val_2d : data.val_25d;
    const Dataset& test = is2d ? data.test_2d : data.test_25d;
    TrainOptions opts =
        options_for(row.finetune ? "finetune" : "scratch", row.name);
    TrainResult tr;
    if (row.finetune && !is2d) {
      tr = finetune_igtv(*pretrained, cfg, train, val, settings.finetune,
                         settings.stop, opts);
    } else {
      SegNetwork net = row.finetune ? restore_network(*pretrained)
                                    : build_network(cfg, init_seed);
      tr = train_network(net, train, val, settings.finetune, settings.stop, opts);
    }
    EvalResult ev = evaluate(tr.checkpoint, test, settings.eval);
    result.rows.push_back({row.name, ev.summary});
    result.evaluations.push_back(std::move(ev));
  }
  result.table = format_report(result.rows);
  return result;
}

}  // namespace simseg
