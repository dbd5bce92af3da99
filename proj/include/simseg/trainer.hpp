#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "simseg/augment.hpp"
#include "simseg/checkpoint.hpp"
#include "simseg/data.hpp"
#include "simseg/metrics.hpp"
#include "simseg/network.hpp"

namespace simseg {

enum class Schedule { cosine, constant };
std::string to_string(Schedule s);
Schedule parse_schedule(const std::string& s);

struct OptimConfig {
  double lr = 1e-3;
  double lr_min = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
  Schedule schedule = Schedule::cosine;
  int batch_size = 16;
  int max_epochs = 20;
  bool mixed_precision = false;
  std::optional<double> grad_clip;  // global L2 norm

  static OptimConfig pretrain_defaults();
  static OptimConfig finetune_defaults();
  void validate() const;
};

// lr for `epoch` in [0, max_epochs]: lr_min + (lr - lr_min)(1 + cos(pi e/E))/2
// under the cosine schedule.
double scheduled_lr(const OptimConfig& cfg, int epoch);

struct EarlyStopPolicy {
  int patience = 10;  // epochs without a validation IoU improvement
  void validate() const;
};

// Decoupled weight decay Adam: p <- p (1 - lr wd), then the bias-corrected
// Adam step.
class AdamW {
 public:
  AdamW(ParamList params, const OptimConfig& cfg);

  void zero_grad();
  void step(double lr);
  // Scales gradients so their global L2 norm is at most max_norm; returns the
  // norm before clipping.
  double clip_grad_norm(double max_norm);

  OptimizerState state() const;
  void set_state(const OptimizerState& s);

 private:
  ParamList params_;
  OptimConfig cfg_;
  std::vector<Tensor> m_, v_;
  std::int64_t t_ = 0;
};

struct Dataset {
  std::vector<SliceSample> samples;

  bool empty() const { return samples.empty(); }
  std::size_t size() const { return samples.size(); }
  int stack_depth() const;
};

// Slices holding the named ROI for the listed patients, in list order.
Dataset make_dataset(const std::vector<PreparedRoi>& rois,
                     const std::vector<std::string>& patient_ids,
                     const std::string& roi_name, int depth);

// Network inputs from a batch of [0, 255] stacks: scaled to [0, 1] and split
// into (pet, ct).
std::pair<Tensor, Tensor> network_inputs(const Tensor& stack, int depth);

struct TrainState {
  int epoch = 0;
  std::int64_t global_step = 0;
  double best_val_iou = -1.0;
  int epochs_since_improvement = 0;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double lr = 0.0;
  double train_loss = 0.0;
  std::optional<double> val_iou;
  double best_val_iou = 0.0;
  bool improved = false;
  std::int64_t steps = 0;
};

struct TrainOptions {
  std::uint64_t seed = 0;
  std::optional<AugmentConfig> augment;
  std::string stage = "train";  // stored in the checkpoint metadata
  std::string label;            // log tag; the stage when empty
  // When set, metrics.jsonl is appended here, one record per epoch.
  std::optional<std::filesystem::path> run_dir;
  // Stops after this many optimiser steps (overfit runs).
  std::optional<std::int64_t> max_steps;
  bool verbose = false;
};

struct TrainResult {
  Checkpoint checkpoint;  // best validation IoU (last epoch without val data)
  std::vector<EpochRecord> history;
  TrainState state;
  bool stopped_early = false;
  double first_batch_loss = 0.0;
};

// Sample order of one epoch: a seeded Fisher-Yates shuffle of 0..n-1.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed,
                                     int epoch);

struct TrainingBatch {
  Tensor input;   // (B, 2*depth, H, W), augmented when options.augment is set
  Tensor target;  // (B, 1, H, W)
  std::vector<std::size_t> indices;
};

// Batch `index` of an epoch exactly as the training loop builds it.
TrainingBatch training_batch(const Dataset& train,
                             const std::vector<std::size_t>& order,
                             int batch_size, std::size_t index,
                             const TrainOptions& options, int epoch);

// Generic loop: composite loss, per-epoch shuffle and augmentation streams
// derived from options.seed, validation IoU (threshold 0.5, per-slice mean)
// after every epoch, best-epoch selection and early stopping.
TrainResult train_network(SegNetwork& net, const Dataset& train,
                          const Dataset& val, const OptimConfig& optim,
                          const EarlyStopPolicy& stop,
                          const TrainOptions& options);

// Stage 1: 2D network on single-slice samples with GTV targets.
TrainResult pretrain_gtv(SegNetwork& net2d, const Dataset& train,
                         const Dataset& val, const OptimConfig& optim,
                         TrainOptions options);

// Stage 2: inflates the stage-1 network to `cfg25d` and trains it on 2.5D
// samples with IGTV targets.
TrainResult finetune_igtv(const Checkpoint& ckpt2d, const NetworkConfig& cfg25d,
                          const Dataset& train, const Dataset& val,
                          const OptimConfig& optim,
                          const EarlyStopPolicy& stop, TrainOptions options);

struct EvalSettings {
  double threshold = 0.5;
  DistanceUnits units = DistanceUnits::mm;
  AggregationLevel level = AggregationLevel::per_slice;
};

struct EvalResult {
  MetricsSummary summary;
  std::vector<MetricsRecord> records;
};

// Per-sample thresholded predictions against the targets, in dataset order.
EvalResult evaluate(const SegNetwork& net, const Dataset& split,
                    const EvalSettings& settings = {});
EvalResult evaluate(const Checkpoint& ckpt, const Dataset& split,
                    const EvalSettings& settings = {});
// Logits for every sample (eval mode), batched.
std::vector<Tensor> predict_logits(const SegNetwork& net, const Dataset& data,
                                   int batch_size = 8);

struct ReportRow {
  std::string name;
  MetricsSummary summary;
};
// Plain-text table, columns Model | IoU | Dice | Acc | HD95.
std::string format_report(const std::vector<ReportRow>& rows);

// --- ablation ---------------------------------------------------------------

struct AblationRow {
  std::string name;
  InputMode mode = InputMode::stack25d;
  bool finetune = false;  // initialise from the stage-1 network
  bool use_sim = false;
};

// 2D baseline, 2.5D baseline, 2.5D finetuned, 2.5D finetuned + SIM.
std::vector<AblationRow> default_ablation_matrix();

struct AblationData {
  Dataset pretrain_train, pretrain_val;  // 2D, GTV targets
  Dataset train_2d, val_2d, test_2d;     // 2D, IGTV targets
  Dataset train_25d, val_25d, test_25d;  // 2.5D, IGTV targets
};

struct AblationSettings {
  NetworkConfig network = NetworkConfig::stack_25d(true);  // widths, norm, SIM
  OptimConfig pretrain = OptimConfig::pretrain_defaults();
  OptimConfig finetune = OptimConfig::finetune_defaults();
  EarlyStopPolicy stop;
  std::optional<AugmentConfig> augment;
  EvalSettings eval;
  std::uint64_t seed = 7;
  std::optional<std::filesystem::path> run_dir;
  bool verbose = false;
};

struct AblationResult {
  std::vector<ReportRow> rows;
  std::vector<EvalResult> evaluations;
  std::string table;
};

// Every row trains with the fine-tuning budget and the same seed; rows differ
// only in mode, initialisation and SIM.
// Pre-training sets use the GTV under the pre-training window; the 2D and
// 2.5D sets use the IGTV under the fine-tuning window.
AblationData make_ablation_data(const std::vector<PatientStudy>& studies,
                                const SplitSpec& split,
                                const HuWindow& pretrain_window,
                                const HuWindow& finetune_window,
                                const std::string& pretrain_roi = "GTV",
                                const std::string& finetune_roi = "IGTV");

// Same, from ROIs already prepared (e.g. imported from a processed dataset);
// every ROI in a list carries the same name.
AblationData make_ablation_data(const std::vector<PreparedRoi>& pretrain_rois,
                                const std::vector<PreparedRoi>& finetune_rois,
                                const SplitSpec& split);

AblationResult run_ablation(const std::vector<AblationRow>& matrix,
                            const AblationData& data,
                            const AblationSettings& settings);

}  // namespace simseg
