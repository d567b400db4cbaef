#pragma once
// Optimizer, schedule, metrics, training loop, checkpoints, and the ablation
// driver. Single-threaded and deterministic given (seed, configs).

#include <cstdint>
#include <string>
#include <vector>

#include "meepo/errors.hpp"
#include "meepo/model.hpp"
#include "meepo/params.hpp"
#include "meepo/pointcloud.hpp"
#include "meepo/tensor.hpp"

namespace meepo::train {

inline constexpr int kIgnoreLabel = -1;

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 5e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int batch_size = 2;
  std::int64_t steps = 2000;
  double warmup_fraction = 0.1;  // of total steps, linear ramp from 0
  bool cosine = true;            // false holds the post-warmup rate constant
  std::uint64_t seed = 0;
  // Learning-rate multiplier for residual-block parameters (everything except
  // the embedding, downsample/upsample projections, and the head).
  double block_lr_scaler = 0.1;
  std::int64_t eval_every = 100;  // 0 disables periodic evaluation

  std::int64_t warmup_steps() const;
  void validate() const;  // throws ConfigError
};

// Linear warmup from 0 over `warmup` steps, then base*0.5*(1+cos(pi*progress))
// down to 0 at `total`. Peak value `base` lands exactly at step == warmup.
double cosine_lr(std::int64_t step, std::int64_t total, std::int64_t warmup, double base);

// Schedule value for one step under cfg (constant after warmup when !cosine).
double lr_at(const TrainConfig& cfg, std::int64_t step);

struct EvalReport {
  std::vector<double> per_class_iou;     // 0 where not evaluable
  std::vector<bool> class_evaluable;     // class appears in pred or truth
  double miou = 0.0;                     // mean over evaluable classes
  num::Tensor<std::int64_t> confusion;   // [truth][pred], ignored voxels skipped
  double loss = 0.0;
  std::int64_t step = 0;
  double seconds = 0.0;
  bool no_evaluable_voxels = false;
  std::string summary() const;  // one line: step, loss, miou
};

// IoU_c = TP/(TP+FP+FN) over voxels whose true label != ignore_label; classes
// absent from both prediction and truth are excluded from the mean. Labels
// outside [0, num_classes) other than ignore_label throw DataError.
EvalReport miou(const std::vector<int>& pred, const std::vector<int>& truth, int num_classes,
                int ignore_label = kIgnoreLabel);

// AdamW with decoupled decay applied before the moment update:
//   theta -= lr_eff*wd*theta; m,v <- EMA(g); theta -= lr_eff*mhat/(sqrt(vhat)+eps)
// where lr_eff = lr_t * (block_lr_scaler for block-scaled parameters).
// Moments live in the store; gradients are zeroed after the step.
struct AdamW {
  std::int64_t t = 0;  // completed steps, drives bias correction
  // Throws NumericError naming the parameter on any non-finite gradient.
  void step(model::ParamStore& store, const TrainConfig& cfg, double lr_t);
};

struct Dataset {
  std::vector<pc::PointCloud> scenes;
  double grid_size = 0.02;
};

// Room scenes from the synthetic generator, seeds seed0, seed0+1, ...
Dataset benchmark_dataset(int scenes, std::int64_t points, double grid_size, std::uint64_t seed0,
                          double ambiguity = 0.0);

// Right-context probe: `length` voxels at coords (4i,0,0) so spatial convs and
// stride-2 pooling never mix voxels, serialized order = i. Channel 0 encodes a
// random bit (0.25 or 0.75 plus +-0.15 jitter), channels 1-2 are noise, and
// label[i] is voxel i+1's bit; the last voxel is ignored. Solvable only with
// right context along the serialized sequence.
pc::PointCloud probe_scene(std::int64_t length, std::uint64_t seed);
Dataset probe_dataset(int scenes, std::int64_t length, std::uint64_t seed0);

// Eval-mode forward over every scene: mean loss, pooled voxel-level confusion.
EvalReport evaluate(const model::ModelConfig& mcfg, const Dataset& data,
                    model::ParamStore& store);

struct TrainResult {
  std::vector<double> loss_trace;  // batch-mean train loss per completed step
  std::vector<EvalReport> reports;
  std::int64_t steps_run = 0;
  bool aborted_nan = false;  // non-finite loss; params stay at the last step
};

// Initializes the store from tcfg.seed when empty, then runs steps of
// batch-accumulated AdamW. Scenes are visited round-robin. A non-finite loss
// aborts before the pending update, so the store (and the checkpoint, when
// `checkpoint_path` is set) retains the last finite-loss parameters.
TrainResult train_loop(const model::ModelConfig& mcfg, const TrainConfig& tcfg,
                       const Dataset& data, model::ParamStore& store,
                       const std::string& checkpoint_path = "");

// Binary container: magic "MPK1", u32 version 1, u64 config-echo length + text,
// u64 record count, then per parameter u64 name length + name, u32 ndim,
// u64 dims, f32 data. Little-endian.
void save_checkpoint(const std::string& path, const model::ModelConfig& mcfg,
                     const model::ParamStore& store);

// Parses the embedded config, builds parameters for it when the store is
// empty, and overwrites values from the records (shape-checked). Returns the
// embedded config.
model::ModelConfig load_checkpoint(const std::string& path, model::ParamStore& store);

struct AblationRow {
  std::string label;
  double mean = 0.0;
  double spread = 0.0;  // max - min over seeds
  std::vector<double> per_seed;
};

struct AblationConfig {
  model::ModelConfig base_model;  // desk_model_config() unless overridden
  TrainConfig train;
  int train_scenes = 4;
  int val_scenes = 2;
  std::int64_t scene_points = 1200;
  double scene_ambiguity = 0.0;
  double grid_size = 0.12;
  std::uint64_t scene_seed = 90;
  std::int64_t probe_length = 64;
  int probe_train_scenes = 6;
  int probe_val_scenes = 3;

  AblationConfig();
};

// Small configuration that trains in seconds per hundred steps on one core.
model::ModelConfig desk_model_config();

// Axes: block_type (names), conv_mode (causal|symmetric), directions
// (standard=1, bidirectional=2, bidirectional_strided=4, or a number),
// stride (number). Throws ConfigError on unknown axis or value.
void apply_axis_value(model::ModelConfig& mcfg, const std::string& axis,
                      const std::string& value);

// Train/val split an ablation run uses; the conv_mode axis trains on the
// right-context probe, every other axis on the room benchmark.
Dataset ablation_dataset(const AblationConfig& acfg, const std::string& axis, bool validation);

// One row per grid value: val mIoU mean and spread over the seeds, identical
// data and budgets across values.
std::vector<AblationRow> ablation_suite(const std::string& axis,
                                        const std::vector<std::string>& grid,
                                        const std::vector<std::uint64_t>& seeds,
                                        const AblationConfig& acfg);

std::string format_ablation_table(const std::vector<AblationRow>& rows);

}  // namespace meepo::train
