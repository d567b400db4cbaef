#pragma once
// Voxel U-Net: embedding convs at full resolution, grid-pooled encoder stages,
// skip-connected decoder stages, all operating on Morton-serialized features.

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "meepo/errors.hpp"
#include "meepo/params.hpp"
#include "meepo/pointcloud.hpp"
#include "meepo/sparseconv.hpp"
#include "meepo/ssm.hpp"
#include "meepo/tape.hpp"

namespace meepo::model {

enum class BlockType { cnn_mamba, cnn_transformer, cnn_only, mamba_only, transformer_only };

BlockType parse_block_type(const std::string& name);
std::string block_type_name(BlockType t);

struct ModelConfig {
  int num_classes = pc::kNumClasses;
  int in_channels = 3;
  int embedding_depth = 2;
  int embedding_channels = 32;
  std::vector<int> encoder_depths{2, 2, 6, 2};
  std::vector<int> encoder_channels{64, 128, 256, 512};
  std::vector<int> decoder_depths{1, 1, 1, 1};
  std::vector<int> decoder_channels{64, 64, 128, 256};
  std::vector<int> down_strides{2, 2, 2, 2};
  double drop_path_rate = 0.3;
  BlockType block_type = BlockType::cnn_mamba;
  int conv_kernel = 3;  // submanifold conv spatial kernel
  int mlp_ratio = 4;
  ssm::SsmConfig ssm;

  int stages() const { return static_cast<int>(encoder_depths.size()); }
  int heads(int channels) const { return std::max(1, channels / 16); }
  int total_blocks() const;
  void validate() const;  // throws ConfigError
};

// Multiplies every channel width by `mult` (floor, minimum 4). Depths stay.
ModelConfig scale_channels(ModelConfig cfg, double mult);

// Line-oriented "key = value" config. '#' starts a comment. Unknown keys and
// malformed values throw ConfigError. List values are comma-separated.
void apply_config_line(ModelConfig& cfg, const std::string& key, const std::string& value);
ModelConfig parse_config_text(const std::string& text, ModelConfig base = {});
ModelConfig load_config(const std::string& path, ModelConfig base = {});
std::string config_echo(const ModelConfig& cfg);  // round-trips through parse_config_text

// Creates every parameter for cfg in the store, deterministically from seed.
// Residual-branch final projections are zero-initialized, so at init the whole
// network reduces to head(embedding(x)).
void init_params(const ModelConfig& cfg, ParamStore& store, std::uint64_t seed);

struct ForwardResult {
  num::Var<double> logits;                 // [M0 x num_classes]
  std::vector<int> voxel_labels;           // majority label per level-0 voxel
  std::vector<std::int64_t> inverse_map;   // point -> level-0 voxel row
  std::vector<std::int64_t> stage_counts;  // voxel count per level, finest first
  // Owners of the kernel maps captured by tape closures; must outlive backward().
  std::vector<std::shared_ptr<sp::VoxelStructure>> levels;
  std::vector<pc::PoolingMap> pools;
  // Parameter bindings for this pass; harvest() after backward() to move
  // gradients into the store.
  std::shared_ptr<Binder> binder;
};

ForwardResult meepo_forward(num::Tape<double>& tape, const pc::PointCloud& cloud,
                            double grid_size, const ModelConfig& cfg, ParamStore& store,
                            bool train_mode, std::mt19937_64& rng);

// Stochastic depth on a residual branch: train drops the branch with
// probability `rate` and rescales survivors by 1/(1-rate); eval is identity.
num::Var<double> drop_path(num::Var<double> x, double rate, bool train_mode,
                           std::mt19937_64& rng);

// Full multi-head softmax attention over the serialized sequence. No biases,
// matching the projection accounting 4LC^2.
num::Var<double> attention(num::Var<double> x, num::Var<double> wq, num::Var<double> wk,
                           num::Var<double> wv, num::Var<double> wo, int heads);

// One pre-norm residual block on the sequence of structure `st`.
num::Var<double> apply_block(num::Var<double> x, const std::string& prefix, Binder& bind,
                             const ModelConfig& cfg, int channels,
                             const sp::VoxelStructure& st, bool train_mode,
                             std::mt19937_64& rng);

// Parameter/block/FLOP accounting as structured text.
std::string describe(const ModelConfig& cfg, const ParamStore& store);

}  // namespace meepo::model
