#include "meepo/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "meepo/tape.hpp"

namespace meepo::train {
namespace {

double elapsed_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

template <class T>
void put(std::ofstream& f, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

// Bounds-checked cursor over a checkpoint buffer.
struct Reader {
  const std::vector<char>& buf;
  std::uint64_t off = 0;
  template <class T>
  T take() {
    if (off + sizeof(T) > buf.size()) throw FormatError("checkpoint: truncated", off);
    T v;
    std::memcpy(&v, buf.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
  }
  std::string take_string(std::uint64_t n) {
    if (n > buf.size() || off + n > buf.size()) throw FormatError("checkpoint: truncated", off);
    std::string s(buf.data() + off, n);
    off += n;
    return s;
  }
};

}  // namespace

std::int64_t TrainConfig::warmup_steps() const {
  return static_cast<std::int64_t>(std::llround(warmup_fraction * static_cast<double>(steps)));
}

void TrainConfig::validate() const {
  // learning_rate 0 is allowed: a zero-rate run is the no-op diagnostic.
  if (learning_rate < 0) throw ConfigError("learning_rate must be >= 0");
  if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
    throw ConfigError("betas must lie in [0,1)");
  if (eps <= 0) throw ConfigError("eps must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (steps < 0) throw ConfigError("steps must be >= 0");
  if (warmup_fraction < 0 || warmup_fraction > 1)
    throw ConfigError("warmup_fraction must lie in [0,1]");
  if (block_lr_scaler <= 0) throw ConfigError("block_lr_scaler must be > 0");
  if (eval_every < 0) throw ConfigError("eval_every must be >= 0");
}

double cosine_lr(std::int64_t step, std::int64_t total, std::int64_t warmup, double base) {
  if (total < 0 || warmup < 0 || warmup > total) throw ParameterError("cosine_lr: bad horizon");
  if (step < 0) throw ParameterError("cosine_lr: negative step");
  if (warmup > 0 && step < warmup)
    return base * static_cast<double>(step) / static_cast<double>(warmup);
  if (step >= total) return 0.0;
  const double progress = (total > warmup)
      ? static_cast<double>(step - warmup) / static_cast<double>(total - warmup)
      : 1.0;
  return base * 0.5 * (1.0 + std::cos(M_PI * progress));
}

double lr_at(const TrainConfig& cfg, std::int64_t step) {
  const std::int64_t warmup = cfg.warmup_steps();
  if (cfg.cosine) return cosine_lr(step, cfg.steps, warmup, cfg.learning_rate);
  if (warmup > 0 && step < warmup)
    return cfg.learning_rate * static_cast<double>(step) / static_cast<double>(warmup);
  return cfg.learning_rate;
}

std::string EvalReport::summary() const {
  std::ostringstream os;
  os << "step " << step << "  loss " << loss << "  miou " << miou;
  if (no_evaluable_voxels) os << "  (no evaluable voxels)";
  return os.str();
}

EvalReport miou(const std::vector<int>& pred, const std::vector<int>& truth, int num_classes,
                int ignore_label) {
  if (num_classes < 1) throw ParameterError("miou: num_classes must be >= 1");
  if (pred.size() != truth.size())
    throw DimensionError("miou: " + std::to_string(pred.size()) + " predictions for " +
                         std::to_string(truth.size()) + " labels");
  EvalReport rep;
  rep.confusion = num::Tensor<std::int64_t>::zeros({num_classes, num_classes});
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i], p = pred[i];
    if (t == ignore_label) continue;
    if (t < 0 || t >= num_classes)
      throw DataError("miou: true label " + std::to_string(t) + " out of range");
    if (p < 0 || p >= num_classes)
      throw DataError("miou: predicted label " + std::to_string(p) + " out of range");
    ++rep.confusion.at(t, p);
  }
  rep.per_class_iou.assign(static_cast<std::size_t>(num_classes), 0.0);
  rep.class_evaluable.assign(static_cast<std::size_t>(num_classes), false);
  double sum = 0.0;
  int evaluable = 0;
  for (int c = 0; c < num_classes; ++c) {
    std::int64_t tp = rep.confusion.at(c, c), fp = 0, fn = 0;
    for (int o = 0; o < num_classes; ++o) {
      if (o == c) continue;
      fp += rep.confusion.at(o, c);
      fn += rep.confusion.at(c, o);
    }
    if (tp + fp + fn == 0) continue;  // absent from both pred and truth
    rep.class_evaluable[static_cast<std::size_t>(c)] = true;
    rep.per_class_iou[static_cast<std::size_t>(c)] =
        static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
    sum += rep.per_class_iou[static_cast<std::size_t>(c)];
    ++evaluable;
  }
  if (evaluable == 0) {
    rep.no_evaluable_voxels = true;
  } else {
    rep.miou = sum / evaluable;
  }
  return rep;
}

void AdamW::step(model::ParamStore& store, const TrainConfig& cfg, double lr_t) {
  ++t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (auto& [name, p] : store.items()) {
    for (std::int64_t i = 0; i < p.grad.numel(); ++i)
      if (!std::isfinite(p.grad[i])) throw NumericError("non-finite gradient in " + name);
    if (p.m.numel() == 0) {
      p.m = num::Tensor<double>::zeros(p.value.shape);
      p.v = num::Tensor<double>::zeros(p.value.shape);
    }
    const double lr_eff = lr_t * (p.block_scaled ? cfg.block_lr_scaler : 1.0);
    for (std::int64_t i = 0; i < p.value.numel(); ++i) {
      p.value[i] -= lr_eff * cfg.weight_decay * p.value[i];
      const double g = p.grad[i];
      p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g;
      p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g * g;
      const double mhat = p.m[i] / bc1;
      const double vhat = p.v[i] / bc2;
      p.value[i] -= lr_eff * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
  store.zero_grad();
}

Dataset benchmark_dataset(int scenes, std::int64_t points, double grid_size, std::uint64_t seed0,
                          double ambiguity) {
  if (scenes < 1) throw ParameterError("benchmark_dataset: need at least one scene");
  pc::SceneSpec spec;
  spec.points = points;
  spec.ambiguity_rate = ambiguity;
  Dataset out;
  out.grid_size = grid_size;
  for (int i = 0; i < scenes; ++i)
    out.scenes.push_back(pc::generate_scene(seed0 + static_cast<std::uint64_t>(i), spec));
  return out;
}

pc::PointCloud probe_scene(std::int64_t length, std::uint64_t seed) {
  if (length < 2) throw ParameterError("probe_scene: length must be >= 2");
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  std::uniform_real_distribution<double> jitter(-0.15, 0.15), noise(0.0, 1.0);
  std::vector<int> bits(static_cast<std::size_t>(length));
  for (auto& b : bits) b = coin(rng) ? 1 : 0;
  pc::PointCloud out;
  out.positions = num::Tensor<float>({length, 3});
  out.features = num::Tensor<float>({length, 3});
  out.labels.resize(static_cast<std::size_t>(length));
  for (std::int64_t i = 0; i < length; ++i) {
    // Spacing 4 in voxel units: no spatial adjacency at the fine level or
    // after one stride-2 pooling, so only the sequence path can mix voxels.
    out.positions.at(i, 0) = static_cast<float>(4 * i) + 0.5f;
    out.positions.at(i, 1) = 0.5f;
    out.positions.at(i, 2) = 0.5f;
    const int bit = bits[static_cast<std::size_t>(i)];
    out.features.at(i, 0) = static_cast<float>(0.25 + 0.5 * bit + jitter(rng));
    out.features.at(i, 1) = static_cast<float>(noise(rng));
    out.features.at(i, 2) = static_cast<float>(noise(rng));
    out.labels[static_cast<std::size_t>(i)] =
        (i + 1 < length) ? bits[static_cast<std::size_t>(i + 1)] : kIgnoreLabel;
  }
  return out;
}

Dataset probe_dataset(int scenes, std::int64_t length, std::uint64_t seed0) {
  if (scenes < 1) throw ParameterError("probe_dataset: need at least one scene");
  Dataset out;
  out.grid_size = 1.0;
  for (int i = 0; i < scenes; ++i)
    out.scenes.push_back(probe_scene(length, seed0 + static_cast<std::uint64_t>(i)));
  return out;
}

EvalReport evaluate(const model::ModelConfig& mcfg, const Dataset& data,
                    model::ParamStore& store) {
  if (data.scenes.empty()) throw DataError("evaluate: empty dataset");
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<int> pred, truth;
  double loss_sum = 0.0;
  std::mt19937_64 rng(0);  // eval mode draws nothing
  for (const auto& scene : data.scenes) {
    num::Tape<double> tape;
    auto fwd = model::meepo_forward(tape, scene, data.grid_size, mcfg, store, false, rng);
    auto loss = num::cross_entropy(fwd.logits, fwd.voxel_labels, kIgnoreLabel);
    loss_sum += loss.val()[0];
    const auto& logits = fwd.logits.val();
    for (std::int64_t i = 0; i < logits.rows(); ++i) {
      std::int64_t best = 0;
      for (std::int64_t j = 1; j < logits.cols(); ++j)
        if (logits.at(i, j) > logits.at(i, best)) best = j;
      pred.push_back(static_cast<int>(best));
      truth.push_back(fwd.voxel_labels[static_cast<std::size_t>(i)]);
    }
  }
  EvalReport rep = miou(pred, truth, mcfg.num_classes, kIgnoreLabel);
  rep.loss = loss_sum / static_cast<double>(data.scenes.size());
  rep.seconds = elapsed_since(t0);
  return rep;
}

TrainResult train_loop(const model::ModelConfig& mcfg, const TrainConfig& tcfg,
                       const Dataset& data, model::ParamStore& store,
                       const std::string& checkpoint_path) {
  mcfg.validate();
  tcfg.validate();
  if (data.scenes.empty()) throw DataError("train_loop: empty dataset");
  if (store.items().empty()) model::init_params(mcfg, store, tcfg.seed);
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 model_rng(tcfg.seed ^ 0x9e3779b97f4a7c15ull);
  AdamW opt;
  TrainResult res;
  std::size_t cursor = 0;
  for (std::int64_t s = 0; s < tcfg.steps; ++s) {
    const double lr_t = lr_at(tcfg, s);
    double batch_loss = 0.0;
    bool bad = false;
    for (int b = 0; b < tcfg.batch_size; ++b) {
      const auto& scene = data.scenes[cursor % data.scenes.size()];
      ++cursor;
      num::Tape<double> tape;
      try {
        auto fwd = model::meepo_forward(tape, scene, data.grid_size, mcfg, store, true, model_rng);
        auto loss = num::cross_entropy(fwd.logits, fwd.voxel_labels, kIgnoreLabel);
        const double lv = loss.val()[0];
        if (!std::isfinite(lv)) {
          bad = true;
          break;
        }
        batch_loss += lv / tcfg.batch_size;
        auto scaled = num::scale(loss, 1.0 / tcfg.batch_size);
        tape.backward(scaled.id);
        fwd.binder->harvest();
      } catch (const NumericError&) {
        // Kernels that police finiteness surface the NaN before the loss does.
        bad = true;
        break;
      }
    }
    if (bad) {
      // Abort before the pending update; the store still holds the parameters
      // from the last finite-loss step.
      store.zero_grad();
      res.aborted_nan = true;
      break;
    }
    opt.step(store, tcfg, lr_t);
    res.loss_trace.push_back(batch_loss);
    res.steps_run = s + 1;
    if (tcfg.eval_every > 0 && (s + 1) % tcfg.eval_every == 0) {
      auto rep = evaluate(mcfg, data, store);
      rep.step = s + 1;
      rep.seconds = elapsed_since(t0);
      res.reports.push_back(rep);
      if (!checkpoint_path.empty()) save_checkpoint(checkpoint_path, mcfg, store);
    }
  }
  if (!checkpoint_path.empty()) save_checkpoint(checkpoint_path, mcfg, store);
  return res;
}

void save_checkpoint(const std::string& path, const model::ModelConfig& mcfg,
                     const model::ParamStore& store) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("save_checkpoint: cannot open " + path);
  f.write("MPK1", 4);
  put(f, static_cast<std::uint32_t>(1));
  const std::string echo = model::config_echo(mcfg);
  put(f, static_cast<std::uint64_t>(echo.size()));
  f.write(echo.data(), static_cast<std::streamsize>(echo.size()));
  put(f, static_cast<std::uint64_t>(store.items().size()));
  for (const auto& [name, p] : store.items()) {
    put(f, static_cast<std::uint64_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    put(f, static_cast<std::uint32_t>(p.value.shape.size()));
    for (auto d : p.value.shape) put(f, static_cast<std::uint64_t>(d));
    std::vector<float> data(static_cast<std::size_t>(p.value.numel()));
    for (std::int64_t i = 0; i < p.value.numel(); ++i)
      data[static_cast<std::size_t>(i)] = static_cast<float>(p.value[i]);
    f.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
  }
  f.flush();
  if (!f) throw Error("save_checkpoint: write failed for " + path);
}

model::ModelConfig load_checkpoint(const std::string& path, model::ParamStore& store) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw Error("load_checkpoint: cannot open " + path);
  std::vector<char> buf(static_cast<std::size_t>(f.tellg()));
  f.seekg(0);
  f.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw Error("load_checkpoint: read failed for " + path);

  Reader r{buf};
  if (r.take_string(4) != "MPK1") throw FormatError("checkpoint: bad magic", 0);
  const auto version = r.take<std::uint32_t>();
  if (version != 1)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version), 4);
  const auto echo_len = r.take<std::uint64_t>();
  const std::string echo = r.take_string(echo_len);
  const model::ModelConfig cfg = model::parse_config_text(echo);
  cfg.validate();
  if (store.items().empty()) model::init_params(cfg, store, 0);

  const auto records = r.take<std::uint64_t>();
  if (records != store.items().size())
    throw DataError("checkpoint: " + std::to_string(records) + " records for " +
                    std::to_string(store.items().size()) + " parameters");
  for (std::uint64_t rec = 0; rec < records; ++rec) {
    const auto name_len = r.take<std::uint64_t>();
    const std::string name = r.take_string(name_len);
    auto& p = store.at(name);  // ParameterError on a name the config lacks
    const auto ndim = r.take<std::uint32_t>();
    std::vector<std::int64_t> shape(ndim);
    for (auto& d : shape) d = static_cast<std::int64_t>(r.take<std::uint64_t>());
    if (shape != p.value.shape)
      throw DimensionError("checkpoint: shape mismatch for " + name);
    for (std::int64_t i = 0; i < p.value.numel(); ++i)
      p.value[i] = static_cast<double>(r.take<float>());
  }
  if (r.off != buf.size()) throw FormatError("checkpoint: trailing bytes", r.off);
  return cfg;
}

model::ModelConfig desk_model_config() {
  model::ModelConfig cfg;
  cfg.embedding_depth = 1;
  cfg.embedding_channels = 8;
  cfg.encoder_depths = {1, 1};
  cfg.encoder_channels = {16, 32};
  cfg.decoder_depths = {1, 1};
  cfg.decoder_channels = {8, 16};
  cfg.down_strides = {2, 2};
  cfg.drop_path_rate = 0.0;
  cfg.mlp_ratio = 2;
  cfg.ssm.state_dim = 8;
  return cfg;
}

AblationConfig::AblationConfig() : base_model(desk_model_config()) {
  train.steps = 300;
  train.batch_size = 2;
  train.eval_every = 0;
}

void apply_axis_value(model::ModelConfig& mcfg, const std::string& axis,
                      const std::string& value) {
  if (axis == "block_type") {
    mcfg.block_type = model::parse_block_type(value);
  } else if (axis == "conv_mode") {
    model::apply_config_line(mcfg, "ssm.conv_mode", value);
  } else if (axis == "directions") {
    if (value == "standard")
      mcfg.ssm.directions = 1;
    else if (value == "bidirectional")
      mcfg.ssm.directions = 2;
    else if (value == "bidirectional_strided")
      mcfg.ssm.directions = 4;
    else
      model::apply_config_line(mcfg, "ssm.directions", value);
  } else if (axis == "stride") {
    model::apply_config_line(mcfg, "ssm.stride", value);
  } else {
    throw ConfigError("unknown ablation axis: " + axis);
  }
}

Dataset ablation_dataset(const AblationConfig& acfg, const std::string& axis, bool validation) {
  if (axis == "conv_mode") {
    // Causality only shows up on a task that needs right context.
    return validation ? probe_dataset(acfg.probe_val_scenes, acfg.probe_length,
                                      acfg.scene_seed + 500)
                      : probe_dataset(acfg.probe_train_scenes, acfg.probe_length, acfg.scene_seed);
  }
  return validation ? benchmark_dataset(acfg.val_scenes, acfg.scene_points, acfg.grid_size,
                                        acfg.scene_seed + 500, acfg.scene_ambiguity)
                    : benchmark_dataset(acfg.train_scenes, acfg.scene_points, acfg.grid_size,
                                        acfg.scene_seed, acfg.scene_ambiguity);
}

std::vector<AblationRow> ablation_suite(const std::string& axis,
                                        const std::vector<std::string>& grid,
                                        const std::vector<std::uint64_t>& seeds,
                                        const AblationConfig& acfg) {
  if (grid.empty()) throw ConfigError("ablation_suite: empty grid");
  if (seeds.empty()) throw ConfigError("ablation_suite: no seeds");
  const Dataset train_data = ablation_dataset(acfg, axis, false);
  const Dataset val_data = ablation_dataset(acfg, axis, true);
  std::vector<AblationRow> rows;
  for (const auto& value : grid) {
    model::ModelConfig mcfg = acfg.base_model;
    if (axis == "conv_mode") mcfg.num_classes = 2;
    apply_axis_value(mcfg, axis, value);
    mcfg.validate();
    AblationRow row;
    row.label = value;
    for (auto seed : seeds) {
      TrainConfig tcfg = acfg.train;
      tcfg.seed = seed;
      model::ParamStore store;
      train_loop(mcfg, tcfg, train_data, store);
      row.per_seed.push_back(evaluate(mcfg, val_data, store).miou);
    }
    const auto [mn, mx] = std::minmax_element(row.per_seed.begin(), row.per_seed.end());
    row.mean = 0.0;
    for (double v : row.per_seed) row.mean += v;
    row.mean /= static_cast<double>(row.per_seed.size());
    row.spread = *mx - *mn;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  std::size_t width = 8;
  for (const auto& r : rows) width = std::max(width, r.label.size());
  std::ostringstream os;
  os << std::string(width, ' ') << "  val mIoU  spread  per-seed\n";
  os.setf(std::ios::fixed);
  os.precision(4);
  for (const auto& r : rows) {
    os << r.label << std::string(width - r.label.size(), ' ') << "  " << r.mean << "   "
       << r.spread << " ";
    for (double v : r.per_seed) os << " " << v;
    os << "\n";
  }
  return os.str();
}

}  // namespace meepo::train
