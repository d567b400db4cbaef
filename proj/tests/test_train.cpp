#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "doctest.h"
#include "meepo/model.hpp"
#include "meepo/train.hpp"

using namespace meepo;

namespace {

// Single-stage sequence model over probe scenes: small enough that a training
// step takes milliseconds.
model::ModelConfig probe_config() {
  model::ModelConfig cfg;
  cfg.num_classes = 2;
  cfg.in_channels = 3;
  cfg.embedding_depth = 1;
  cfg.embedding_channels = 4;
  cfg.encoder_depths = {1};
  cfg.encoder_channels = {8};
  cfg.decoder_depths = {1};
  cfg.decoder_channels = {4};
  cfg.down_strides = {2};
  cfg.drop_path_rate = 0.0;
  cfg.block_type = model::BlockType::mamba_only;
  cfg.mlp_ratio = 2;
  cfg.ssm.state_dim = 4;
  cfg.ssm.conv_kernel = 3;
  return cfg;
}

train::Dataset tiny_probe_data(int scenes, std::int64_t length, std::uint64_t seed) {
  return train::probe_dataset(scenes, length, seed);
}

std::vector<double> store_values(const model::ParamStore& store) {
  std::vector<double> out;
  for (const auto& [name, p] : store.items())
    out.insert(out.end(), p.value.data.begin(), p.value.data.end());
  return out;
}

}  // namespace

TEST_CASE("cosine schedule endpoints and warmup ramp") {
  const double base = 6e-3;
  CHECK(train::cosine_lr(0, 100, 10, base) == 0.0);
  CHECK(train::cosine_lr(5, 100, 10, base) == doctest::Approx(base * 0.5).epsilon(1e-12));
  CHECK(train::cosine_lr(10, 100, 10, base) == doctest::Approx(base).epsilon(1e-12));
  CHECK(train::cosine_lr(55, 100, 10, base) == doctest::Approx(base / 2).epsilon(1e-12));
  CHECK(train::cosine_lr(100, 100, 10, base) == 0.0);
  CHECK(train::cosine_lr(250, 100, 10, base) == 0.0);
  // No warmup: peak sits at step 0.
  CHECK(train::cosine_lr(0, 100, 0, base) == doctest::Approx(base).epsilon(1e-12));
  // Nonincreasing after the peak, never negative.
  double prev = base;
  for (std::int64_t s = 10; s <= 100; ++s) {
    const double lr = train::cosine_lr(s, 100, 10, base);
    CHECK(lr <= prev + 1e-15);
    CHECK(lr >= 0.0);
    prev = lr;
  }
  CHECK_THROWS_AS(train::cosine_lr(5, 100, 200, base), ParameterError);
  CHECK_THROWS_AS(train::cosine_lr(-1, 100, 10, base), ParameterError);

  train::TrainConfig cfg;
  cfg.learning_rate = base;
  cfg.steps = 100;
  cfg.warmup_fraction = 0.1;
  cfg.cosine = false;
  CHECK(train::lr_at(cfg, 5) == doctest::Approx(base * 0.5).epsilon(1e-12));
  CHECK(train::lr_at(cfg, 10) == base);
  CHECK(train::lr_at(cfg, 99) == base);
  cfg.cosine = true;
  CHECK(train::lr_at(cfg, 10) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("train config validation") {
  train::TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.learning_rate = 0.0;  // zero-rate diagnostic runs are legal
  CHECK_NOTHROW(cfg.validate());
  cfg.learning_rate = -1e-3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.warmup_fraction = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.beta2 = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.weight_decay = -0.1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.steps = 200;
  CHECK(cfg.warmup_steps() == 20);
}

TEST_CASE("adamw first step matches the hand-evaluated update") {
  model::ParamStore store;
  store.add("w", num::Tensor<double>::zeros({1}));
  store.at("w").grad[0] = 1.0;
  train::TrainConfig cfg;
  cfg.weight_decay = 0.0;
  train::AdamW opt;
  opt.step(store, cfg, 0.1);
  // mhat = vhat = 1 after bias correction, so the step is lr/(1+eps).
  CHECK(store.at("w").value[0] == doctest::Approx(-0.1).epsilon(1e-7));
  CHECK(opt.t == 1);
  // Gradients zeroed by the step.
  CHECK(store.at("w").grad[0] == 0.0);
}

TEST_CASE("adamw pure decoupled decay and no-op cases") {
  model::ParamStore store;
  store.add("w", num::Tensor<double>::full({1}, 1.0));
  train::TrainConfig cfg;
  cfg.weight_decay = 0.1;
  train::AdamW opt;
  opt.step(store, cfg, 0.1);
  CHECK(store.at("w").value[0] == doctest::Approx(0.99).epsilon(1e-12));

  // Zero gradient, zero decay: bit-exact no-op.
  model::ParamStore store2;
  store2.add("w", num::Tensor<double>::full({2, 2}, 1.0));
  train::TrainConfig cfg2;
  cfg2.weight_decay = 0.0;
  train::AdamW opt2;
  opt2.step(store2, cfg2, 0.5);
  for (std::int64_t i = 0; i < 4; ++i) CHECK(store2.at("w").value[i] == 1.0);
}

TEST_CASE("adamw constant-gradient step magnitude approaches lr") {
  model::ParamStore store;
  store.add("w", num::Tensor<double>::zeros({1}));
  train::TrainConfig cfg;
  cfg.weight_decay = 0.0;
  train::AdamW opt;
  const double lr = 0.01;
  double prev = 0.0;
  double delta = 0.0;
  for (int t = 0; t < 100; ++t) {
    store.at("w").grad[0] = 1.0;
    opt.step(store, cfg, lr);
    delta = store.at("w").value[0] - prev;
    prev = store.at("w").value[0];
  }
  CHECK(std::abs(delta) / lr == doctest::Approx(1.0).epsilon(0.01));
  CHECK(delta < 0.0);  // moves against the gradient sign
}

TEST_CASE("adamw applies the block learning-rate scaler") {
  model::ParamStore store;
  store.add("plain", num::Tensor<double>::zeros({1}), false);
  store.add("block", num::Tensor<double>::zeros({1}), true);
  store.at("plain").grad[0] = 1.0;
  store.at("block").grad[0] = 1.0;
  train::TrainConfig cfg;
  cfg.weight_decay = 0.0;
  cfg.block_lr_scaler = 0.1;
  train::AdamW opt;
  opt.step(store, cfg, 0.1);
  CHECK(store.at("block").value[0] ==
        doctest::Approx(0.1 * store.at("plain").value[0]).epsilon(1e-12));
}

TEST_CASE("adamw rejects non-finite gradients by name") {
  model::ParamStore store;
  store.add("fine", num::Tensor<double>::zeros({1}));
  store.add("poisoned", num::Tensor<double>::zeros({1}));
  store.at("poisoned").grad[0] = std::nan("");
  train::TrainConfig cfg;
  train::AdamW opt;
  try {
    opt.step(store, cfg, 0.1);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("poisoned") != std::string::npos);
  }
}

TEST_CASE("miou matches the hand confusion-matrix count") {
  auto rep = train::miou({0, 0, 1, 1}, {0, 1, 1, 1}, 2);
  CHECK(rep.per_class_iou[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(rep.per_class_iou[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(rep.miou == doctest::Approx(7.0 / 12.0).epsilon(1e-12));
  CHECK(rep.confusion.at(0, 0) == 1);
  CHECK(rep.confusion.at(1, 0) == 1);
  CHECK(rep.confusion.at(1, 1) == 2);
  CHECK(rep.confusion.at(0, 1) == 0);
  CHECK_FALSE(rep.no_evaluable_voxels);
}

TEST_CASE("miou edge cases") {
  // Perfect prediction.
  CHECK(train::miou({0, 1, 2}, {0, 1, 2}, 3).miou == doctest::Approx(1.0));
  // Classes absent from both prediction and truth drop out of the mean.
  CHECK(train::miou({0, 0}, {0, 0}, 5).miou == doctest::Approx(1.0));
  // A class present only in the prediction counts as IoU 0.
  auto rep = train::miou({0, 1}, {0, 0}, 2);
  CHECK(rep.class_evaluable[1]);
  CHECK(rep.miou == doctest::Approx(0.25).epsilon(1e-12));
  // Everything ignored.
  auto ig = train::miou({0, 1}, {-1, -1}, 2);
  CHECK(ig.no_evaluable_voxels);
  CHECK(ig.miou == 0.0);
  CHECK(ig.summary().find("no evaluable voxels") != std::string::npos);
  // Ignored entries leave the confusion matrix untouched.
  auto mixed = train::miou({0, 1, 1}, {0, -1, 1}, 2);
  CHECK(mixed.confusion.at(0, 0) + mixed.confusion.at(0, 1) + mixed.confusion.at(1, 0) +
            mixed.confusion.at(1, 1) ==
        2);
  CHECK(mixed.miou == doctest::Approx(1.0));
  // Out-of-range labels are contract violations.
  CHECK_THROWS_AS(train::miou({0, 7}, {0, 1}, 2), DataError);
  CHECK_THROWS_AS(train::miou({0, 1}, {0, 5}, 2), DataError);
  CHECK_THROWS_AS(train::miou({0}, {0, 1}, 2), DimensionError);
}

TEST_CASE("miou is invariant to voxel order") {
  std::mt19937_64 rng(11);
  std::vector<int> pred(200), truth(200);
  for (auto& p : pred) p = static_cast<int>(rng() % 4);
  for (auto& t : truth) t = (rng() % 5 == 0) ? -1 : static_cast<int>(rng() % 4);
  auto base = train::miou(pred, truth, 4);
  std::vector<std::size_t> perm(pred.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<int> pred2(pred.size()), truth2(truth.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    pred2[i] = pred[perm[i]];
    truth2[i] = truth[perm[i]];
  }
  auto shuffled = train::miou(pred2, truth2, 4);
  CHECK(shuffled.miou == doctest::Approx(base.miou).epsilon(1e-15));
  for (int c = 0; c < 4; ++c)
    for (int o = 0; o < 4; ++o) CHECK(shuffled.confusion.at(c, o) == base.confusion.at(c, o));
}

TEST_CASE("probe scene wires labels to the successor bit") {
  auto scene = train::probe_scene(32, 7);
  REQUIRE(scene.size() == 32);
  CHECK(scene.labels.back() == train::kIgnoreLabel);
  for (std::int64_t i = 0; i + 1 < 32; ++i) {
    const int next_bit = scene.features.at(i + 1, 0) > 0.5f ? 1 : 0;
    CHECK(scene.labels[static_cast<std::size_t>(i)] == next_bit);
    // Classes stay linearly separable on channel 0.
    const float f0 = scene.features.at(i, 0);
    CHECK(((f0 >= 0.1f && f0 <= 0.4f) || (f0 >= 0.6f && f0 <= 0.9f)));
  }
  // One voxel per point, serialized in generation order, none adjacent.
  auto vox = pc::voxelize(scene, 1.0);
  REQUIRE(vox.size() == 32);
  for (std::int64_t i = 0; i < 32; ++i) {
    CHECK(vox.coords[static_cast<std::size_t>(i)][0] == static_cast<std::uint32_t>(4 * i));
    CHECK(vox.inverse_map[static_cast<std::size_t>(i)] == i);
  }
  CHECK_THROWS_AS(train::probe_scene(1, 0), ParameterError);

  // Different seeds give different bit patterns.
  auto other = train::probe_scene(32, 8);
  bool any_diff = false;
  for (std::int64_t i = 0; i < 32; ++i)
    any_diff = any_diff || (scene.features.at(i, 0) > 0.5f) != (other.features.at(i, 0) > 0.5f);
  CHECK(any_diff);
}

TEST_CASE("zero learning rate holds the loss constant") {
  auto data = tiny_probe_data(1, 12, 3);
  train::TrainConfig tcfg;
  tcfg.learning_rate = 0.0;
  tcfg.weight_decay = 0.0;  // decay is also parameter motion
  tcfg.steps = 3;
  tcfg.batch_size = 1;
  tcfg.eval_every = 0;
  model::ParamStore store;
  auto res = train::train_loop(probe_config(), tcfg, data, store);
  REQUIRE(res.loss_trace.size() == 3);
  CHECK(res.loss_trace[1] == res.loss_trace[0]);
  CHECK(res.loss_trace[2] == res.loss_trace[0]);
  CHECK_FALSE(res.aborted_nan);
}

TEST_CASE("same seed reproduces the run, different seed does not") {
  auto data = tiny_probe_data(2, 12, 21);
  auto mcfg = probe_config();
  mcfg.drop_path_rate = 0.3;  // exercises the stochastic path
  train::TrainConfig tcfg;
  tcfg.steps = 3;
  tcfg.batch_size = 2;
  tcfg.seed = 5;
  tcfg.eval_every = 0;
  model::ParamStore a, b, c;
  auto ra = train::train_loop(mcfg, tcfg, data, a);
  auto rb = train::train_loop(mcfg, tcfg, data, b);
  CHECK(ra.loss_trace == rb.loss_trace);
  CHECK(store_values(a) == store_values(b));
  tcfg.seed = 6;
  auto rc = train::train_loop(mcfg, tcfg, data, c);
  CHECK(ra.loss_trace != rc.loss_trace);
}

TEST_CASE("a few optimizer steps reduce the training loss") {
  auto data = tiny_probe_data(1, 16, 9);
  train::TrainConfig tcfg;
  tcfg.learning_rate = 3e-3;
  tcfg.steps = 25;
  tcfg.batch_size = 1;
  tcfg.warmup_fraction = 0.2;
  tcfg.eval_every = 25;
  model::ParamStore store;
  auto res = train::train_loop(probe_config(), tcfg, data, store);
  REQUIRE(res.loss_trace.size() == 25);
  CHECK(res.loss_trace.back() < res.loss_trace.front());
  REQUIRE(res.reports.size() == 1);
  CHECK(res.reports[0].step == 25);
  CHECK(std::isfinite(res.reports[0].loss));
  CHECK(res.reports[0].seconds > 0.0);
}

TEST_CASE("non-finite loss aborts and retains the last good parameters") {
  auto good = train::probe_scene(12, 40);
  auto bad = train::probe_scene(12, 41);
  bad.features.at(0, 0) = std::numeric_limits<float>::quiet_NaN();

  train::Dataset clean;
  clean.grid_size = 1.0;
  clean.scenes = {good};
  train::Dataset poisoned;
  poisoned.grid_size = 1.0;
  poisoned.scenes = {good, bad};

  train::TrainConfig tcfg;
  tcfg.steps = 2;
  tcfg.batch_size = 1;
  tcfg.seed = 4;
  tcfg.eval_every = 0;
  model::ParamStore ref;
  // Reference: one step on the clean scene only.
  auto tref = tcfg;
  tref.steps = 1;
  train::train_loop(probe_config(), tref, clean, ref);

  model::ParamStore store;
  auto res = train::train_loop(probe_config(), tcfg, poisoned, store);
  CHECK(res.aborted_nan);
  CHECK(res.steps_run == 1);
  CHECK(res.loss_trace.size() == 1);
  CHECK(store_values(store) == store_values(ref));
  // Gradients from the aborted batch are discarded.
  for (const auto& [name, p] : store.items())
    for (double g : p.grad.data) CHECK(g == 0.0);

  // Conv-only blocks have no finiteness guard, so here the NaN reaches the
  // loss itself instead of being caught mid-forward.
  auto conv_cfg = probe_config();
  conv_cfg.block_type = model::BlockType::cnn_only;
  model::ParamStore conv_ref, conv_store;
  train::train_loop(conv_cfg, tref, clean, conv_ref);
  auto conv_res = train::train_loop(conv_cfg, tcfg, poisoned, conv_store);
  CHECK(conv_res.aborted_nan);
  CHECK(conv_res.steps_run == 1);
  CHECK(store_values(conv_store) == store_values(conv_ref));
}

TEST_CASE("checkpoint round trip preserves config and float32 values") {
  auto mcfg = probe_config();
  model::ParamStore store;
  model::init_params(mcfg, store, 42);
  const std::string path = "ckpt_test.mpk";
  train::save_checkpoint(path, mcfg, store);

  model::ParamStore loaded;
  auto cfg2 = train::load_checkpoint(path, loaded);
  CHECK(model::config_echo(cfg2) == model::config_echo(mcfg));
  REQUIRE(loaded.items().size() == store.items().size());
  for (const auto& [name, p] : store.items()) {
    const auto& q = loaded.at(name);
    REQUIRE(q.value.shape == p.value.shape);
    CHECK(q.block_scaled == p.block_scaled);
    for (std::int64_t i = 0; i < p.value.numel(); ++i)
      CHECK(q.value[i] == static_cast<double>(static_cast<float>(p.value[i])));
  }

  // Values are already float32 after one trip, so a second save is identical.
  const std::string path2 = "ckpt_test2.mpk";
  train::save_checkpoint(path2, cfg2, loaded);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST_CASE("checkpoint loader rejects malformed files") {
  const std::string path = "ckpt_bad.mpk";
  {
    std::ofstream f(path, std::ios::binary);
    f << "NOPE garbage";
  }
  model::ParamStore store;
  CHECK_THROWS_AS(train::load_checkpoint(path, store), FormatError);

  auto mcfg = probe_config();
  model::ParamStore src;
  model::init_params(mcfg, src, 1);
  train::save_checkpoint(path, mcfg, src);
  // Truncate mid-record.
  std::ifstream in(path, std::ios::binary);
  std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  {
    std::ofstream f(path, std::ios::binary);
    f.write(all.data(), static_cast<std::streamsize>(all.size() - 10));
  }
  model::ParamStore store2;
  CHECK_THROWS_AS(train::load_checkpoint(path, store2), FormatError);
  std::remove(path.c_str());
}

TEST_CASE("train loop writes a loadable checkpoint") {
  auto data = tiny_probe_data(1, 12, 13);
  auto mcfg = probe_config();
  train::TrainConfig tcfg;
  tcfg.steps = 2;
  tcfg.batch_size = 1;
  tcfg.eval_every = 0;
  const std::string path = "ckpt_loop.mpk";
  model::ParamStore store;
  train::train_loop(mcfg, tcfg, data, store, path);
  model::ParamStore loaded;
  auto cfg2 = train::load_checkpoint(path, loaded);
  CHECK(cfg2.num_classes == 2);
  for (const auto& [name, p] : store.items()) {
    const auto& q = loaded.at(name);
    for (std::int64_t i = 0; i < p.value.numel(); ++i)
      CHECK(q.value[i] == static_cast<double>(static_cast<float>(p.value[i])));
  }
  std::remove(path.c_str());
}

TEST_CASE("evaluate pools voxel metrics over scenes") {
  auto data = tiny_probe_data(2, 12, 31);
  auto mcfg = probe_config();
  model::ParamStore store;
  model::init_params(mcfg, store, 3);
  auto rep = train::evaluate(mcfg, data, store);
  CHECK(std::isfinite(rep.loss));
  CHECK(rep.miou >= 0.0);
  CHECK(rep.miou <= 1.0);
  // One label per voxel, minus the ignored tail voxel of each scene.
  std::int64_t counted = 0;
  for (int c = 0; c < 2; ++c)
    for (int o = 0; o < 2; ++o) counted += rep.confusion.at(c, o);
  CHECK(counted == 2 * (12 - 1));
}

TEST_CASE("axis values map onto the model config") {
  auto mcfg = train::desk_model_config();
  train::apply_axis_value(mcfg, "stride", "16");
  CHECK(mcfg.ssm.stride == 16);
  train::apply_axis_value(mcfg, "directions", "standard");
  CHECK(mcfg.ssm.directions == 1);
  train::apply_axis_value(mcfg, "directions", "bidirectional");
  CHECK(mcfg.ssm.directions == 2);
  train::apply_axis_value(mcfg, "directions", "bidirectional_strided");
  CHECK(mcfg.ssm.directions == 4);
  train::apply_axis_value(mcfg, "directions", "2");
  CHECK(mcfg.ssm.directions == 2);
  train::apply_axis_value(mcfg, "conv_mode", "causal");
  CHECK(mcfg.ssm.conv_mode == num::ConvMode::causal);
  train::apply_axis_value(mcfg, "block_type", "cnn_only");
  CHECK(mcfg.block_type == model::BlockType::cnn_only);
  CHECK_THROWS_AS(train::apply_axis_value(mcfg, "optimizer", "sgd"), ConfigError);
  CHECK_THROWS_AS(train::apply_axis_value(mcfg, "block_type", "rnn"), ConfigError);
  CHECK_THROWS_AS(train::apply_axis_value(mcfg, "stride", "banana"), ConfigError);
}

TEST_CASE("degenerate ablation grid equals a plain training run") {
  train::AblationConfig acfg;
  acfg.base_model = probe_config();
  acfg.base_model.num_classes = pc::kNumClasses;  // benchmark axis uses scene labels
  acfg.base_model.in_channels = 3;
  acfg.train.steps = 2;
  acfg.train.batch_size = 1;
  acfg.train.eval_every = 0;
  acfg.train_scenes = 1;
  acfg.val_scenes = 1;
  acfg.scene_points = 300;
  acfg.grid_size = 0.3;

  auto rows = train::ablation_suite("stride", {"2"}, {7}, acfg);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].label == "2");
  REQUIRE(rows[0].per_seed.size() == 1);
  CHECK(rows[0].mean == rows[0].per_seed[0]);
  CHECK(rows[0].spread == 0.0);

  // Replay by hand with the same datasets, config, and seed.
  auto mcfg = acfg.base_model;
  train::apply_axis_value(mcfg, "stride", "2");
  auto tcfg = acfg.train;
  tcfg.seed = 7;
  auto train_data = train::ablation_dataset(acfg, "stride", false);
  auto val_data = train::ablation_dataset(acfg, "stride", true);
  model::ParamStore store;
  train::train_loop(mcfg, tcfg, train_data, store);
  auto rep = train::evaluate(mcfg, val_data, store);
  CHECK(rows[0].per_seed[0] == rep.miou);

  CHECK_THROWS_AS(train::ablation_suite("stride", {}, {7}, acfg), ConfigError);
  CHECK_THROWS_AS(train::ablation_suite("stride", {"2"}, {}, acfg), ConfigError);

  auto table = train::format_ablation_table(rows);
  CHECK(table.find("val mIoU") != std::string::npos);
  CHECK(table.find("2") != std::string::npos);
}
