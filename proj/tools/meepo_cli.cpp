// Batch front end: data generation, training, evaluation, ablations, scaling
// benchmarks, analytic op counts, and structure inspection. Exit codes:
// 0 success, 1 usage error, 2 data/numeric error.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "meepo/analysis.hpp"
#include "meepo/errors.hpp"
#include "meepo/model.hpp"
#include "meepo/pointcloud.hpp"
#include "meepo/train.hpp"

namespace {

using namespace meepo;

// Provenance block written at the top of every text artifact: the full model
// config echo plus the seed, each line '#'-prefixed.
std::string echo_header(const model::ModelConfig& cfg, std::uint64_t seed) {
  std::ostringstream os;
  std::istringstream is(model::config_echo(cfg));
  std::string line;
  while (std::getline(is, line)) os << "# " << line << "\n";
  os << "# seed = " << seed << "\n";
  return os.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw Error("cannot open " + path);
  f << text;
  f.flush();
  if (!f) throw Error("write failed for " + path);
}

struct CommonOpts {
  std::uint64_t seed = 0;
  std::string config;       // model config file
  double channel_mult = 0.25;
  bool paper_scale = false;
  std::string block_type;
};

void add_common(CLI::App* cmd, CommonOpts& o, bool with_model = true) {
  cmd->add_option("--seed", o.seed, "RNG seed");
  cmd->add_option("--config", o.config, "model config file (key = value lines)");
  if (with_model) {
    cmd->add_option("--channel-mult", o.channel_mult,
                    "channel width multiplier applied after --config (default 0.25)");
    cmd->add_flag("--paper-scale", o.paper_scale, "keep full published widths (multiplier 1)");
    cmd->add_option("--block-type", o.block_type,
                    "cnn_mamba|cnn_transformer|cnn_only|mamba_only|transformer_only");
  }
}

model::ModelConfig resolve_model(const CommonOpts& o, model::ModelConfig base) {
  if (!o.config.empty()) base = model::load_config(o.config, base);
  if (!o.block_type.empty()) base.block_type = model::parse_block_type(o.block_type);
  const double mult = o.paper_scale ? 1.0 : o.channel_mult;
  if (mult != 1.0) base = model::scale_channels(base, mult);
  base.validate();
  return base;
}

int cmd_gen_data(const CommonOpts& o, const std::string& out_dir, int scenes,
                 std::int64_t points, double ambiguity) {
  std::filesystem::create_directories(out_dir);
  pc::SceneSpec spec;
  spec.points = points;
  spec.ambiguity_rate = ambiguity;
  std::ostringstream manifest;
  manifest << "# synthetic scene set\n# seed = " << o.seed << "\n# points = " << points
           << "\n# ambiguity = " << ambiguity << "\n";
  for (int i = 0; i < scenes; ++i) {
    auto cloud = pc::generate_scene(o.seed + static_cast<std::uint64_t>(i), spec);
    std::ostringstream name;
    name << "scene_" << i << ".mpc";
    pc::write_cloud(cloud, out_dir + "/" + name.str());
    manifest << name.str() << "\n";
  }
  write_text(out_dir + "/manifest.txt", manifest.str());
  std::cout << "wrote " << scenes << " scenes to " << out_dir << "\n";
  return 0;
}

int cmd_train(const CommonOpts& o, train::TrainConfig tcfg, const std::string& out,
              const std::string& report_path, int scenes, std::int64_t points, double grid,
              double ambiguity) {
  auto mcfg = resolve_model(o, model::ModelConfig{});
  tcfg.seed = o.seed;
  auto data = train::benchmark_dataset(scenes, points, grid, o.seed, ambiguity);
  model::ParamStore store;
  auto res = train::train_loop(mcfg, tcfg, data, store, out);
  std::ostringstream rep;
  rep << echo_header(mcfg, o.seed);
  rep << "# grid_size = " << grid << "\n# scenes = " << scenes << "\n";
  rep << "steps_run = " << res.steps_run << "\n";
  if (res.aborted_nan) rep << "aborted = non-finite loss\n";
  if (!res.loss_trace.empty()) {
    rep << "first_loss = " << res.loss_trace.front() << "\n";
    rep << "final_loss = " << res.loss_trace.back() << "\n";
  }
  for (const auto& r : res.reports) rep << r.summary() << "\n";
  if (!report_path.empty()) write_text(report_path, rep.str());
  std::cout << rep.str();
  std::cout << "checkpoint written to " << out << "\n";
  return res.aborted_nan ? 2 : 0;
}

int cmd_eval(const CommonOpts& o, const std::string& ckpt, int scenes, std::int64_t points,
             double grid, double ambiguity) {
  model::ParamStore store;
  auto mcfg = train::load_checkpoint(ckpt, store);
  auto data = train::benchmark_dataset(scenes, points, grid, o.seed, ambiguity);
  auto rep = train::evaluate(mcfg, data, store);
  std::cout << echo_header(mcfg, o.seed);
  std::cout << "loss = " << rep.loss << "\nmiou = " << rep.miou << "\n";
  for (int c = 0; c < mcfg.num_classes; ++c) {
    std::cout << "iou[" << c << "] = ";
    if (rep.class_evaluable[static_cast<std::size_t>(c)])
      std::cout << rep.per_class_iou[static_cast<std::size_t>(c)];
    else
      std::cout << "n/a";
    std::cout << "\n";
  }
  if (rep.no_evaluable_voxels) std::cout << "no evaluable voxels\n";
  return 0;
}

int cmd_ablate(const CommonOpts& o, const std::string& axis, const std::string& grid_csv,
               const std::string& seeds_csv, train::TrainConfig tcfg, int scenes,
               std::int64_t points, double grid_size, const std::string& out) {
  train::AblationConfig acfg;
  if (!o.config.empty() || !o.block_type.empty() || o.paper_scale || o.channel_mult != 0.25)
    acfg.base_model = resolve_model(o, acfg.base_model);
  acfg.train = tcfg;
  acfg.train_scenes = scenes;
  acfg.val_scenes = std::max(1, scenes / 2);
  acfg.scene_points = points;
  acfg.grid_size = grid_size;
  acfg.scene_seed = o.seed + 90;

  std::vector<std::string> grid;
  {
    std::istringstream is(grid_csv);
    std::string tok;
    while (std::getline(is, tok, ',')) grid.push_back(tok);
  }
  std::vector<std::uint64_t> seeds;
  {
    std::istringstream is(seeds_csv);
    std::string tok;
    while (std::getline(is, tok, ',')) seeds.push_back(std::stoull(tok));
  }
  auto rows = train::ablation_suite(axis, grid, seeds, acfg);
  std::ostringstream rep;
  rep << echo_header(acfg.base_model, o.seed);
  rep << "# axis = " << axis << "\n# steps = " << acfg.train.steps << "\n";
  rep << train::format_ablation_table(rows);
  if (!out.empty()) write_text(out, rep.str());
  std::cout << rep.str();
  return 0;
}

int cmd_bench(const CommonOpts& o, const std::string& arch,
              const std::vector<std::int64_t>& lengths, int reps, const std::string& out) {
  auto rep = analysis::scaling_bench(arch, lengths, reps);
  std::ostringstream os;
  os << "# arch = " << arch << "\n# reps = " << reps << "\n# seed = " << o.seed << "\n";
  os << "# slope = " << rep.slope << " (analytic exponent " << rep.analytic_exponent << ")\n";
  if (rep.high_variance) os << "# high_variance = 1\n";
  os << rep.to_csv();
  if (!out.empty()) write_text(out, os.str());
  std::cout << os.str();
  return 0;
}

int cmd_flops(const std::string& arch, const analysis::FlopParams& p, int directions) {
  analysis::u128 v = 0;
  if (arch == "mamba")
    v = analysis::flops_mamba(p);
  else if (arch == "mamba_multi")
    v = analysis::flops_mamba_multi(p, directions);
  else if (arch == "transformer")
    v = analysis::flops_transformer(p);
  else if (arch == "cnn")
    v = analysis::flops_cnn(p);
  else
    throw ParameterError("flops: unknown arch '" + arch + "'");
  std::cout << analysis::u128_str(v) << "\n";
  return 0;
}

int cmd_inspect(const CommonOpts& o, const std::string& scene_path, std::int64_t points,
                double grid, int stages) {
  pc::PointCloud cloud;
  if (!scene_path.empty()) {
    cloud = pc::read_cloud(scene_path);
  } else {
    pc::SceneSpec spec;
    spec.points = points;
    cloud = pc::generate_scene(o.seed, spec);
  }
  auto vox = pc::voxelize(cloud, grid);
  std::cout << "# grid_size = " << grid << "\n# seed = " << o.seed << "\n";
  std::cout << "# points = " << cloud.size() << "\n";
  for (std::int64_t i = 0; i < vox.size(); ++i) {
    const auto& c = vox.coords[static_cast<std::size_t>(i)];
    std::cout << "voxel " << i << ": key " << vox.keys[static_cast<std::size_t>(i)]
              << " coords (" << c[0] << "," << c[1] << "," << c[2] << ") label "
              << vox.labels[static_cast<std::size_t>(i)] << "\n";
  }
  std::cout << "level 0: " << vox.size() << " voxels\n";
  auto cur = vox;
  for (int s = 0; s < stages; ++s) {
    auto [coarse, map] = pc::grid_pool(cur, 2);
    std::cout << "level " << (s + 1) << ": " << coarse.size() << " voxels\n";
    cur = std::move(coarse);
  }
  return 0;
}

int cmd_describe(const CommonOpts& o) {
  auto mcfg = resolve_model(o, model::ModelConfig{});
  model::ParamStore store;
  model::init_params(mcfg, store, o.seed);
  std::cout << echo_header(mcfg, o.seed);
  std::cout << model::describe(mcfg, store);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"meepo: point-cloud segmentation with state-space sequence blocks"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "write synthetic labeled scenes");
  CommonOpts gen_o;
  std::string gen_out = "data";
  int gen_scenes = 4;
  std::int64_t gen_points = 8000;
  double gen_ambiguity = 0.0;
  add_common(gen, gen_o, false);
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--scenes", gen_scenes, "number of scenes");
  gen->add_option("--points", gen_points, "points per scene");
  gen->add_option("--ambiguity", gen_ambiguity, "fraction of object points in wall color");

  // train
  auto* tr = app.add_subcommand("train", "train on synthetic scenes");
  CommonOpts tr_o;
  train::TrainConfig tr_cfg;
  tr_cfg.steps = 500;
  std::string tr_out = "meepo.mpk", tr_report;
  int tr_scenes = 4;
  std::int64_t tr_points = 2000;
  double tr_grid = 0.02, tr_ambiguity = 0.0;
  add_common(tr, tr_o);
  tr->add_option("--out", tr_out, "checkpoint path");
  tr->add_option("--report", tr_report, "write the text report here too");
  tr->add_option("--steps", tr_cfg.steps, "optimizer steps");
  tr->add_option("--batch", tr_cfg.batch_size, "scenes per step");
  tr->add_option("--lr", tr_cfg.learning_rate, "peak learning rate");
  tr->add_option("--weight-decay", tr_cfg.weight_decay, "decoupled weight decay");
  tr->add_option("--warmup", tr_cfg.warmup_fraction, "warmup fraction of total steps");
  tr->add_option("--eval-every", tr_cfg.eval_every, "steps between eval reports (0 = off)");
  tr->add_option("--scenes", tr_scenes, "training scenes");
  tr->add_option("--points", tr_points, "points per scene");
  tr->add_option("--grid-size", tr_grid, "voxel size in meters");
  tr->add_option("--ambiguity", tr_ambiguity, "fraction of object points in wall color");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on fresh scenes");
  CommonOpts ev_o;
  std::string ev_ckpt;
  int ev_scenes = 2;
  std::int64_t ev_points = 2000;
  double ev_grid = 0.02, ev_ambiguity = 0.0;
  add_common(ev, ev_o, false);
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint path")->required();
  ev->add_option("--scenes", ev_scenes, "evaluation scenes");
  ev->add_option("--points", ev_points, "points per scene");
  ev->add_option("--grid-size", ev_grid, "voxel size in meters");
  ev->add_option("--ambiguity", ev_ambiguity, "fraction of object points in wall color");

  // ablate
  auto* ab = app.add_subcommand("ablate", "sweep one architecture axis");
  CommonOpts ab_o;
  std::string ab_axis, ab_grid, ab_seeds = "1,2,3", ab_out;
  train::TrainConfig ab_cfg;
  ab_cfg.steps = 300;
  ab_cfg.eval_every = 0;
  int ab_scenes = 4;
  std::int64_t ab_points = 1200;
  double ab_grid_size = 0.12;
  add_common(ab, ab_o);
  ab->add_option("--axis", ab_axis, "block_type|conv_mode|directions|stride")->required();
  ab->add_option("--grid", ab_grid, "comma-separated axis values")->required();
  ab->add_option("--seeds", ab_seeds, "comma-separated seeds");
  ab->add_option("--steps", ab_cfg.steps, "optimizer steps per run");
  ab->add_option("--batch", ab_cfg.batch_size, "scenes per step");
  ab->add_option("--lr", ab_cfg.learning_rate, "peak learning rate");
  ab->add_option("--scenes", ab_scenes, "training scenes");
  ab->add_option("--points", ab_points, "points per scene");
  ab->add_option("--grid-size", ab_grid_size, "voxel size in meters");
  ab->add_option("--out", ab_out, "write the table here too");

  // bench-scaling
  auto* bs = app.add_subcommand("bench-scaling", "time a kernel across sequence lengths");
  CommonOpts bs_o;
  std::string bs_arch = "mamba", bs_out;
  std::vector<std::int64_t> bs_lengths{4096, 8192, 16384, 32768};
  int bs_reps = 5;
  add_common(bs, bs_o, false);
  bs->add_option("--arch", bs_arch, "mamba|attention|sparse_conv");
  bs->add_option("--lengths", bs_lengths, "sequence lengths, strictly increasing")
      ->delimiter(',');
  bs->add_option("--reps", bs_reps, "timed repetitions per length");
  bs->add_option("--out", bs_out, "write the CSV here too");

  // flops
  auto* fl = app.add_subcommand("flops", "print the analytic multiply-accumulate count");
  CommonOpts fl_o;
  std::string fl_arch = "mamba";
  analysis::FlopParams fp;
  int fl_dirs = 4;
  add_common(fl, fl_o, false);
  fl->add_option("--arch", fl_arch, "mamba|mamba_multi|transformer|cnn");
  fl->add_option("--L", fp.L, "sequence length");
  fl->add_option("--C", fp.C, "channels");
  fl->add_option("--N", fp.N, "state dimension");
  fl->add_option("--K", fp.K, "sequence conv kernel");
  fl->add_option("--E", fp.E, "expansion factor");
  fl->add_option("--Cin", fp.C_in, "conv input channels");
  fl->add_option("--Cout", fp.C_out, "conv output channels");
  fl->add_option("--spatial-kernel", fp.k, "conv spatial kernel");
  fl->add_option("--directions", fl_dirs, "scan directions (mamba_multi)");

  // inspect
  auto* in = app.add_subcommand("inspect", "dump serialization order and level counts");
  CommonOpts in_o;
  std::string in_scene;
  std::int64_t in_points = 2000;
  double in_grid = 0.02;
  int in_stages = 4;
  add_common(in, in_o, false);
  in->add_option("--scene", in_scene, "cloud file; omitted generates one from --seed");
  in->add_option("--points", in_points, "points for the generated scene");
  in->add_option("--grid-size", in_grid, "voxel size in meters");
  in->add_option("--stages", in_stages, "pooling levels to report");

  // describe
  auto* de = app.add_subcommand("describe", "print model/parameter accounting");
  CommonOpts de_o;
  add_common(de, de_o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_o, gen_out, gen_scenes, gen_points, gen_ambiguity);
    if (tr->parsed())
      return cmd_train(tr_o, tr_cfg, tr_out, tr_report, tr_scenes, tr_points, tr_grid,
                       tr_ambiguity);
    if (ev->parsed()) return cmd_eval(ev_o, ev_ckpt, ev_scenes, ev_points, ev_grid, ev_ambiguity);
    if (ab->parsed())
      return cmd_ablate(ab_o, ab_axis, ab_grid, ab_seeds, ab_cfg, ab_scenes, ab_points,
                        ab_grid_size, ab_out);
    if (bs->parsed()) return cmd_bench(bs_o, bs_arch, bs_lengths, bs_reps, bs_out);
    if (fl->parsed()) return cmd_flops(fl_arch, fp, fl_dirs);
    if (in->parsed()) return cmd_inspect(in_o, in_scene, in_points, in_grid, in_stages);
    if (de->parsed()) return cmd_describe(de_o);
  } catch (const meepo::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
