#include "meepo/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "meepo/analysis.hpp"

namespace meepo::model {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const int x = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: " + key + " expects an integer, got '" + v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: " + key + " expects a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: " + key + " expects true/false, got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_int(key, trim(item)));
  if (out.empty()) throw ConfigError("config: " + key + " expects a comma-separated list");
  return out;
}

std::string int_list_str(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

}  // namespace

BlockType parse_block_type(const std::string& name) {
  if (name == "cnn_mamba") return BlockType::cnn_mamba;
  if (name == "cnn_transformer") return BlockType::cnn_transformer;
  if (name == "cnn_only") return BlockType::cnn_only;
  if (name == "mamba_only") return BlockType::mamba_only;
  if (name == "transformer_only") return BlockType::transformer_only;
  throw ConfigError("config: unknown block_type '" + name + "'");
}

std::string block_type_name(BlockType t) {
  switch (t) {
    case BlockType::cnn_mamba: return "cnn_mamba";
    case BlockType::cnn_transformer: return "cnn_transformer";
    case BlockType::cnn_only: return "cnn_only";
    case BlockType::mamba_only: return "mamba_only";
    case BlockType::transformer_only: return "transformer_only";
  }
  throw ConfigError("config: invalid block_type value");
}

int ModelConfig::total_blocks() const {
  int n = embedding_depth;
  for (int d : encoder_depths) n += d;
  for (int d : decoder_depths) n += d;
  return n;
}

void ModelConfig::validate() const {
  const std::size_t s = encoder_depths.size();
  if (s < 1) throw ConfigError("config: at least one encoder stage required");
  if (encoder_channels.size() != s || decoder_depths.size() != s ||
      decoder_channels.size() != s || down_strides.size() != s)
    throw ConfigError("config: stage lists must have equal length, got encoder_depths=" +
                      std::to_string(s) + " encoder_channels=" + std::to_string(encoder_channels.size()) +
                      " decoder_depths=" + std::to_string(decoder_depths.size()) +
                      " decoder_channels=" + std::to_string(decoder_channels.size()) +
                      " down_strides=" + std::to_string(down_strides.size()));
  if (num_classes < 2) throw ConfigError("config: num_classes must be >= 2");
  if (in_channels < 1) throw ConfigError("config: in_channels must be >= 1");
  if (embedding_depth < 1) throw ConfigError("config: embedding_depth must be >= 1");
  if (embedding_channels < 1) throw ConfigError("config: embedding_channels must be >= 1");
  for (int c : encoder_channels)
    if (c < 1) throw ConfigError("config: encoder channels must be positive");
  for (int c : decoder_channels)
    if (c < 1) throw ConfigError("config: decoder channels must be positive");
  for (int d : encoder_depths)
    if (d < 0) throw ConfigError("config: encoder depths must be >= 0");
  for (int d : decoder_depths)
    if (d < 0) throw ConfigError("config: decoder depths must be >= 0");
  for (int st : down_strides)
    if (st < 2) throw ConfigError("config: down strides must be >= 2");
  if (!(drop_path_rate >= 0.0 && drop_path_rate < 1.0))
    throw ConfigError("config: drop_path_rate must be in [0,1)");
  if (conv_kernel < 1 || conv_kernel % 2 == 0)
    throw ConfigError("config: conv_kernel must be odd and >= 1");
  if (mlp_ratio < 1) throw ConfigError("config: mlp_ratio must be >= 1");
  if (ssm.state_dim < 1) throw ConfigError("config: ssm.state_dim must be >= 1");
  if (ssm.expand < 1) throw ConfigError("config: ssm.expand must be >= 1");
  if (ssm.conv_kernel < 1) throw ConfigError("config: ssm.conv_kernel must be >= 1");
  if (ssm.stride < 1) throw ConfigError("config: ssm.stride must be >= 1");
  if (ssm.directions != 1 && ssm.directions != 2 && ssm.directions != 4)
    throw ConfigError("config: ssm.directions must be 1, 2 or 4");
  const bool uses_attention =
      block_type == BlockType::cnn_transformer || block_type == BlockType::transformer_only;
  if (uses_attention) {
    auto check = [&](int c, const char* where) {
      if (c % heads(c) != 0)
        throw ConfigError("config: " + std::string(where) + " width " + std::to_string(c) +
                          " is not divisible by its head count " + std::to_string(heads(c)));
    };
    for (int c : encoder_channels) check(c, "encoder");
    for (int c : decoder_channels) check(c, "decoder");
  }
}

ModelConfig scale_channels(ModelConfig cfg, double mult) {
  if (!(mult > 0.0)) throw ConfigError("config: channel multiplier must be positive");
  auto scaled = [&](int c) { return std::max(4, static_cast<int>(c * mult)); };
  cfg.embedding_channels = scaled(cfg.embedding_channels);
  for (int& c : cfg.encoder_channels) c = scaled(c);
  for (int& c : cfg.decoder_channels) c = scaled(c);
  return cfg;
}

void apply_config_line(ModelConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "num_classes") cfg.num_classes = parse_int(key, value);
  else if (key == "in_channels") cfg.in_channels = parse_int(key, value);
  else if (key == "embedding_depth") cfg.embedding_depth = parse_int(key, value);
  else if (key == "embedding_channels") cfg.embedding_channels = parse_int(key, value);
  else if (key == "encoder_depths") cfg.encoder_depths = parse_int_list(key, value);
  else if (key == "encoder_channels") cfg.encoder_channels = parse_int_list(key, value);
  else if (key == "decoder_depths") cfg.decoder_depths = parse_int_list(key, value);
  else if (key == "decoder_channels") cfg.decoder_channels = parse_int_list(key, value);
  else if (key == "down_strides") cfg.down_strides = parse_int_list(key, value);
  else if (key == "drop_path_rate") cfg.drop_path_rate = parse_double(key, value);
  else if (key == "block_type") cfg.block_type = parse_block_type(value);
  else if (key == "conv_kernel") cfg.conv_kernel = parse_int(key, value);
  else if (key == "mlp_ratio") cfg.mlp_ratio = parse_int(key, value);
  else if (key == "ssm.state_dim") cfg.ssm.state_dim = parse_int(key, value);
  else if (key == "ssm.expand") cfg.ssm.expand = parse_int(key, value);
  else if (key == "ssm.conv_kernel") cfg.ssm.conv_kernel = parse_int(key, value);
  else if (key == "ssm.conv_mode") {
    if (value == "causal") cfg.ssm.conv_mode = num::ConvMode::causal;
    else if (value == "symmetric") cfg.ssm.conv_mode = num::ConvMode::symmetric;
    else throw ConfigError("config: ssm.conv_mode expects causal|symmetric, got '" + value + "'");
  } else if (key == "ssm.stride") cfg.ssm.stride = parse_int(key, value);
  else if (key == "ssm.directions") cfg.ssm.directions = parse_int(key, value);
  else if (key == "ssm.share_params") cfg.ssm.share_params = parse_bool(key, value);
  else if (key == "ssm.d_skip") cfg.ssm.d_skip = parse_bool(key, value);
  else throw ConfigError("config: unknown key '" + key + "'");
}

ModelConfig parse_config_text(const std::string& text, ModelConfig base) {
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: line " + std::to_string(lineno) + " is not 'key = value': " + line);
    apply_config_line(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return base;
}

ModelConfig load_config(const std::string& path, ModelConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), std::move(base));
}

std::string config_echo(const ModelConfig& cfg) {
  std::ostringstream o;
  o << "num_classes = " << cfg.num_classes << "\n";
  o << "in_channels = " << cfg.in_channels << "\n";
  o << "embedding_depth = " << cfg.embedding_depth << "\n";
  o << "embedding_channels = " << cfg.embedding_channels << "\n";
  o << "encoder_depths = " << int_list_str(cfg.encoder_depths) << "\n";
  o << "encoder_channels = " << int_list_str(cfg.encoder_channels) << "\n";
  o << "decoder_depths = " << int_list_str(cfg.decoder_depths) << "\n";
  o << "decoder_channels = " << int_list_str(cfg.decoder_channels) << "\n";
  o << "down_strides = " << int_list_str(cfg.down_strides) << "\n";
  o << "drop_path_rate = " << cfg.drop_path_rate << "\n";
  o << "block_type = " << block_type_name(cfg.block_type) << "\n";
  o << "conv_kernel = " << cfg.conv_kernel << "\n";
  o << "mlp_ratio = " << cfg.mlp_ratio << "\n";
  o << "ssm.state_dim = " << cfg.ssm.state_dim << "\n";
  o << "ssm.expand = " << cfg.ssm.expand << "\n";
  o << "ssm.conv_kernel = " << cfg.ssm.conv_kernel << "\n";
  o << "ssm.conv_mode = " << (cfg.ssm.conv_mode == num::ConvMode::causal ? "causal" : "symmetric") << "\n";
  o << "ssm.stride = " << cfg.ssm.stride << "\n";
  o << "ssm.directions = " << cfg.ssm.directions << "\n";
  o << "ssm.share_params = " << (cfg.ssm.share_params ? "true" : "false") << "\n";
  o << "ssm.d_skip = " << (cfg.ssm.d_skip ? "true" : "false") << "\n";
  return o.str();
}

// ---------------------------------------------------------------------------
// Parameter creation
// ---------------------------------------------------------------------------

namespace {

using num::Tensor;

struct Init {
  ParamStore* store;
  std::mt19937_64 rng;

  void normal(const std::string& name, std::vector<std::int64_t> shape, double stddev,
              bool block_scaled) {
    Tensor<double> t(std::move(shape));
    num::fill_normal(t, rng, 0.0, stddev);
    store->add(name, std::move(t), block_scaled);
  }
  void constant(const std::string& name, std::vector<std::int64_t> shape, double v,
                bool block_scaled) {
    store->add(name, Tensor<double>::full(std::move(shape), v), block_scaled);
  }

  void norm_affine(const std::string& prefix, int c, bool bs) {
    constant(prefix + ".g", {c}, 1.0, bs);
    constant(prefix + ".b", {c}, 0.0, bs);
  }

  void mamba_params(const std::string& prefix, int c, const ssm::SsmConfig& ssm) {
    const int ec = c * ssm.expand;
    const int r = ssm.dt_rank(c);
    const int n = ssm.state_dim;
    normal(prefix + ".w_in", {c, 2 * ec}, 1.0 / std::sqrt(double(c)), true);
    normal(prefix + ".conv_k", {ssm.conv_kernel, ec}, 1.0 / std::sqrt(double(ssm.conv_kernel)), true);
    constant(prefix + ".w_out", {ec, c}, 0.0, true);  // residual output projection
    const int dir_sets = ssm.share_params ? 1 : ssm.directions;
    for (int d = 0; d < dir_sets; ++d) {
      const std::string dp = prefix + ".dir" + std::to_string(d);
      normal(dp + ".w_dt_down", {ec, r}, 1.0 / std::sqrt(double(ec)), true);
      normal(dp + ".w_dt_up", {r, ec}, 1.0 / std::sqrt(double(r)), true);
      // Bias chosen so softplus(dt_bias) lands in [1e-3, 1e-1] at init.
      Tensor<double> dtb({ec});
      std::uniform_real_distribution<double> u(std::log(1e-3), std::log(1e-1));
      for (auto& x : dtb.data) {
        const double dt = std::exp(u(rng));
        x = std::log(std::expm1(dt));
      }
      store->add(dp + ".dt_bias", std::move(dtb), true);
      // State poles follow the log(1..N) ladder, identical across channels.
      Tensor<double> alog({ec, n});
      for (int i = 0; i < ec; ++i)
        for (int j = 0; j < n; ++j) alog.at(i, j) = std::log(double(j + 1));
      store->add(dp + ".a_log", std::move(alog), true);
      normal(dp + ".w_b", {ec, n}, 1.0 / std::sqrt(double(ec)), true);
      normal(dp + ".w_c", {ec, n}, 1.0 / std::sqrt(double(ec)), true);
      if (ssm.d_skip) constant(dp + ".d_skip", {ec}, 1.0, true);
    }
  }

  void block_params(const std::string& prefix, const ModelConfig& cfg, int c) {
    const BlockType t = cfg.block_type;
    const bool has_conv =
        t == BlockType::cnn_mamba || t == BlockType::cnn_transformer || t == BlockType::cnn_only;
    const bool has_mamba = t == BlockType::cnn_mamba || t == BlockType::mamba_only;
    const bool has_attn = t == BlockType::cnn_transformer || t == BlockType::transformer_only;
    const int k3 = cfg.conv_kernel * cfg.conv_kernel * cfg.conv_kernel;
    if (has_conv) {
      norm_affine(prefix + ".norm1", c, true);
      constant(prefix + ".conv.w", {k3, c, c}, 0.0, true);  // residual output projection
      constant(prefix + ".conv.b", {c}, 0.0, true);
    }
    if (has_mamba || has_attn) norm_affine(prefix + ".norm2", c, true);
    if (has_mamba) mamba_params(prefix + ".mamba", c, cfg.ssm);
    if (has_attn) {
      const double s = 1.0 / std::sqrt(double(c));
      normal(prefix + ".attn.wq", {c, c}, s, true);
      normal(prefix + ".attn.wk", {c, c}, s, true);
      normal(prefix + ".attn.wv", {c, c}, s, true);
      constant(prefix + ".attn.wo", {c, c}, 0.0, true);  // residual output projection
    }
    norm_affine(prefix + ".norm3", c, true);
    const int h = c * cfg.mlp_ratio;
    normal(prefix + ".mlp.w1", {c, h}, 1.0 / std::sqrt(double(c)), true);
    constant(prefix + ".mlp.b1", {h}, 0.0, true);
    constant(prefix + ".mlp.w2", {h, c}, 0.0, true);  // residual output projection
    constant(prefix + ".mlp.b2", {c}, 0.0, true);
  }
};

int decoder_in_channels(const ModelConfig& cfg, int s) {
  return s == cfg.stages() - 1 ? cfg.encoder_channels.back() : cfg.decoder_channels[s + 1];
}

int skip_channels(const ModelConfig& cfg, int s) {
  return s == 0 ? cfg.embedding_channels : cfg.encoder_channels[s - 1];
}

}  // namespace

void init_params(const ModelConfig& cfg, ParamStore& store, std::uint64_t seed) {
  cfg.validate();
  Init init{&store, std::mt19937_64(seed)};
  const int k3 = cfg.conv_kernel * cfg.conv_kernel * cfg.conv_kernel;
  for (int i = 0; i < cfg.embedding_depth; ++i) {
    const int cin = i == 0 ? cfg.in_channels : cfg.embedding_channels;
    const std::string p = "embed.conv" + std::to_string(i);
    init.normal(p + ".w", {k3, cin, cfg.embedding_channels}, std::sqrt(2.0 / (k3 * cin)), false);
    init.constant(p + ".b", {cfg.embedding_channels}, 0.0, false);
    init.norm_affine("embed.norm" + std::to_string(i), cfg.embedding_channels, false);
  }
  for (int s = 0; s < cfg.stages(); ++s) {
    const int cin = s == 0 ? cfg.embedding_channels : cfg.encoder_channels[s - 1];
    const int c = cfg.encoder_channels[s];
    const std::string sp = "enc" + std::to_string(s);
    init.normal(sp + ".down.w", {cin, c}, 1.0 / std::sqrt(double(cin)), false);
    init.constant(sp + ".down.b", {c}, 0.0, false);
    for (int i = 0; i < cfg.encoder_depths[s]; ++i)
      init.block_params(sp + ".block" + std::to_string(i), cfg, c);
  }
  for (int s = cfg.stages() - 1; s >= 0; --s) {
    const int cin = decoder_in_channels(cfg, s);
    const int c = cfg.decoder_channels[s];
    const std::string sp = "dec" + std::to_string(s);
    init.normal(sp + ".up.w", {cin, c}, 1.0 / std::sqrt(double(cin)), false);
    init.constant(sp + ".up.b", {c}, 0.0, false);
    const int sc = skip_channels(cfg, s);
    if (sc != c) init.normal(sp + ".skip.w", {sc, c}, 1.0 / std::sqrt(double(sc)), false);
    for (int i = 0; i < cfg.decoder_depths[s]; ++i)
      init.block_params(sp + ".block" + std::to_string(i), cfg, c);
  }
  const int hc = cfg.decoder_channels[0];
  init.norm_affine("head.norm", hc, false);
  init.normal("head.w", {hc, cfg.num_classes}, 1.0 / std::sqrt(double(hc)), false);
  init.constant("head.b", {cfg.num_classes}, 0.0, false);
}

// ---------------------------------------------------------------------------
// Forward pieces
// ---------------------------------------------------------------------------

num::Var<double> drop_path(num::Var<double> x, double rate, bool train_mode,
                           std::mt19937_64& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ParameterError("drop_path: rate must be in [0,1)");
  if (!train_mode || rate == 0.0) return x;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (u(rng) < rate) return num::make_const(*x.tape, num::Tensor<double>::zeros(x.val().shape));
  return num::scale(x, 1.0 / (1.0 - rate));
}

num::Var<double> attention(num::Var<double> x, num::Var<double> wq, num::Var<double> wk,
                           num::Var<double> wv, num::Var<double> wo, int heads) {
  const std::int64_t c = x.val().cols();
  if (heads < 1 || c % heads != 0)
    throw ConfigError("attention: width " + std::to_string(c) + " not divisible by " +
                      std::to_string(heads) + " heads");
  const std::int64_t dh = c / heads;
  auto q = num::matmul_op(x, wq);
  auto k = num::matmul_op(x, wk);
  auto v = num::matmul_op(x, wv);
  std::vector<num::Var<double>> parts;
  for (int h = 0; h < heads; ++h) {
    auto qh = num::slice_cols(q, h * dh, dh);
    auto kh = num::slice_cols(k, h * dh, dh);
    auto vh = num::slice_cols(v, h * dh, dh);
    auto scores = num::scale(num::matmul_op(qh, kh, /*tb=*/true), 1.0 / std::sqrt(double(dh)));
    parts.push_back(num::matmul_op(num::softmax_rows(scores), vh));
  }
  return num::matmul_op(num::concat_cols(parts), wo);
}

num::Var<double> apply_block(num::Var<double> x, const std::string& prefix, Binder& bind,
                             const ModelConfig& cfg, int channels,
                             const sp::VoxelStructure& st, bool train_mode,
                             std::mt19937_64& rng) {
  const BlockType t = cfg.block_type;
  const bool has_conv =
      t == BlockType::cnn_mamba || t == BlockType::cnn_transformer || t == BlockType::cnn_only;
  const bool has_mamba = t == BlockType::cnn_mamba || t == BlockType::mamba_only;
  const bool has_attn = t == BlockType::cnn_transformer || t == BlockType::transformer_only;
  const double rate = cfg.drop_path_rate;

  if (has_conv) {
    auto h = num::layer_norm(x, bind(prefix + ".norm1.g"), bind(prefix + ".norm1.b"));
    auto branch = sp::submanifold_conv(h, bind(prefix + ".conv.w"), bind(prefix + ".conv.b"),
                                       st.kernel_map(cfg.conv_kernel));
    x = num::add(x, drop_path(branch, rate, train_mode, rng));
  }
  if (has_mamba || has_attn) {
    auto h = num::layer_norm(x, bind(prefix + ".norm2.g"), bind(prefix + ".norm2.b"));
    num::Var<double> branch;
    if (has_mamba) {
      ssm::MambaVars<double> vars;
      vars.w_in = bind(prefix + ".mamba.w_in");
      vars.conv_k = bind(prefix + ".mamba.conv_k");
      vars.w_out = bind(prefix + ".mamba.w_out");
      const int dir_sets = cfg.ssm.share_params ? 1 : cfg.ssm.directions;
      for (int d = 0; d < dir_sets; ++d) {
        const std::string dp = prefix + ".mamba.dir" + std::to_string(d);
        ssm::SsmDirVars<double> dv;
        dv.w_dt_down = bind(dp + ".w_dt_down");
        dv.w_dt_up = bind(dp + ".w_dt_up");
        dv.dt_bias = bind(dp + ".dt_bias");
        dv.a_log = bind(dp + ".a_log");
        dv.w_b = bind(dp + ".w_b");
        dv.w_c = bind(dp + ".w_c");
        if (cfg.ssm.d_skip) dv.d_skip = bind(dp + ".d_skip");
        vars.dirs.push_back(dv);
      }
      branch = ssm::mamba_module(h, vars, cfg.ssm);
    } else {
      branch = attention(h, bind(prefix + ".attn.wq"), bind(prefix + ".attn.wk"),
                         bind(prefix + ".attn.wv"), bind(prefix + ".attn.wo"),
                         cfg.heads(channels));
    }
    x = num::add(x, drop_path(branch, rate, train_mode, rng));
  }
  {
    auto h = num::layer_norm(x, bind(prefix + ".norm3.g"), bind(prefix + ".norm3.b"));
    h = num::silu(num::linear(h, bind(prefix + ".mlp.w1"), bind(prefix + ".mlp.b1")));
    auto branch = num::linear(h, bind(prefix + ".mlp.w2"), bind(prefix + ".mlp.b2"));
    x = num::add(x, drop_path(branch, rate, train_mode, rng));
  }
  return x;
}

ForwardResult meepo_forward(num::Tape<double>& tape, const pc::PointCloud& cloud,
                            double grid_size, const ModelConfig& cfg, ParamStore& store,
                            bool train_mode, std::mt19937_64& rng) {
  cfg.validate();
  if (cloud.size() == 0) throw DataError("forward: empty point cloud");
  auto v0 = pc::voxelize(cloud, grid_size);
  if (v0.features.cols() != cfg.in_channels)
    throw DataError("forward: cloud has " + std::to_string(v0.features.cols()) +
                    " feature channels, config expects " + std::to_string(cfg.in_channels));

  ForwardResult res;
  res.binder = std::make_shared<Binder>(tape, store, /*requires_grad=*/true);
  Binder& bind = *res.binder;
  res.voxel_labels = v0.labels;
  res.inverse_map = v0.inverse_map;
  res.levels.push_back(std::make_shared<sp::VoxelStructure>(v0.coords, v0.keys));
  res.stage_counts.push_back(res.levels[0]->size());

  auto x = num::make_const(tape, v0.features);
  for (int i = 0; i < cfg.embedding_depth; ++i) {
    const std::string p = "embed.conv" + std::to_string(i);
    x = sp::submanifold_conv(x, bind(p + ".w"), bind(p + ".b"),
                             res.levels[0]->kernel_map(cfg.conv_kernel));
    const std::string n = "embed.norm" + std::to_string(i);
    x = num::silu(num::layer_norm(x, bind(n + ".g"), bind(n + ".b")));
  }

  std::vector<num::Var<double>> skips;
  pc::SerializedVoxels cur = std::move(v0);
  for (int s = 0; s < cfg.stages(); ++s) {
    skips.push_back(x);  // level-s output feeds the decoder at the same level
    auto [coarse, map] = pc::grid_pool(cur, cfg.down_strides[s]);
    res.pools.push_back(map);
    res.levels.push_back(std::make_shared<sp::VoxelStructure>(coarse.coords, coarse.keys));
    res.stage_counts.push_back(res.levels.back()->size());
    x = num::segment_mean(x, map.parent, map.coarse_count);
    const std::string sp = "enc" + std::to_string(s);
    x = num::linear(x, bind(sp + ".down.w"), bind(sp + ".down.b"));
    for (int i = 0; i < cfg.encoder_depths[s]; ++i)
      x = apply_block(x, sp + ".block" + std::to_string(i), bind, cfg, cfg.encoder_channels[s],
                      *res.levels.back(), train_mode, rng);
    cur = std::move(coarse);
  }

  for (int s = cfg.stages() - 1; s >= 0; --s) {
    const std::string sp = "dec" + std::to_string(s);
    x = num::gather_rows(x, res.pools[static_cast<std::size_t>(s)].parent);
    x = num::linear(x, bind(sp + ".up.w"), bind(sp + ".up.b"));
    auto skip = skips[static_cast<std::size_t>(s)];
    if (skip_channels(cfg, s) != cfg.decoder_channels[s])
      skip = num::matmul_op(skip, bind(sp + ".skip.w"));
    x = num::add(x, skip);
    for (int i = 0; i < cfg.decoder_depths[s]; ++i)
      x = apply_block(x, sp + ".block" + std::to_string(i), bind, cfg, cfg.decoder_channels[s],
                      *res.levels[static_cast<std::size_t>(s)], train_mode, rng);
  }

  x = num::layer_norm(x, bind("head.norm.g"), bind("head.norm.b"));
  res.logits = num::linear(x, bind("head.w"), bind("head.b"));
  return res;
}

// ---------------------------------------------------------------------------
// Accounting
// ---------------------------------------------------------------------------

std::string describe(const ModelConfig& cfg, const ParamStore& store) {
  namespace an = meepo::analysis;
  std::ostringstream o;
  o << "block_type = " << block_type_name(cfg.block_type) << "\n";
  o << "stages = " << cfg.stages() << "\n";
  o << "total_blocks = " << cfg.total_blocks() << "\n";
  o << "parameters = " << store.parameter_count() << "\n";
  o << "stage embedding: depth " << cfg.embedding_depth << ", channels " << cfg.embedding_channels
    << "\n";
  const std::int64_t ref_l = 1024;
  for (int s = 0; s < cfg.stages(); ++s) {
    const int c = cfg.encoder_channels[s];
    o << "stage enc" << s << ": depth " << cfg.encoder_depths[s] << ", channels " << c
      << ", heads " << cfg.heads(c) << "\n";
  }
  for (int s = cfg.stages() - 1; s >= 0; --s) {
    const int c = cfg.decoder_channels[s];
    o << "stage dec" << s << ": depth " << cfg.decoder_depths[s] << ", channels " << c
      << ", heads " << cfg.heads(c) << "\n";
  }
  o << "per-block branch parameters and single-block MACs at L = " << ref_l << ":\n";
  for (int s = 0; s < cfg.stages(); ++s) {
    const int c = cfg.encoder_channels[s];
    an::FlopParams fp;
    fp.L = ref_l;
    fp.C = c;
    fp.C_in = fp.C_out = c;
    fp.N = cfg.ssm.state_dim;
    fp.E = cfg.ssm.expand;
    fp.K = cfg.ssm.conv_kernel;
    fp.k = cfg.conv_kernel;
    o << "  enc" << s << " (C=" << c << "):"
      << " conv_params " << an::params_conv_branch(c, cfg.conv_kernel)
      << " mamba_params " << an::params_mamba_branch(c, cfg.ssm)
      << " attn_params " << an::params_attention_branch(c)
      << " mlp_params " << an::params_mlp_branch(c, cfg.mlp_ratio)
      << " conv_macs " << an::u128_str(an::flops_cnn(fp))
      << " mamba_macs " << an::u128_str(an::flops_mamba_multi(fp, cfg.ssm.directions))
      << " attn_macs " << an::u128_str(an::flops_transformer(fp)) << "\n";
  }
  return o.str();
}

}  // namespace meepo::model
