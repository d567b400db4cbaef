#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "meepo/analysis.hpp"

using namespace meepo;
using analysis::FlopParams;
using analysis::u128;

TEST_CASE("reference multiply-accumulate counts at L=1024, C=64") {
  FlopParams p;  // defaults pin the reference point
  CHECK(analysis::flops_mamba(p) == static_cast<u128>(34865152));
  CHECK(analysis::flops_transformer(p) == static_cast<u128>(150994944));
  CHECK(analysis::flops_cnn(p) == static_cast<u128>(230686720));
  // Extra directions repeat only the 9LCN scan term.
  CHECK(analysis::flops_mamba_multi(p, 1) == analysis::flops_mamba(p));
  CHECK(analysis::flops_mamba_multi(p, 4) == static_cast<u128>(63176704));
}

TEST_CASE("single-token formulas reduce to the closed forms") {
  FlopParams p;
  p.L = 1;
  p.C = 6;
  p.C_in = 5;
  p.C_out = 7;
  p.N = 3;
  p.E = 2;
  p.K = 4;
  p.k = 3;
  CHECK(analysis::flops_transformer(p) == static_cast<u128>(4 * 36 + 2 * 6));
  CHECK(analysis::flops_mamba(p) == static_cast<u128>(9 * 6 * 3 + 6 * 4 + 3 * 36 * 2));
  CHECK(analysis::flops_cnn(p) == static_cast<u128>(2 * 5 * 7 * 27 + 5 * 7));
}

TEST_CASE("doubling the sequence length scales each model correctly") {
  FlopParams p;
  p.C = 48;
  for (std::int64_t L : {64LL, 4096LL, 1LL << 20}) {
    p.L = L;
    FlopParams p2 = p;
    p2.L = 2 * L;
    // Linear models double exactly.
    CHECK(analysis::flops_mamba(p2) == 2 * analysis::flops_mamba(p));
    CHECK(analysis::flops_cnn(p2) == 2 * analysis::flops_cnn(p));
    // Attention picks up the quadratic excess 4L^2C.
    const u128 excess = 4 * static_cast<u128>(L) * static_cast<u128>(L) * static_cast<u128>(p.C);
    CHECK(analysis::flops_transformer(p2) == 2 * analysis::flops_transformer(p) + excess);
  }
}

TEST_CASE("linear-to-quadratic ratio vanishes at large L") {
  FlopParams p;
  p.L = 1LL << 20;
  // Mamba is more than 1000x cheaper than attention at a million tokens.
  CHECK(analysis::flops_mamba(p) * 1000 < analysis::flops_transformer(p));
  // The ratio decreases monotonically in L (cross-multiplied comparison stays
  // exact in 128-bit).
  FlopParams a, b;
  for (int e = 10; e < 20; ++e) {
    a.L = 1LL << e;
    b.L = 1LL << (e + 1);
    const u128 lhs = analysis::flops_mamba(b) * analysis::flops_transformer(a);
    const u128 rhs = analysis::flops_mamba(a) * analysis::flops_transformer(b);
    CHECK(lhs < rhs);
  }
}

TEST_CASE("flop models reject non-positive dimensions") {
  FlopParams p;
  p.N = 0;
  CHECK_THROWS_AS(analysis::flops_mamba(p), ParameterError);
  p = {};
  p.L = 0;
  CHECK_THROWS_AS(analysis::flops_transformer(p), ParameterError);
  p = {};
  p.C_in = -3;
  CHECK_THROWS_AS(analysis::flops_cnn(p), ParameterError);
  p = {};
  CHECK_THROWS_AS(analysis::flops_mamba_multi(p, 0), ParameterError);
}

TEST_CASE("128-bit decimal rendering") {
  CHECK(analysis::u128_str(0) == "0");
  CHECK(analysis::u128_str(7) == "7");
  CHECK(analysis::u128_str(34865152) == "34865152");
  CHECK(analysis::u128_str(static_cast<u128>(1) << 100) == "1267650600228229401496703205376");
  CHECK(analysis::u128_str(~static_cast<u128>(0)) ==
        "340282366920938463463374607431768211455");
}

TEST_CASE("branch parameter formulas match hand counts") {
  CHECK(analysis::params_attention_branch(64) == 16384);
  CHECK(analysis::params_conv_branch(16, 3) == 27 * 256 + 16);
  CHECK(analysis::params_mlp_branch(8, 2) == 8 * 16 + 16 + 16 * 8 + 8);
  ssm::SsmConfig cfg;  // N=16, E=2, K=4, 4 directions, own params, d_skip
  // c=16: ec=32, dt rank 1; per direction 32+32+32+3*32*16+32 = 1664.
  CHECK(analysis::params_mamba_branch(16, cfg) == 16 * 64 + 4 * 32 + 32 * 16 + 4 * 1664);
}

TEST_CASE("log-log slope fitting recovers exact power laws") {
  std::vector<double> x{64, 128, 256, 512, 1024};
  for (double p : {1.0, 2.0, 1.5}) {
    std::vector<double> y;
    for (double v : x) y.push_back(3.7 * std::pow(v, p));
    CHECK(analysis::fit_loglog_slope(x, y) == doctest::Approx(p).epsilon(1e-12));
  }
  CHECK_THROWS_AS(analysis::fit_loglog_slope({1.0}, {2.0}), ParameterError);
  CHECK_THROWS_AS(analysis::fit_loglog_slope({1.0, 2.0}, {2.0}), ParameterError);
  CHECK_THROWS_AS(analysis::fit_loglog_slope({1.0, 2.0}, {2.0, -1.0}), ParameterError);
  CHECK_THROWS_AS(analysis::fit_loglog_slope({2.0, 2.0}, {1.0, 3.0}), ParameterError);
}

TEST_CASE("csv rendering") {
  analysis::ScalingReport rep;
  rep.arch = "mamba";
  rep.lengths = {64, 128};
  rep.analytic_ops = {static_cast<u128>(100), static_cast<u128>(200)};
  rep.median_seconds = {0.5, 1.0};
  rep.slope = 1.0;
  auto csv = rep.to_csv();
  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);
  CHECK(line == "L,analytic_ops,median_seconds,slope");
  int rows = 0;
  while (std::getline(is, line)) {
    ++rows;
    CHECK(std::count(line.begin(), line.end(), ',') == 3);
  }
  CHECK(rows == 2);
  CHECK(csv.find("64,100,") != std::string::npos);
}

TEST_CASE("scaling bench rejects bad sweeps") {
  CHECK_THROWS_AS(analysis::scaling_bench("mamba", {64, 128}, 3), ParameterError);
  CHECK_THROWS_AS(analysis::scaling_bench("mamba", {64, 128, 128}, 3), ParameterError);
  CHECK_THROWS_AS(analysis::scaling_bench("mamba", {64, 256, 128}, 3), ParameterError);
  CHECK_THROWS_AS(analysis::scaling_bench("mamba", {64, 128, 256}, 0), ParameterError);
  CHECK_THROWS_AS(analysis::scaling_bench("lstm", {64, 128, 256}, 3), ParameterError);
}

TEST_CASE("scaling bench reports are internally consistent") {
  // Tiny lengths keep this a smoke test; the acceptance gate checks slopes at
  // realistic sizes.
  for (const std::string arch : {"mamba", "attention", "sparse_conv"}) {
    auto rep = analysis::scaling_bench(arch, {64, 128, 256}, 2);
    CHECK(rep.arch == arch);
    REQUIRE(rep.lengths.size() == 3);
    REQUIRE(rep.analytic_ops.size() == 3);
    REQUIRE(rep.median_seconds.size() == 3);
    for (double s : rep.median_seconds) CHECK(s > 0.0);
    CHECK(std::isfinite(rep.slope));
    CHECK(rep.analytic_exponent == (arch == "attention" ? 2.0 : 1.0));
    FlopParams p;
    for (std::size_t i = 0; i < 3; ++i) {
      p.L = rep.lengths[i];
      u128 expect = 0;
      if (arch == "mamba") {
        p.C = 32;
        expect = analysis::flops_mamba(p);
      } else if (arch == "attention") {
        p.C = 8;
        expect = analysis::flops_transformer(p);
      } else {
        p.C_in = p.C_out = 16;
        expect = analysis::flops_cnn(p);
      }
      CHECK(rep.analytic_ops[i] == expect);
    }
    // Analytic column is strictly increasing alongside the lengths.
    CHECK(rep.analytic_ops[0] < rep.analytic_ops[1]);
    CHECK(rep.analytic_ops[1] < rep.analytic_ops[2]);
  }
}
