#include <sstream>
#include <string>

#include <doctest.h>

#include "galore/error.hpp"
#include "galore/memory.hpp"

using namespace galore;
using namespace galore::memory;

TEST_CASE("Table-1 formulas for every method") {
  const auto d = LayerDims::make(300, 40, 8);  // normalized to m = 40, n = 300
  CHECK(d.m == 40);
  CHECK(d.n == 300);
  const std::uint64_t m = 40, n = 300, r = 8, mn = m * n;
  struct Row {
    Method method;
    std::uint64_t weights;
    std::uint64_t optimizer;
  };
  const Row rows[] = {
      {Method::Sgd, mn, 0},
      {Method::Full, mn, 2 * mn},
      {Method::GaLore, mn, m * r + 2 * n * r},
      {Method::GaLoreAdafactor, mn, m * r + n * r + r + n},
      {Method::GaLoreIdentity, mn, m * r},
      {Method::LoRA, mn + m * r + n * r, 2 * m * r + 2 * n * r},
      {Method::ReLoRA, mn + m * r + n * r, 2 * m * r + 2 * n * r},
      {Method::LowRank, m * r + n * r, 2 * m * r + 2 * n * r},
  };
  for (const auto& row : rows) {
    CAPTURE(method_name(row.method));
    const auto rep = estimate_layer(d, row.method);
    CHECK(rep.weight_params == row.weights);
    CHECK(rep.optimizer_params == row.optimizer);
    CHECK(rep.weight_bytes == 2 * row.weights);
    CHECK(rep.total_bytes == rep.weight_bytes + rep.optimizer_bytes);
  }
}

TEST_CASE("8-bit moments cost a byte per entry plus a scale per block") {
  const auto d = LayerDims::make(512, 1376, 128);
  const auto full = estimate_layer(d, Method::Full8bit);
  const std::uint64_t entries = 512ull * 1376;
  const std::uint64_t blocks = (entries + 255) / 256;
  CHECK(full.optimizer_bytes == 2 * (entries + 4 * blocks));

  const auto g8 = estimate_layer(d, Method::GaLore8bit);
  const std::uint64_t moment = 128ull * 1376;
  const std::uint64_t mblocks = (moment + 255) / 256;
  CHECK(g8.optimizer_bytes == 512ull * 128 * 2 + 2 * (moment + 4 * mblocks));
}

TEST_CASE("worked GaLore example and the square full-rank case") {
  CHECK(estimate_layer(LayerDims::make(512, 1376, 128), Method::GaLore).optimizer_params == 417792);
  const auto sq = estimate_layer(LayerDims::make(64, 64, 64), Method::GaLore);
  CHECK(sq.optimizer_params == 3 * 64 * 64);
  CHECK(estimate_layer(LayerDims::make(64, 64, 64), Method::Full).optimizer_params == 2 * 64 * 64);
  CHECK_FALSE(sq.notes.empty());
}

TEST_CASE("GaLore beats LoRA everywhere and Adam below the rank threshold") {
  const std::uint64_t dims[] = {1, 2, 5, 33, 128, 1000, 4096};
  for (std::uint64_t m : dims) {
    for (std::uint64_t n : dims) {
      if (m > n) continue;
      for (std::uint64_t r = 1; r <= m; r = r * 3 + 1) {
        const auto d = LayerDims::make(m, n, r);
        const auto g = estimate_layer(d, Method::GaLore);
        REQUIRE(g.total_params() < estimate_layer(d, Method::LoRA).total_params());
        if (r * (m + 2 * n) < 2 * m * n) {
          REQUIRE(g.optimizer_params < estimate_layer(d, Method::Full).optimizer_params);
        }
      }
    }
  }
}

TEST_CASE("bytes scale linearly in bytes per entry") {
  const auto d = LayerDims::make(100, 200, 10);
  for (auto method : {Method::Full, Method::GaLore, Method::LoRA, Method::LowRank}) {
    const auto a = estimate_layer(d, method, 2);
    const auto b = estimate_layer(d, method, 4);
    CHECK(b.total_bytes == 2 * a.total_bytes);
  }
}

TEST_CASE("single-layer model equals the layer estimate") {
  ModelConfig cfg{"one", {{"w", 64, 256}}, 0};
  for (auto method : all_methods()) {
    const auto model = estimate_model(cfg, method, 16);
    const auto layer = estimate_layer(LayerDims::make(64, 256, 16), method);
    CHECK(model.total_bytes == layer.total_bytes);
    CHECK(model.total_params() == layer.total_params());
  }
}

TEST_CASE("llama inventory") {
  const auto cfg = llama_config("llama-60m", 512, 1376, 8);
  CHECK(cfg.projected.size() == 7 * 8);
  CHECK(cfg.non_projected_params == 2ull * 32000 * 512 + 17 * 512);
  const auto full = estimate_model(cfg, Method::Full, 128);
  CHECK(full.weight_params == 58073600);
  CHECK(full.optimizer_params == 2 * full.weight_params);
}

TEST_CASE("gradient buffer residency") {
  const std::vector<ModelLayer> layers{{"a", 4, 8}, {"b", 16, 16}, {"c", 2, 3}};
  CHECK(gradient_buffer_entries(layers, false) == 32 + 256 + 6);
  CHECK(gradient_buffer_entries(layers, true) == 256);
}

TEST_CASE("memory errors and names") {
  CHECK_THROWS_AS(LayerDims::make(4, 8, 5), InvalidInput);
  CHECK_THROWS_AS(LayerDims::make(4, 8, 0), InvalidInput);
  CHECK_THROWS_AS(estimate_model(ModelConfig{}, Method::Full, 4), InvalidInput);
  for (auto m : all_methods()) CHECK(parse_method(method_name(m)) == m);
  CHECK_THROWS_AS(parse_method("adamw"), InvalidInput);
}

TEST_CASE("report writers") {
  const auto cfg = llama_config("tiny", 64, 128, 2, 100);
  std::vector<MemoryReport> reps{estimate_model(cfg, Method::Full, 8), estimate_model(cfg, Method::GaLore, 8)};
  std::ostringstream csv;
  write_report_csv(csv, reps);
  CHECK(csv.str().rfind("method,weight_params,optimizer_params,weight_bytes,optimizer_bytes,total_bytes\n", 0) == 0);
  std::ostringstream table;
  write_report_table(table, reps);
  CHECK(table.str().find("galore") != std::string::npos);
}
