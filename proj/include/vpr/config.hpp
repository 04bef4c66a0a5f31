#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "vpr/evaluation.hpp"
#include "vpr/losses.hpp"
#include "vpr/mining.hpp"
#include "vpr/region.hpp"
#include "vpr/rerank.hpp"

namespace vpr {

inline constexpr int kConfigVersion = 1;

/// Every tunable of the engine with its default.
struct EngineConfig {
  std::size_t clusters = 64;
  std::size_t sinkhorn_iters = 3;
  double top_fraction = kDefaultTopFraction;
  std::size_t local_cap = kDefaultLocalCap;
  double clip_quantile = kDefaultClipQuantile;
  ClipMode clip_mode = ClipMode::kRowWise;
  MiningParams mining;
  RerankConfig rerank;
  LossWeights losses;
  CorrectnessParams correctness;
  std::size_t threads = 1;

  void validate() const;
  [[nodiscard]] SelectionParams selection() const { return {top_fraction, local_cap}; }
};

nlohmann::json config_to_json(const EngineConfig& config);

/// Apply the keys present in `j` on top of `base`. Unknown keys, a missing or
/// unsupported "version" and wrongly typed values throw DataError.
EngineConfig config_from_json(const nlohmann::json& j, EngineConfig base = {});

EngineConfig load_config(const std::filesystem::path& path);

/// Ablation grid file:
///   {"version": 1, "queries": <manifest>, "database": <manifest>,
///    "base": {<config overrides>},
///    "axes": {"top_fraction": [...], "k": [10, 30, "dcs"], "alpha": [...],
///             "gamma": [...], "ralm": [true, false], "sc": [true, false]}}
/// Points are the cartesian product of the axes in that order; the last axis
/// varies fastest.
struct AblationGrid {
  std::filesystem::path queries;
  std::filesystem::path database;
  EngineConfig base;
  std::vector<AblationPoint> points;
};

AblationGrid parse_ablation_grid(const nlohmann::json& j, const EngineConfig& base, const std::filesystem::path& dir = {});
AblationGrid load_ablation_grid(const std::filesystem::path& path, const EngineConfig& base);

nlohmann::json ranked_result_to_json(const RankedResult& result, bool include_timing);
nlohmann::json recall_report_to_json(const RecallReport& report, bool include_timing);

}  // namespace vpr
