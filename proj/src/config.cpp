#include "vpr/config.hpp"

#include <fstream>
#include <initializer_list>
#include <sstream>

#include "vpr/errors.hpp"

namespace vpr {

using nlohmann::json;

void EngineConfig::validate() const {
  if (clusters < 1) throw std::invalid_argument("config: clusters must be >= 1");
  if (sinkhorn_iters < 1) throw std::invalid_argument("config: sinkhorn_iters must be >= 1");
  if (!(top_fraction > 0.0 && top_fraction <= 1.0)) throw std::invalid_argument("config: top_fraction outside (0,1]");
  if (local_cap < 1) throw std::invalid_argument("config: local_cap must be >= 1");
  if (!(clip_quantile > 0.0 && clip_quantile < 1.0)) throw std::invalid_argument("config: clip_quantile outside (0,1)");
  if (threads < 1) throw std::invalid_argument("config: threads must be >= 1");
  mining.validate();
  rerank.validate();
  losses.validate();
}

json config_to_json(const EngineConfig& c) {
  const auto& r = c.rerank;
  return json{
      {"version", kConfigVersion},
      {"aggregation", {{"clusters", c.clusters}, {"sinkhorn_iters", c.sinkhorn_iters}}},
      {"mask",
       {{"top_fraction", c.top_fraction},
        {"local_cap", c.local_cap},
        {"clip_quantile", c.clip_quantile},
        {"clip_mode", c.clip_mode == ClipMode::kRowWise ? "row" : "global"}}},
      {"mining", {{"thr1", c.mining.thr1}, {"thr2", c.mining.thr2}, {"n_pairs", c.mining.n_pairs}}},
      {"scheduler",
       {{"alpha", r.scheduler.alpha},
        {"k_min", r.scheduler.k_min},
        {"k_max", r.scheduler.k_max},
        {"k_prime", r.scheduler.k_prime}}},
      {"fusion",
       {{"gamma", r.gamma},
        {"dcs", r.toggles.dcs},
        {"fixed_k", r.fixed_k ? json(*r.fixed_k) : json(nullptr)},
        {"ralm", r.toggles.ralm},
        {"sc", r.toggles.sc}}},
      {"losses",
       {{"alpha_sa", c.losses.alpha_sa},
        {"beta_pc", c.losses.beta_pc},
        {"gamma_margin", c.losses.gamma_margin},
        {"ms",
         {{"alpha", c.losses.ms.alpha},
          {"beta", c.losses.ms.beta},
          {"lambda", c.losses.ms.lambda},
          {"margin", c.losses.ms.margin}}}}},
      {"evaluation",
       {{"max_distance_m", c.correctness.max_distance_m},
        {"frame_tolerance", c.correctness.frame_tolerance},
        {"exclude_self", r.exclude_self}}},
      {"threads", c.threads},
  };
}

namespace {

void only_keys(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw DataError(where, "config: '" + where + "' must be an object");
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (const char* key : keys) known = known || k == key;
    if (!known) throw DataError(where, "config: unknown key '" + k + "' in '" + where + "'");
  }
}

template <typename T>
void take(const json& j, const char* key, T& out, const std::string& where) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw DataError(where, "config: '" + where + "." + key + "' has the wrong type");
  }
}

void take_count(const json& j, const char* key, std::size_t& out, const std::string& where) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  if (!it->is_number_integer() || it->get<std::int64_t>() < 0)
    throw DataError(where, "config: '" + where + "." + key + "' must be a non-negative integer");
  out = it->get<std::size_t>();
}

}  // namespace

EngineConfig config_from_json(const json& j, EngineConfig c) {
  only_keys(j, "config", {"version", "aggregation", "mask", "mining", "scheduler", "fusion", "losses", "evaluation", "threads"});
  if (!j.contains("version")) throw DataError("version", "config: missing 'version'");
  if (!j["version"].is_number_integer() || j["version"].get<int>() != kConfigVersion)
    throw DataError("version", "config: unsupported version " + j["version"].dump());

  if (const auto it = j.find("aggregation"); it != j.end()) {
    only_keys(*it, "aggregation", {"clusters", "sinkhorn_iters"});
    take_count(*it, "clusters", c.clusters, "aggregation");
    take_count(*it, "sinkhorn_iters", c.sinkhorn_iters, "aggregation");
  }
  if (const auto it = j.find("mask"); it != j.end()) {
    only_keys(*it, "mask", {"top_fraction", "local_cap", "clip_quantile", "clip_mode"});
    take(*it, "top_fraction", c.top_fraction, "mask");
    take_count(*it, "local_cap", c.local_cap, "mask");
    take(*it, "clip_quantile", c.clip_quantile, "mask");
    if (it->contains("clip_mode")) {
      std::string mode;
      take(*it, "clip_mode", mode, "mask");
      if (mode == "row") c.clip_mode = ClipMode::kRowWise;
      else if (mode == "global") c.clip_mode = ClipMode::kGlobal;
      else throw DataError("mask", "config: clip_mode must be \"row\" or \"global\"");
    }
  }
  if (const auto it = j.find("mining"); it != j.end()) {
    only_keys(*it, "mining", {"thr1", "thr2", "n_pairs"});
    take(*it, "thr1", c.mining.thr1, "mining");
    take(*it, "thr2", c.mining.thr2, "mining");
    take_count(*it, "n_pairs", c.mining.n_pairs, "mining");
  }
  auto& r = c.rerank;
  if (const auto it = j.find("scheduler"); it != j.end()) {
    only_keys(*it, "scheduler", {"alpha", "k_min", "k_max", "k_prime"});
    take(*it, "alpha", r.scheduler.alpha, "scheduler");
    take_count(*it, "k_min", r.scheduler.k_min, "scheduler");
    take_count(*it, "k_max", r.scheduler.k_max, "scheduler");
    take_count(*it, "k_prime", r.scheduler.k_prime, "scheduler");
  }
  if (const auto it = j.find("fusion"); it != j.end()) {
    only_keys(*it, "fusion", {"gamma", "dcs", "fixed_k", "ralm", "sc"});
    take(*it, "gamma", r.gamma, "fusion");
    take(*it, "dcs", r.toggles.dcs, "fusion");
    take(*it, "ralm", r.toggles.ralm, "fusion");
    take(*it, "sc", r.toggles.sc, "fusion");
    if (const auto fk = it->find("fixed_k"); fk != it->end()) {
      if (fk->is_null()) {
        r.fixed_k.reset();
      } else {
        std::size_t k = 0;
        take_count(*it, "fixed_k", k, "fusion");
        r.fixed_k = k;
      }
    }
  }
  if (const auto it = j.find("losses"); it != j.end()) {
    only_keys(*it, "losses", {"alpha_sa", "beta_pc", "gamma_margin", "ms"});
    take(*it, "alpha_sa", c.losses.alpha_sa, "losses");
    take(*it, "beta_pc", c.losses.beta_pc, "losses");
    take(*it, "gamma_margin", c.losses.gamma_margin, "losses");
    if (const auto ms = it->find("ms"); ms != it->end()) {
      only_keys(*ms, "losses.ms", {"alpha", "beta", "lambda", "margin"});
      take(*ms, "alpha", c.losses.ms.alpha, "losses.ms");
      take(*ms, "beta", c.losses.ms.beta, "losses.ms");
      take(*ms, "lambda", c.losses.ms.lambda, "losses.ms");
      take(*ms, "margin", c.losses.ms.margin, "losses.ms");
    }
  }
  if (const auto it = j.find("evaluation"); it != j.end()) {
    only_keys(*it, "evaluation", {"max_distance_m", "frame_tolerance", "exclude_self"});
    take(*it, "max_distance_m", c.correctness.max_distance_m, "evaluation");
    take(*it, "frame_tolerance", c.correctness.frame_tolerance, "evaluation");
    take(*it, "exclude_self", r.exclude_self, "evaluation");
  }
  take_count(j, "threads", c.threads, "config");
  return c;
}

namespace {

json read_json_file(const std::filesystem::path& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw DataError(what, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(what, path.string() + ": " + e.what());
  }
}

std::string format_value(const json& v) {
  if (v.is_boolean()) return v.get<bool>() ? "1" : "0";
  if (v.is_string()) return v.get<std::string>();
  std::ostringstream os;
  os << v.get<double>();
  return os.str();
}

}  // namespace

EngineConfig load_config(const std::filesystem::path& path) { return config_from_json(read_json_file(path, "config")); }

AblationGrid parse_ablation_grid(const json& j, const EngineConfig& base, const std::filesystem::path& dir) {
  only_keys(j, "grid", {"version", "queries", "database", "base", "axes"});
  if (!j.contains("version") || !j["version"].is_number_integer() || j["version"].get<int>() != kConfigVersion)
    throw DataError("version", "grid: missing or unsupported version");
  AblationGrid g;
  const auto path_of = [&](const char* key) -> std::filesystem::path {
    if (!j.contains(key)) return {};
    if (!j[key].is_string()) throw DataError("grid", std::string("grid: '") + key + "' must be a path string");
    std::filesystem::path p = j[key].get<std::string>();
    return p.is_relative() && !dir.empty() ? dir / p : p;
  };
  g.queries = path_of("queries");
  g.database = path_of("database");
  g.base = base;
  if (j.contains("base")) {
    json b = j["base"];
    if (!b.contains("version")) b["version"] = kConfigVersion;
    g.base = config_from_json(b, base);
  }

  static constexpr const char* kAxes[] = {"top_fraction", "k", "alpha", "gamma", "ralm", "sc"};
  std::vector<std::pair<std::string, std::vector<json>>> axes;
  if (j.contains("axes")) {
    only_keys(j["axes"], "axes", {"top_fraction", "k", "alpha", "gamma", "ralm", "sc"});
    for (const char* name : kAxes) {
      if (!j["axes"].contains(name)) continue;
      const json& vals = j["axes"][name];
      if (!vals.is_array() || vals.empty()) throw DataError("axes", std::string("grid: axis '") + name + "' must be a non-empty array");
      axes.emplace_back(name, std::vector<json>(vals.begin(), vals.end()));
    }
  }

  std::vector<std::size_t> idx(axes.size(), 0);
  bool done = false;
  while (!done) {
    AblationPoint pt;
    pt.config = g.base.rerank;
    pt.selection = g.base.selection();
    std::string label;
    for (std::size_t a = 0; a < axes.size(); ++a) {
      const std::string& name = axes[a].first;
      const json& v = axes[a].second[idx[a]];
      try {
        if (name == "top_fraction") {
          pt.selection.top_fraction = v.get<double>();
        } else if (name == "k") {
          if (v.is_string()) {
            if (v.get<std::string>() != "dcs") throw DataError("axes", "grid: k values are integers or \"dcs\"");
            pt.config.toggles.dcs = true;
          } else {
            if (!v.is_number_integer() || v.get<std::int64_t>() < 0) throw DataError("axes", "grid: k must be >= 0");
            pt.config.toggles.dcs = false;
            pt.config.fixed_k = v.get<std::size_t>();
          }
        } else if (name == "alpha") {
          pt.config.scheduler.alpha = v.get<double>();
        } else if (name == "gamma") {
          pt.config.gamma = v.get<double>();
        } else if (name == "ralm") {
          pt.config.toggles.ralm = v.get<bool>();
        } else if (name == "sc") {
          pt.config.toggles.sc = v.get<bool>();
        }
      } catch (const json::exception&) {
        throw DataError("axes", "grid: axis '" + name + "' has a value of the wrong type");
      }
      if (!label.empty()) label += ';';
      label += name + '=' + format_value(v);
    }
    pt.label = label.empty() ? "base" : label;
    pt.config.validate();
    g.points.push_back(std::move(pt));

    // Odometer step; the last axis turns fastest.
    std::size_t a = axes.size();
    while (true) {
      if (a == 0) {
        done = true;
        break;
      }
      --a;
      if (++idx[a] < axes[a].second.size()) break;
      idx[a] = 0;
    }
  }
  return g;
}

AblationGrid load_ablation_grid(const std::filesystem::path& path, const EngineConfig& base) {
  return parse_ablation_grid(read_json_file(path, "grid"), base, path.parent_path());
}

json ranked_result_to_json(const RankedResult& result, bool include_timing) {
  json cands = json::array();
  for (const auto& c : result.candidates)
    cands.push_back({{"image_id", c.image_id},
                     {"s_g", c.s_g},
                     {"s_l", c.s_l},
                     {"s_final", c.s_final},
                     {"reranked", c.reranked},
                     {"matches", c.matches}});
  json j{{"candidates", cands},
         {"k_used", result.k_used},
         {"k_max_used", result.k_max_used},
         {"dcs", result.dcs},
         {"s_q", result.s_q},
         {"percentile", result.percentile},
         {"pool_bytes", result.pool_bytes}};
  if (include_timing) j["rerank_seconds"] = result.rerank_seconds;
  return j;
}

json recall_report_to_json(const RecallReport& report, bool include_timing) {
  json recall = json::object();
  json hits = json::object();
  for (std::size_t n = 0; n < report.ns.size(); ++n) {
    recall[std::to_string(report.ns[n])] = report.recall[n];
    std::string bits;
    for (const auto h : report.hits[n]) bits += h != 0 ? '1' : '0';
    hits[std::to_string(report.ns[n])] = bits;
  }
  json j{{"recall_at", recall},
         {"num_queries", report.num_queries},
         {"per_query_hits", hits},
         {"k_used", report.k_used},
         {"peak_pool_bytes", report.peak_pool_bytes}};
  if (include_timing) {
    j["median_rerank_seconds"] = report.median_rerank_seconds;
    j["mean_rerank_seconds"] = report.mean_rerank_seconds;
  }
  return j;
}

}  // namespace vpr
