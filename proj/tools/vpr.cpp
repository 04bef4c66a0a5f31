#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "vpr/aggregation.hpp"
#include "vpr/config.hpp"
#include "vpr/container.hpp"
#include "vpr/errors.hpp"
#include "vpr/evaluation.hpp"
#include "vpr/losses.hpp"
#include "vpr/manifest.hpp"
#include "vpr/mining.hpp"
#include "vpr/region.hpp"
#include "vpr/rerank.hpp"
#include "vpr/resample.hpp"
#include "vpr/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

// Flags shared by the commands that run the engine. Unset flags leave the
// config file (or the defaults) in charge.
struct EngineFlags {
  std::string config_path;
  std::optional<std::size_t> k_min, k_max, k_prime, threads;
  std::optional<double> alpha, gamma, top_fraction;
  std::string fixed_k;
  bool no_ralm = false;
  bool no_sc = false;
  bool exclude_self = false;
  bool deterministic = false;

  void attach(CLI::App& app) {
    app.add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    app.add_option("--k-min", k_min, "smallest dynamic pool");
    app.add_option("--k-max", k_max, "global candidate pool");
    app.add_option("--k-prime", k_prime, "scores averaged for S_q");
    app.add_option("--alpha", alpha, "pool-size sensitivity");
    app.add_option("--gamma", gamma, "weight of the global score in the fused score");
    app.add_option("--fixed-k", fixed_k, "fixed pool size instead of the dynamic one, or 'off'");
    app.add_flag("--no-ralm", no_ralm, "count matches instead of weighting them by reliability");
    app.add_flag("--no-sc", no_sc, "rank the re-ranked pool by local score only");
    app.add_option("--mask-top-fraction", top_fraction, "fraction of patches kept for local matching");
    app.add_flag("--exclude-self", exclude_self, "drop database entries with the query's id");
    app.add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
    app.add_flag("--deterministic", deterministic, "leave timings and timestamps out of the output");
  }

  vpr::EngineConfig resolve() const {
    vpr::EngineConfig c = config_path.empty() ? vpr::EngineConfig{} : vpr::load_config(config_path);
    auto& r = c.rerank;
    if (k_min) r.scheduler.k_min = *k_min;
    if (k_max) r.scheduler.k_max = *k_max;
    if (k_prime) r.scheduler.k_prime = *k_prime;
    if (alpha) r.scheduler.alpha = *alpha;
    if (gamma) r.gamma = *gamma;
    if (!fixed_k.empty()) {
      if (fixed_k == "off") {
        r.toggles.dcs = true;
        r.fixed_k.reset();
      } else {
        std::size_t pos = 0;
        long long k = -1;
        try {
          k = std::stoll(fixed_k, &pos);
        } catch (const std::exception&) {
        }
        if (k < 0 || pos != fixed_k.size()) throw CLI::ValidationError("--fixed-k", "expects a count or 'off'");
        r.toggles.dcs = false;
        r.fixed_k = static_cast<std::size_t>(k);
      }
    }
    if (no_ralm) r.toggles.ralm = false;
    if (no_sc) r.toggles.sc = false;
    if (exclude_self) r.exclude_self = true;
    if (top_fraction) c.top_fraction = *top_fraction;
    if (threads) c.threads = *threads;
    r.threads = c.threads;
    c.validate();
    return c;
  }
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw vpr::DataError("output", "cannot write " + path.string());
}

void emit_json(const json& j, const std::string& out) {
  const std::string text = j.dump(2) + "\n";
  if (out.empty() || out == "-") std::cout << text;
  else write_text(out, text);
}

std::string timestamp() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

// ---- synth ------------------------------------------------------------------

std::vector<vpr::ManifestEntry> save_records(const std::vector<vpr::ImageRecord>& records, const fs::path& dir,
                                             const fs::path& root) {
  fs::create_directories(dir);
  std::vector<vpr::ManifestEntry> entries;
  for (const auto& r : records) {
    const fs::path file = dir / (r.image_id + ".vprf");
    vpr::save_record(r, file);
    entries.push_back({r.image_id, r.geotag, r.frame_index, fs::relative(file, root)});
  }
  return entries;
}

struct SynthArgs {
  std::uint64_t seed = 0;
  std::string out;
  std::string kind = "geo";
  std::size_t size = 1000;
  std::size_t queries = 100;
  bool dense = false;
  double sigma = 0.0;
};

int run_synth(const SynthArgs& a) {
  const fs::path root(a.out);
  fs::create_directories(root);
  if (a.kind == "geo") {
    vpr::GeoParams p;
    p.seed = a.seed;
    p.size = a.size;
    p.queries = a.queries;
    if (a.dense) {
      p.local_grid = {16, 16};
      p.dense_patch_grid = {8, 8};
    }
    const vpr::GeoDataset d = vpr::gen_geo_index(p);
    vpr::write_manifest(root / "database.tsv", save_records(d.database, root / "db", root));
    vpr::write_manifest(root / "queries.tsv", save_records(d.queries, root / "queries", root));
    spdlog::info("wrote {} database and {} query records to {}", d.database.size(), d.queries.size(), root.string());
  } else if (a.kind == "scene") {
    vpr::SceneParams p;
    p.seed = a.seed;
    p.noise_sigma = a.sigma;
    const vpr::ClusterScene s = vpr::gen_cluster_scene(p);
    vpr::save_record(s.anchor, root / "anchor.vprf");
    vpr::save_record(s.positive, root / "positive.vprf");
    std::string lines;
    for (const auto& [pa, pb] : s.planted) lines += json{{"p", pa}, {"p2", pb}}.dump() + "\n";
    write_text(root / "planted.jsonl", lines);
  } else if (a.kind == "planted") {
    const vpr::PlantedRerankCase c = vpr::gen_planted_rerank(a.seed, a.size);
    vpr::write_manifest(root / "database.tsv", save_records(c.database, root / "db", root));
    vpr::write_manifest(root / "queries.tsv", save_records({c.query}, root / "queries", root));
  } else {
    throw CLI::ValidationError("--kind", "expects geo, scene or planted");
  }
  return 0;
}

// ---- build-index --------------------------------------------------------------

int run_build_index(const std::string& manifest, const std::string& out, const std::string& weights,
                    const EngineFlags& flags) {
  const vpr::EngineConfig cfg = flags.resolve();
  std::optional<vpr::ClusterParams> params;
  if (!weights.empty()) params = vpr::load_cluster_params(weights);
  const fs::path root(out);
  fs::create_directories(root / "records");
  std::vector<vpr::ManifestEntry> entries;
  for (vpr::ImageRecord r : vpr::load_manifest_records(manifest)) {
    if (params && !r.tokens.empty()) {
      if (!r.assignment) {
        r.assignment = vpr::assign_tokens(r.tokens, *params);
        r.clusters = params->clusters;
      }
      if (r.global.values.empty()) {
        r.global = vpr::aggregate_global(r.tokens, r.class_token, *r.assignment, *params);
        r.reduced_dim = params->reduced_dim;
      }
    }
    if (r.mask.empty() && r.assignment && !r.reliability.values.empty())
      r.mask = vpr::fuse_mask(r.reliability, r.assignment->mask_a, cfg.top_fraction);
    if (r.global.values.empty())
      throw vpr::DataError("global_descriptor", r.image_id + ": no global descriptor (pass --weights to compute one)");
    r.local = vpr::prepare_entry(r, cfg.selection()).local;
    const fs::path file = root / "records" / (r.image_id + ".vprf");
    vpr::save_record(r, file);
    entries.push_back({r.image_id, r.geotag, r.frame_index, fs::relative(file, root)});
  }
  vpr::write_manifest(root / "index.tsv", entries);
  spdlog::info("indexed {} records into {}", entries.size(), root.string());
  return 0;
}

// ---- query / evaluate / ablate --------------------------------------------------

vpr::SearchIndex load_index(const std::string& manifest, const vpr::SelectionParams& sel) {
  return vpr::SearchIndex(vpr::prepare_entries(vpr::load_manifest_records(manifest), sel));
}

int run_query(const std::string& index_path, const std::string& query_path, const std::string& out,
              const EngineFlags& flags) {
  const vpr::EngineConfig cfg = flags.resolve();
  const vpr::SearchIndex index = load_index(index_path, cfg.selection());
  const vpr::IndexEntry query = vpr::prepare_entry(vpr::load_record(query_path), cfg.selection());
  const vpr::RankedResult res = vpr::rerank(query, index, cfg.rerank);
  json j{{"query", query.image_id}, {"config", vpr::config_to_json(cfg)},
         {"result", vpr::ranked_result_to_json(res, !flags.deterministic)}};
  if (!flags.deterministic) j["generated_at"] = timestamp();
  emit_json(j, out);
  return 0;
}

int run_evaluate(const std::string& queries, const std::string& database, const std::string& out,
                 const EngineFlags& flags) {
  const vpr::EngineConfig cfg = flags.resolve();
  const auto q = vpr::prepare_entries(vpr::load_manifest_records(queries), cfg.selection());
  const vpr::SearchIndex index = load_index(database, cfg.selection());
  vpr::EvalOptions opts;
  opts.correctness = cfg.correctness;
  opts.threads = cfg.threads;
  const vpr::RecallReport report = vpr::evaluate(q, index, cfg.rerank, opts);
  json j{{"config", vpr::config_to_json(cfg)}, {"report", vpr::recall_report_to_json(report, !flags.deterministic)}};
  if (!flags.deterministic) j["generated_at"] = timestamp();
  emit_json(j, out);
  for (std::size_t n = 0; n < report.ns.size(); ++n)
    spdlog::info("recall@{} = {:.4f}", report.ns[n], report.recall[n]);
  return 0;
}

int run_ablate(const std::string& grid_path, const std::string& out, const std::string& queries,
               const std::string& database, const EngineFlags& flags) {
  const vpr::EngineConfig base = flags.resolve();
  vpr::AblationGrid grid = vpr::load_ablation_grid(grid_path, base);
  if (!queries.empty()) grid.queries = queries;
  if (!database.empty()) grid.database = database;
  if (grid.queries.empty() || grid.database.empty())
    throw vpr::DataError("grid", "no query or database manifest (set them in the grid or with flags)");
  vpr::EvalOptions opts;
  opts.correctness = grid.base.correctness;
  opts.threads = grid.base.threads;
  const auto rows = vpr::ablation_sweep(vpr::load_manifest_records(grid.queries),
                                        vpr::load_manifest_records(grid.database), grid.points, opts);
  const std::string csv = vpr::ablation_csv(rows);
  if (out.empty() || out == "-") std::cout << csv;
  else write_text(out, csv);
  return 0;
}

// ---- mine-pairs / losses ----------------------------------------------------------

int run_mine_pairs(const std::string& anchor, const std::string& positive, const std::string& out,
                   const EngineFlags& flags, std::optional<double> thr1, std::optional<double> thr2,
                   std::optional<std::size_t> n_pairs) {
  vpr::EngineConfig cfg = flags.resolve();
  if (thr1) cfg.mining.thr1 = *thr1;
  if (thr2) cfg.mining.thr2 = *thr2;
  if (n_pairs) cfg.mining.n_pairs = *n_pairs;
  const auto pairs = vpr::mine_pairs(vpr::load_record(anchor), vpr::load_record(positive), cfg.mining);
  std::string lines;
  for (const auto& p : pairs)
    lines += json{{"p", p.anchor_index}, {"p2", p.positive_index}, {"sim", p.similarity}, {"ratio", p.ratio}}.dump() + "\n";
  if (out.empty() || out == "-") std::cout << lines;
  else write_text(out, lines);
  return 0;
}

std::vector<vpr::PseudoPair> read_pairs(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw vpr::DataError("pairs", "cannot open " + path.string());
  std::vector<vpr::PseudoPair> pairs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      vpr::PseudoPair p;
      p.anchor_index = j.at("p").get<std::size_t>();
      p.positive_index = j.at("p2").get<std::size_t>();
      p.similarity = j.value("sim", 0.0);
      p.ratio = j.value("ratio", 0.0);
      pairs.push_back(p);
    } catch (const json::exception& e) {
      throw vpr::DataError("pairs", path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return pairs;
}

vpr::Array2d token_matrix(const vpr::ImageRecord& r) {
  vpr::Array2d f(r.tokens.count(), r.tokens.dim);
  for (std::size_t i = 0; i < f.values.size(); ++i) f.values[i] = r.tokens.tokens[i];
  return f;
}

int run_losses(const std::string& anchor_path, const std::string& positive_path, const std::string& pairs_path,
               const std::string& negative_path, const std::string& out, const EngineFlags& flags) {
  const vpr::EngineConfig cfg = flags.resolve();
  const vpr::ImageRecord a = vpr::load_record(anchor_path);
  const vpr::ImageRecord p = vpr::load_record(positive_path);
  std::optional<vpr::ImageRecord> n;
  if (!negative_path.empty()) n = vpr::load_record(negative_path);
  vpr::LossComponents c;
  json skipped = json::array();

  if (a.assignment && !a.reliability.values.empty()) {
    const auto& ma = a.assignment->mask_a;
    const vpr::Array2d r = vpr::cast_array<double>(vpr::resample_bilinear(a.reliability.values, ma.rows, ma.cols));
    c.sa = vpr::loss_sa(ma, r, cfg.clip_quantile, cfg.clip_mode).value;
  } else {
    skipped.push_back("sa");
  }

  if (!a.tokens.empty() && !p.tokens.empty() && !a.mask.empty() && !p.mask.empty()) {
    try {
      c.sce = vpr::loss_sce_masks(token_matrix(a), vpr::cast_array<double>(a.mask.values), token_matrix(p),
                                  vpr::cast_array<double>(p.mask.values), cfg.losses.gamma_margin)
                  .value;
    } catch (const std::domain_error& e) {
      throw vpr::DataError("fused_mask", e.what());
    }
  } else {
    skipped.push_back("sce");
  }

  if (!pairs_path.empty()) {
    const auto in = vpr::pair_similarity_inputs(a, p, read_pairs(pairs_path));
    c.pc = vpr::loss_pc(in.anchor, in.positive, in.backbone_sims).value;
  } else {
    skipped.push_back("pc");
  }

  std::vector<const vpr::ImageRecord*> batch{&a, &p};
  if (n) batch.push_back(&*n);
  bool have_globals = true;
  for (const auto* r : batch) have_globals = have_globals && !r->global.values.empty();
  if (have_globals && n) {
    const std::size_t dim = a.global.values.size();
    vpr::Array2d g(batch.size(), dim);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (batch[i]->global.values.size() != dim) throw vpr::DataError("global_descriptor", "lengths differ");
      for (std::size_t k = 0; k < dim; ++k) g(i, k) = batch[i]->global.values[k];
    }
    c.ms = vpr::loss_ms(g, {0, 0, 1}, cfg.losses.ms);
  } else {
    skipped.push_back("ms");
  }

  if (n) {
    const auto sel = cfg.selection();
    c.mnn = vpr::loss_mnn(vpr::prepare_entry(a, sel).local, vpr::prepare_entry(p, sel).local,
                          vpr::prepare_entry(*n, sel).local);
  } else {
    skipped.push_back("mnn");
  }

  const json j{{"ms", c.ms},   {"mnn", c.mnn},        {"sce", c.sce},
               {"sa", c.sa},   {"pc", c.pc},          {"total", vpr::loss_total(c, cfg.losses)},
               {"skipped", skipped},
               {"weights", {{"alpha_sa", cfg.losses.alpha_sa}, {"beta_pc", cfg.losses.beta_pc}}}};
  emit_json(j, out);
  return 0;
}

// ---- dump-mask -----------------------------------------------------------------

template <typename T>
void write_pgm(const fs::path& path, const vpr::Array2<T>& map, double scale) {
  std::ofstream out(path, std::ios::binary);
  out << "P5\n" << map.cols << ' ' << map.rows << "\n255\n";
  for (const T v : map.values) {
    const double x = std::clamp(static_cast<double>(v) * scale, 0.0, 1.0);
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(x * 255.0))));
  }
  if (!out) throw vpr::DataError("output", "cannot write " + path.string());
}

int run_dump_mask(const std::string& record_path, const std::string& out_dir) {
  const vpr::ImageRecord r = vpr::load_record(record_path);
  const fs::path dir(out_dir);
  fs::create_directories(dir);
  int written = 0;
  if (r.assignment) {
    write_pgm(dir / "m_a.pgm", r.assignment->mask_a, 1.0);
    ++written;
  }
  if (!r.reliability.values.empty()) {
    write_pgm(dir / "r.pgm", r.reliability.values, 1.0);
    ++written;
  }
  if (!r.mask.empty()) {
    write_pgm(dir / "m.pgm", r.mask.values, 1.0);
    write_pgm(dir / "m_bin.pgm", r.mask.bin, 1.0);
    written += 2;
  }
  if (written == 0) throw vpr::DataError("fused_mask", r.image_id + ": record holds no mask or reliability map");
  return 0;
}

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("vpr");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::warn);
  if (const char* env = std::getenv("VPR_LOG"); env != nullptr && *env != '\0') {
    const auto level = spdlog::level::from_str(env);
    if (level == spdlog::level::off && std::string(env) != "off")
      spdlog::warn("unknown VPR_LOG level '{}', keeping 'warn'", env);
    else
      spdlog::set_level(level);
  }
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Two-stage visual place recognition engine"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "show help for every subcommand");

  EngineFlags flags;
  std::string out;

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "generate a synthetic dataset");
  c_synth->add_option("--seed", synth.seed, "generator seed");
  c_synth->add_option("--out", synth.out, "output directory")->required();
  c_synth->add_option("--kind", synth.kind, "geo, scene or planted")->check(CLI::IsMember({"geo", "scene", "planted"}));
  c_synth->add_option("--size", synth.size, "database images")->check(CLI::PositiveNumber);
  c_synth->add_option("--queries", synth.queries, "query images (geo)");
  c_synth->add_flag("--dense", synth.dense, "store dense local grids with masks (geo)");
  c_synth->add_option("--sigma", synth.sigma, "token noise (scene)")->check(CLI::NonNegativeNumber);

  std::string manifest, weights;
  auto* c_build = app.add_subcommand("build-index", "complete and mask records, write an index manifest");
  c_build->add_option("--manifest", manifest, "input manifest")->required()->check(CLI::ExistingFile);
  c_build->add_option("--out", out, "output directory")->required();
  c_build->add_option("--weights", weights, "aggregation weights (VPRW)")->check(CLI::ExistingFile);
  flags.attach(*c_build);

  std::string index_path, query_path;
  auto* c_query = app.add_subcommand("query", "rank the index for one query record");
  c_query->add_option("--index", index_path, "database manifest")->required()->check(CLI::ExistingFile);
  c_query->add_option("--query", query_path, "query record")->required()->check(CLI::ExistingFile);
  c_query->add_option("--out", out, "output JSON (default stdout)");
  flags.attach(*c_query);

  std::string queries, database;
  auto* c_eval = app.add_subcommand("evaluate", "Recall@N over a query set");
  c_eval->add_option("--queries", queries, "query manifest")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--database", database, "database manifest")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--out", out, "report JSON (default stdout)");
  flags.attach(*c_eval);

  std::string grid_path;
  auto* c_ablate = app.add_subcommand("ablate", "evaluate a grid of configurations");
  c_ablate->add_option("--grid", grid_path, "grid JSON")->required()->check(CLI::ExistingFile);
  c_ablate->add_option("--out", out, "CSV output (default stdout)");
  c_ablate->add_option("--queries", queries, "query manifest (overrides the grid)");
  c_ablate->add_option("--database", database, "database manifest (overrides the grid)");
  flags.attach(*c_ablate);

  std::string anchor, positive, negative, pairs;
  std::optional<double> thr1, thr2;
  std::optional<std::size_t> n_pairs;
  auto* c_mine = app.add_subcommand("mine-pairs", "mine pseudo-correspondences between two records");
  c_mine->add_option("--anchor", anchor, "anchor record")->required()->check(CLI::ExistingFile);
  c_mine->add_option("--positive", positive, "positive record")->required()->check(CLI::ExistingFile);
  c_mine->add_option("--thr1", thr1, "minimum best similarity");
  c_mine->add_option("--thr2", thr2, "maximum second/best ratio");
  c_mine->add_option("--n-pairs", n_pairs, "maximum number of pairs");
  c_mine->add_option("--out", out, "JSON-lines output (default stdout)");
  flags.attach(*c_mine);

  auto* c_losses = app.add_subcommand("losses", "evaluate the loss terms on records and mined pairs");
  c_losses->add_option("--anchor", anchor, "anchor record")->required()->check(CLI::ExistingFile);
  c_losses->add_option("--positive", positive, "positive record")->required()->check(CLI::ExistingFile);
  c_losses->add_option("--pairs", pairs, "mined pairs (JSON lines)")->check(CLI::ExistingFile);
  c_losses->add_option("--negative", negative, "negative record")->check(CLI::ExistingFile);
  c_losses->add_option("--out", out, "output JSON (default stdout)");
  flags.attach(*c_losses);

  std::string record_path;
  auto* c_dump = app.add_subcommand("dump-mask", "write M_a, R, M and M_bin as PGM images");
  c_dump->add_option("--record", record_path, "record")->required()->check(CLI::ExistingFile);
  c_dump->add_option("--out-dir", out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    if (argc <= 1) std::cerr << app.help();
    return kExitUsage;
  }

  try {
    if (c_synth->parsed()) return run_synth(synth);
    if (c_build->parsed()) return run_build_index(manifest, out, weights, flags);
    if (c_query->parsed()) return run_query(index_path, query_path, out, flags);
    if (c_eval->parsed()) return run_evaluate(queries, database, out, flags);
    if (c_ablate->parsed()) return run_ablate(grid_path, out, queries, database, flags);
    if (c_mine->parsed()) return run_mine_pairs(anchor, positive, out, flags, thr1, thr2, n_pairs);
    if (c_losses->parsed()) return run_losses(anchor, positive, pairs, negative, out, flags);
    if (c_dump->parsed()) return run_dump_mask(record_path, out);
  } catch (const CLI::ValidationError& e) {
    spdlog::error("{}", e.what());
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    spdlog::error("{}", e.what());
    return kExitUsage;
  } catch (const vpr::DataError& e) {
    spdlog::error("{}", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitData;
  }
  return kExitUsage;
}
