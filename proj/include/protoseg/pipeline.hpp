#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "digest.hpp"
#include "error.hpp"
#include "featurize.hpp"
#include "formats.hpp"
#include "kmeans.hpp"
#include "mask.hpp"
#include "metrics.hpp"
#include "parallel.hpp"
#include "prototypes.hpp"
#include "segmentation.hpp"
#include "synth.hpp"
#include "version.hpp"

namespace protoseg {

namespace fs = std::filesystem;

/// An error raised inside a named pipeline stage. Keeps the original kind so
/// the exit code still reflects the failure category.
class StageError : public Error {
 public:
  StageError(std::string stage, const Error& cause)
      : Error(cause.kind(), "[" + stage + "] " + cause.what()), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct PipelineSeeds {
  std::uint64_t synth = 0;
  std::uint64_t subsample = 1;
  std::uint64_t cluster = 2;
  std::uint64_t sampling = 3;
  std::uint64_t segment = 4;
};

struct PipelineConfig {
  fs::path output_dir = "protoseg-run";
  std::optional<SyntheticDatasetConfig> synthetic = SyntheticDatasetConfig{};
  std::optional<fs::path> images_dir;  // *.ppm, used when `synthetic` is unset
  std::optional<fs::path> gt_dir;      // <stem>.pgm masks for the oracle and evaluation
  std::uint32_t patch_size = kDefaultPatch;
  std::uint32_t block = kDefaultBlock;
  std::size_t subsample_m = 20000;     // clamped to the number of patches
  std::optional<std::size_t> k;        // fixed k; otherwise chosen by the elbow rule
  std::size_t elbow_min = 2;
  std::size_t elbow_max = 50;          // clamped to the number of sampled patches
  std::size_t restarts = 8;
  std::size_t max_iter = 300;
  double tol = 1e-6;
  std::size_t t = 10;
  SamplingStrategy strategy = SamplingStrategy::central;
  double threshold = 0.8;
  bool whole_cluster = false;
  double gamma = 5.0;
  QueryMode mode = QueryMode::cluster_then_query;
  PipelineSeeds seeds{};

  void validate() const {
    if (!synthetic && !images_dir) throw ConfigError("either 'synthetic' or 'images_dir' must be given");
    if (synthetic) synthetic->validate();
    if (!synthetic && !gt_dir) throw ConfigError("'gt_dir' is required for oracle labeling of external images");
    if (block < 2) throw ConfigError("block must be >= 2");
    if (patch_size < block || patch_size % block != 0) throw ConfigError("patch_size must be a multiple of block");
    if (subsample_m < 1) throw ConfigError("subsample_m must be >= 1");
    if (k && *k < 2) throw ConfigError("k must be >= 2");
    if (!k && (elbow_min < 2 || elbow_max < elbow_min + 2)) {
      throw ConfigError("elbow range must start at >= 2 and hold at least 3 candidates");
    }
    if (restarts < 1) throw ConfigError("restarts must be >= 1");
    if (max_iter < 1) throw ConfigError("max_iter must be >= 1");
    if (!(tol >= 0.0)) throw ConfigError("tol must be >= 0");
    if (t < 1) throw ConfigError("t must be >= 1");
    if (!(threshold >= 0.0 && threshold < 1.0)) throw ConfigError("threshold must be in [0, 1)");
    if (!(gamma >= 1.0)) throw ConfigError("gamma must be >= 1");
  }
};

inline nlohmann::json to_json_value(const SyntheticDatasetConfig& s) {
  nlohmann::json colors = nlohmann::json::array();
  for (const auto& c : s.class_colors) colors.push_back({c[0], c[1], c[2]});
  return {{"image_count", s.image_count},     {"image_size", s.image_size},   {"class_count", s.class_count},
          {"region_seed_count", s.region_seed_count}, {"noise_sigma", s.noise_sigma}, {"class_colors", colors}};
}

inline nlohmann::json to_json_value(const PipelineConfig& c) {
  nlohmann::json j = {{"output_dir", c.output_dir.string()},
                      {"patch_size", c.patch_size},
                      {"block", c.block},
                      {"subsample_m", c.subsample_m},
                      {"elbow_min", c.elbow_min},
                      {"elbow_max", c.elbow_max},
                      {"restarts", c.restarts},
                      {"max_iter", c.max_iter},
                      {"tol", c.tol},
                      {"t", c.t},
                      {"strategy", to_string(c.strategy)},
                      {"threshold", c.threshold},
                      {"whole_cluster", c.whole_cluster},
                      {"gamma", c.gamma},
                      {"mode", to_string(c.mode)},
                      {"seeds",
                       {{"synth", c.seeds.synth},
                        {"subsample", c.seeds.subsample},
                        {"cluster", c.seeds.cluster},
                        {"sampling", c.seeds.sampling},
                        {"segment", c.seeds.segment}}}};
  j["k"] = c.k ? nlohmann::json(*c.k) : nlohmann::json(nullptr);
  if (c.synthetic) j["synthetic"] = to_json_value(*c.synthetic);
  if (c.images_dir) j["images_dir"] = c.images_dir->string();
  if (c.gt_dir) j["gt_dir"] = c.gt_dir->string();
  return j;
}

/// Reads a config document. Absent fields keep their defaults; a present
/// "images_dir" without "synthetic" switches to external input.
inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j, PipelineConfig c = {}) {
  try {
    if (j.contains("output_dir")) c.output_dir = j["output_dir"].get<std::string>();
    if (j.contains("images_dir")) {
      c.images_dir = j["images_dir"].get<std::string>();
      if (!j.contains("synthetic")) c.synthetic.reset();
    }
    if (j.contains("gt_dir")) c.gt_dir = j["gt_dir"].get<std::string>();
    if (j.contains("synthetic")) {
      if (j["synthetic"].is_null()) {
        c.synthetic.reset();
      } else {
        const auto& s = j["synthetic"];
        SyntheticDatasetConfig sc = c.synthetic.value_or(SyntheticDatasetConfig{});
        sc.image_count = s.value("image_count", sc.image_count);
        sc.image_size = s.value("image_size", sc.image_size);
        sc.class_count = s.value("class_count", sc.class_count);
        sc.region_seed_count = s.value("region_seed_count", sc.region_seed_count);
        sc.noise_sigma = s.value("noise_sigma", sc.noise_sigma);
        if (s.contains("class_colors")) {
          sc.class_colors.clear();
          for (const auto& rgb : s["class_colors"]) sc.class_colors.push_back({rgb.at(0), rgb.at(1), rgb.at(2)});
        }
        c.synthetic = sc;
      }
    }
    c.patch_size = j.value("patch_size", c.patch_size);
    c.block = j.value("block", c.block);
    c.subsample_m = j.value("subsample_m", c.subsample_m);
    if (j.contains("k")) {
      if (j["k"].is_null()) {
        c.k.reset();
      } else {
        const auto k = j["k"].get<std::int64_t>();
        if (k < 2) throw ConfigError("k must be >= 2");
        c.k = static_cast<std::size_t>(k);
      }
    }
    c.elbow_min = j.value("elbow_min", c.elbow_min);
    c.elbow_max = j.value("elbow_max", c.elbow_max);
    c.restarts = j.value("restarts", c.restarts);
    c.max_iter = j.value("max_iter", c.max_iter);
    c.tol = j.value("tol", c.tol);
    c.t = j.value("t", c.t);
    if (j.contains("strategy")) c.strategy = parse_sampling_strategy(j["strategy"].get<std::string>());
    c.threshold = j.value("threshold", c.threshold);
    c.whole_cluster = j.value("whole_cluster", c.whole_cluster);
    c.gamma = j.value("gamma", c.gamma);
    if (j.contains("mode")) c.mode = parse_query_mode(j["mode"].get<std::string>());
    if (j.contains("seeds")) {
      const auto& s = j["seeds"];
      c.seeds.synth = s.value("synth", c.seeds.synth);
      c.seeds.subsample = s.value("subsample", c.seeds.subsample);
      c.seeds.cluster = s.value("cluster", c.seeds.cluster);
      c.seeds.sampling = s.value("sampling", c.seeds.sampling);
      c.seeds.segment = s.value("segment", c.seeds.segment);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid pipeline config: ") + e.what());
  }
  return c;
}

struct StageRecord {
  std::string name;
  double seconds = 0.0;
  std::map<std::string, std::string> digests;  // output path relative to output_dir -> sha256
};

struct PipelineOutcome {
  EvalReport report;
  std::size_t selected_k = 0;
  std::size_t dictionary_size = 0;
  std::size_t patch_count = 0;
  std::vector<StageRecord> stages;
  nlohmann::json manifest;
};

namespace detail {

class StageRunner {
 public:
  explicit StageRunner(fs::path root) : root_(std::move(root)) {}

  template <class Fn>
  void run(const std::string& name, Fn&& fn) {
    StageRecord rec;
    rec.name = name;
    current_ = &rec;
    const auto start = std::chrono::steady_clock::now();
    try {
      fn();
    } catch (const StageError&) {
      throw;
    } catch (const Error& e) {
      throw StageError(name, e);
    } catch (const std::exception& e) {
      throw StageError(name, IoError(e.what()));
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    current_ = nullptr;
    stages_.push_back(std::move(rec));
  }

  /// Registers an output written by the current stage.
  void output(const fs::path& path) {
    current_->digests[fs::relative(path, root_).generic_string()] = sha256_file(path);
  }

  std::vector<StageRecord>& stages() { return stages_; }

 private:
  fs::path root_;
  StageRecord* current_ = nullptr;
  std::vector<StageRecord> stages_;
};

}  // namespace detail

/// Runs synth/ingest -> featurize -> subsample -> elbow/cluster ->
/// sample-reps -> oracle-label -> build-dict -> segment -> evaluate, writing
/// every artifact and a manifest.json under cfg.output_dir.
inline PipelineOutcome run_pipeline(const PipelineConfig& cfg) {
  cfg.validate();
  const fs::path root = cfg.output_dir;
  fs::create_directories(root);
  detail::StageRunner stages(root);
  PipelineOutcome out;

  std::vector<std::string> ids;
  std::vector<SourceImage> images;
  std::vector<ClassMask> gts;
  TissueLabelMap label_map;

  stages.run(cfg.synthetic ? "synth" : "ingest", [&] {
    if (cfg.synthetic) {
      auto sc = *cfg.synthetic;
      sc.rng_seed = cfg.seeds.synth;
      auto ds = generate_synthetic_dataset(sc);
      ids = std::move(ds.image_ids);
      images = std::move(ds.images);
      gts = std::move(ds.masks);
      label_map = std::move(ds.label_map);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto img_path = root / "images" / (ids[i] + ".ppm");
        const auto gt_path = root / "gt" / (ids[i] + ".pgm");
        write_ppm(images[i], img_path);
        write_mask(gts[i], gt_path);
        stages.output(img_path);
        stages.output(gt_path);
      }
    } else {
      std::vector<fs::path> paths;
      for (const auto& e : fs::directory_iterator(*cfg.images_dir)) {
        if (e.path().extension() == ".ppm") paths.push_back(e.path());
      }
      std::sort(paths.begin(), paths.end());
      if (paths.empty()) throw IoError("no .ppm images in " + cfg.images_dir->string());
      for (const auto& p : paths) {
        ids.push_back(p.stem().string());
        images.push_back(read_ppm(p));
        gts.push_back(read_mask(*cfg.gt_dir / (p.stem().string() + ".pgm")));
        if (!(gts.back().label_map == gts.front().label_map)) throw ConfigError("ground-truth masks use different label maps");
      }
      label_map = gts.front().label_map;
    }
    const auto labels_path = root / "labels.json";
    write_file_bytes(labels_path, to_json_value(label_map).dump(1) + "\n");
    stages.output(labels_path);
  });

  std::vector<EmbeddingGrid> grids(images.size());
  PatchEmbeddingSet all;
  stages.run("featurize", [&] {
    parallel_for(images.size(), [&](std::size_t i) { grids[i] = block_featurize(images[i], cfg.block); });
    all.dim = kFeatureDim;
    for (std::size_t i = 0; i < images.size(); ++i) {
      const auto grid_path = root / "grids" / (ids[i] + ".egf");
      write_egf(grids[i], grid_path);
      stages.output(grid_path);
      for (auto rec : crop_patches(images[i], cfg.patch_size, ids[i], all.size())) {
        const PatchGeometry g{rec.origin_x, rec.origin_y, cfg.patch_size};
        const auto emb = patch_embed_from_grid(grids[i], g, cfg.block);
        rec.gt_proportions = region_proportions(gts[i], g.x, g.y, g.size, g.size);
        const fs::path thumb = fs::path("thumbs") / (ids[i] + "_" + std::to_string(g.x) + "_" + std::to_string(g.y) + ".ppm");
        write_ppm(crop(images[i], g.x, g.y, g.size, g.size), root / "patches" / thumb);
        rec.thumbnail = thumb.generic_string();
        all.push_back(std::move(rec), emb);
      }
    }
    const auto esf = root / "patches" / "all.esf";
    write_esf(all, esf);
    stages.output(esf);
    stages.output(esf_sidecar_path(esf));
  });
  out.patch_count = all.size();

  PatchEmbeddingSet subset;
  stages.run("subsample", [&] {
    subset = subsample_patches(all, std::min(cfg.subsample_m, all.size()), cfg.seeds.subsample);
    normalize_rows(subset);
    const auto esf = root / "patches" / "subset.esf";
    write_esf(subset, esf);
    stages.output(esf);
    stages.output(esf_sidecar_path(esf));
  });

  const ClusterOptions copt{cfg.restarts, cfg.seeds.cluster, LloydOptions{cfg.max_iter, cfg.tol}};
  ClusteringResult clustering;
  stages.run("cluster", [&] {
    std::size_t k = 0;
    if (cfg.k) {
      k = *cfg.k;
    } else {
      const std::size_t hi = std::min(cfg.elbow_max, subset.size());
      const auto trace = elbow_select(subset.points(), cfg.elbow_min, hi, copt);
      const auto elbow_path = root / "elbow.json";
      write_file_bytes(elbow_path, to_json_value(trace).dump(1) + "\n");
      stages.output(elbow_path);
      k = trace.selected_k;
    }
    clustering = cluster(subset.points(), k, copt);
    const auto path = root / "clustering.json";
    write_file_bytes(path, to_json_value(clustering).dump(1) + "\n");
    stages.output(path);
  });
  out.selected_k = clustering.k;

  std::vector<std::vector<std::uint64_t>> reps;
  stages.run("sample-reps", [&] {
    reps = sample_all_representatives(subset, clustering, cfg.t, cfg.strategy, cfg.seeds.sampling);
    nlohmann::json clusters = nlohmann::json::array();
    for (std::size_t j = 0; j < reps.size(); ++j) {
      clusters.push_back({{"cluster", j}, {"size", clustering.cluster_sizes[j]}, {"patch_ids", reps[j]}});
    }
    const auto path = root / "representatives.json";
    write_file_bytes(path, nlohmann::json{{"strategy", to_string(cfg.strategy)}, {"t", cfg.t}, {"clusters", clusters}}.dump(1) + "\n");
    stages.output(path);
  });

  std::vector<ClusterVerdict> verdicts;
  stages.run("oracle-label", [&] {
    verdicts = oracle_verdicts(subset, clustering, reps, label_map,
                               OracleOptions{cfg.t, cfg.strategy, cfg.threshold, cfg.seeds.sampling, cfg.whole_cluster});
    const auto path = root / "verdicts.json";
    write_file_bytes(path, encode_verdicts(verdicts));
    stages.output(path);
  });

  PrototypeDictionary dict;
  stages.run("build-dict", [&] {
    dict = build_dictionary(clustering, verdicts, label_map);
    const auto path = root / "dictionary.json";
    save_dictionary(dict, path);
    stages.output(path);
  });
  out.dictionary_size = dict.size();

  std::vector<ClassMask> preds(grids.size());
  stages.run("segment", [&] {
    const CqConfig cq{cfg.gamma, cfg.restarts, cfg.seeds.segment, LloydOptions{cfg.max_iter, cfg.tol}};
    parallel_for(grids.size(), [&](std::size_t i) {
      preds[i] = upsample_mask(query(grids[i], dict, cfg.mode, cq), cfg.block);
    });
    for (std::size_t i = 0; i < grids.size(); ++i) {
      const auto path = root / "pred" / (ids[i] + ".pgm");
      write_mask(preds[i], path);
      stages.output(path);
    }
  });

  stages.run("evaluate", [&] {
    std::vector<MaskPair> pairs;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      // Remainder pixels beyond the last full block are not predicted.
      ClassMask gt(preds[i].height, preds[i].width, gts[i].label_map);
      for (std::uint32_t y = 0; y < gt.height; ++y) {
        for (std::uint32_t x = 0; x < gt.width; ++x) gt.at(y, x) = gts[i].at(y, x);
      }
      pairs.push_back({ids[i], preds[i], std::move(gt)});
    }
    out.report = evaluate_dataset(pairs);
    const auto path = root / "report.json";
    write_file_bytes(path, to_json_value(out.report).dump(1) + "\n");
    stages.output(path);
  });

  out.stages = stages.stages();
  nlohmann::json stage_json = nlohmann::json::array();
  for (const auto& s : out.stages) stage_json.push_back({{"name", s.name}, {"seconds", s.seconds}, {"outputs", s.digests}});
  out.manifest = {{"tool", "protoseg"},
                  {"version", kVersion},
                  {"config", to_json_value(cfg)},
                  {"selected_k", out.selected_k},
                  {"dictionary_size", out.dictionary_size},
                  {"patch_count", out.patch_count},
                  {"macro_dice", out.report.macro_dice},
                  {"macro_pixel_accuracy", out.report.macro_pixel_accuracy},
                  {"stages", std::move(stage_json)}};
  write_file_bytes(root / "manifest.json", out.manifest.dump(1) + "\n");
  return out;
}

}  // namespace protoseg
