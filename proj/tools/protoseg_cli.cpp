// protoseg command-line interface: one subcommand per pipeline stage.

#include <algorithm>
#include <csignal>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "protoseg/pipeline.hpp"
#include "protoseg/protoseg.hpp"
#include "protoseg/service.hpp"

namespace fs = std::filesystem;
using namespace protoseg;

namespace {

nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_file_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_file_bytes(path, j.dump(1) + "\n"); }

std::vector<fs::path> files_with_extension(const fs::path& dir, const std::string& ext) {
  if (!fs::is_directory(dir)) throw IoError(dir.string() + " is not a directory");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ext) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Ingested embeddings are L2-normalized once before clustering.
PatchEmbeddingSet load_patches(const fs::path& path) {
  auto set = read_esf(path);
  normalize_rows(set);
  return set;
}

ClusteringResult load_clustering(const fs::path& path) { return clustering_from_json(read_json(path)); }

std::vector<std::vector<std::uint64_t>> load_representatives(const fs::path& path, std::size_t k) {
  const auto j = read_json(path);
  std::vector<std::vector<std::uint64_t>> reps(k);
  try {
    for (const auto& c : j.at("clusters")) {
      const auto idx = c.at("cluster").get<std::size_t>();
      if (idx >= k) throw ConfigError("representatives reference cluster " + std::to_string(idx) + " beyond k");
      reps[idx] = c.at("patch_ids").get<std::vector<std::uint64_t>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  return reps;
}

struct SynthArgs {
  fs::path out;
  SyntheticDatasetConfig cfg;
};

struct FeaturizeArgs {
  fs::path images, out, patches, gt;
  std::uint32_t patch_size = kDefaultPatch;
  std::uint32_t block = kDefaultBlock;
  bool thumbs = false;
};

struct SubsampleArgs {
  fs::path in, out;
  std::size_t m = 20000;
  std::uint64_t seed = 0;
};

struct ClusterArgs {
  fs::path in, out;
  std::size_t k = 0, v_min = 2, v_max = 50;
  ClusterOptions opt;
};

struct RepsArgs {
  fs::path patches, clustering, out;
  std::size_t t = 10;
  std::string strategy = "central";
  std::uint64_t seed = 0;
};

struct OracleArgs {
  fs::path patches, clustering, reps, labels, out;
  double threshold = 0.8;
  bool whole_cluster = false;
};

struct DictArgs {
  fs::path clustering, verdicts, labels, out;
};

struct SegmentArgs {
  fs::path grid, dict, out;
  std::string mode = "cq";
  double gamma = 5.0;
  std::uint64_t seed = 0;
  std::size_t restarts = 8;
  std::uint32_t upsample = 32;
};

struct EvaluateArgs {
  fs::path pred, gt, out;
  bool include_absent = false;
};

struct PipelineArgs {
  fs::path config, out_dir;
  std::optional<std::size_t> k;
  std::string mode;
  std::optional<std::uint64_t> seed_synth, seed_subsample, seed_cluster, seed_sampling, seed_segment;
};

struct ServeArgs {
  fs::path dir = "sessions";
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string cors_origin = "*";
};

void run_synth(const SynthArgs& a) {
  const auto ds = generate_synthetic_dataset(a.cfg);
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    write_ppm(ds.images[i], a.out / "images" / (ds.image_ids[i] + ".ppm"));
    write_mask(ds.masks[i], a.out / "gt" / (ds.image_ids[i] + ".pgm"));
  }
  write_json(a.out / "labels.json", to_json_value(ds.label_map));
  std::cout << "wrote " << ds.images.size() << " images to " << a.out << "\n";
}

void run_featurize(const FeaturizeArgs& a) {
  const auto paths = files_with_extension(a.images, ".ppm");
  if (paths.empty()) throw IoError("no .ppm images in " + a.images.string());
  std::vector<EmbeddingGrid> grids(paths.size());
  std::vector<SourceImage> images(paths.size());
  parallel_for(paths.size(), [&](std::size_t i) {
    images[i] = read_ppm(paths[i]);
    grids[i] = block_featurize(images[i], a.block);
  });
  PatchEmbeddingSet set;
  set.dim = kFeatureDim;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    const std::string id = paths[i].stem().string();
    write_egf(grids[i], a.out / (id + ".egf"));
    if (a.patches.empty()) continue;
    std::optional<ClassMask> gt;
    if (!a.gt.empty()) gt = read_mask(a.gt / (id + ".pgm"));
    for (auto rec : crop_patches(images[i], a.patch_size, id, set.size())) {
      const PatchGeometry g{rec.origin_x, rec.origin_y, a.patch_size};
      if (gt) rec.gt_proportions = region_proportions(*gt, g.x, g.y, g.size, g.size);
      if (a.thumbs) {
        const fs::path thumb = fs::path("thumbs") / (id + "_" + std::to_string(g.x) + "_" + std::to_string(g.y) + ".ppm");
        write_ppm(crop(images[i], g.x, g.y, g.size, g.size), a.patches.parent_path() / thumb);
        rec.thumbnail = thumb.generic_string();
      }
      set.push_back(std::move(rec), patch_embed_from_grid(grids[i], g, a.block));
    }
  }
  if (!a.patches.empty()) write_esf(set, a.patches);
  std::cout << "featurized " << paths.size() << " images, " << set.size() << " patches\n";
}

void run_subsample(const SubsampleArgs& a) {
  const auto set = read_esf(a.in);
  write_esf(subsample_patches(set, a.m, a.seed), a.out);
}

void run_cluster(const ClusterArgs& a) {
  const auto set = load_patches(a.in);
  const auto res = cluster(set.points(), a.k, a.opt);
  write_json(a.out, to_json_value(res));
  std::cout << "k=" << res.k << " inertia=" << res.inertia << " iterations=" << res.iterations << "\n";
}

void run_elbow(const ClusterArgs& a) {
  const auto set = load_patches(a.in);
  const auto trace = elbow_select(set.points(), a.v_min, a.v_max, a.opt);
  write_json(a.out, to_json_value(trace));
  std::cout << "selected k=" << trace.selected_k << "\n";
}

void run_sample_reps(const RepsArgs& a) {
  const auto set = load_patches(a.patches);
  const auto res = load_clustering(a.clustering);
  const auto strategy = parse_sampling_strategy(a.strategy);
  const auto reps = sample_all_representatives(set, res, a.t, strategy, a.seed);
  nlohmann::json clusters = nlohmann::json::array();
  for (std::size_t j = 0; j < reps.size(); ++j) {
    clusters.push_back({{"cluster", j}, {"size", res.cluster_sizes[j]}, {"patch_ids", reps[j]}});
  }
  write_json(a.out, {{"strategy", a.strategy}, {"t", a.t}, {"clusters", clusters}});
}

void run_oracle_label(const OracleArgs& a) {
  const auto set = load_patches(a.patches);
  const auto res = load_clustering(a.clustering);
  const auto labels = label_map_from_json(read_json(a.labels));
  std::vector<std::vector<std::uint64_t>> reps(res.k);
  if (!a.whole_cluster) reps = load_representatives(a.reps, res.k);
  OracleOptions opt;
  opt.threshold = a.threshold;
  opt.whole_cluster = a.whole_cluster;
  const auto verdicts = oracle_verdicts(set, res, reps, labels, opt);
  write_file_bytes(a.out, encode_verdicts(verdicts));
  const auto kept = std::count_if(verdicts.begin(), verdicts.end(), [](const auto& v) { return !v.dropped(); });
  std::cout << kept << " of " << verdicts.size() << " clusters labeled\n";
}

void run_build_dict(const DictArgs& a) {
  const auto res = load_clustering(a.clustering);
  const auto verdicts = decode_verdicts(read_file_text(a.verdicts));
  const auto labels = label_map_from_json(read_json(a.labels));
  const auto dict = build_dictionary(res, verdicts, labels);
  save_dictionary(dict, a.out);
  std::cout << dict.size() << " prototypes\n";
}

void run_segment(const SegmentArgs& a) {
  const auto dict = load_dictionary(a.dict);
  const auto mode = parse_query_mode(a.mode);
  const CqConfig cq{a.gamma, a.restarts, a.seed, {}};
  auto one = [&](const fs::path& in, const fs::path& out) {
    write_mask(upsample_mask(query(read_egf(in), dict, mode, cq), a.upsample), out);
  };
  if (fs::is_directory(a.grid)) {
    for (const auto& p : files_with_extension(a.grid, ".egf")) one(p, a.out / (p.stem().string() + ".pgm"));
  } else {
    one(a.grid, a.out);
  }
}

void run_evaluate(const EvaluateArgs& a) {
  std::vector<MaskPair> pairs;
  for (const auto& p : files_with_extension(a.pred, ".pgm")) {
    pairs.push_back({p.stem().string(), read_mask(p), read_mask(a.gt / p.filename())});
  }
  const auto report = evaluate_dataset(pairs, EvalOptions{a.include_absent});
  write_json(a.out, to_json_value(report));
  std::cout << "macro pixel accuracy " << report.macro_pixel_accuracy << ", macro Dice " << report.macro_dice << "\n";
}

void run_pipeline_cmd(const PipelineArgs& a) {
  PipelineConfig cfg;
  if (!a.config.empty()) cfg = pipeline_config_from_json(read_json(a.config));
  if (!a.out_dir.empty()) cfg.output_dir = a.out_dir;
  if (a.k) {
    if (*a.k < 2) throw ConfigError("k must be >= 2");
    cfg.k = *a.k;
  }
  if (!a.mode.empty()) cfg.mode = parse_query_mode(a.mode);
  if (a.seed_synth) cfg.seeds.synth = *a.seed_synth;
  if (a.seed_subsample) cfg.seeds.subsample = *a.seed_subsample;
  if (a.seed_cluster) cfg.seeds.cluster = *a.seed_cluster;
  if (a.seed_sampling) cfg.seeds.sampling = *a.seed_sampling;
  if (a.seed_segment) cfg.seeds.segment = *a.seed_segment;
  const auto out = run_pipeline(cfg);
  std::cout << "k=" << out.selected_k << " prototypes=" << out.dictionary_size
            << " macro pixel accuracy=" << out.report.macro_pixel_accuracy << " macro Dice=" << out.report.macro_dice
            << "\nartifacts in " << cfg.output_dir << "\n";
}

httplib::Server* g_server = nullptr;

void run_serve(const ServeArgs& a) {
  LabelingSessionStore store(a.dir);
  httplib::Server server;
  install_labeling_routes(server, store, a.cors_origin);
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::cout << "labeling service on http://" << a.host << ":" << a.port << " (" << store.session_ids().size()
            << " sessions restored from " << a.dir << ")" << std::endl;
  if (!server.listen(a.host, a.port)) throw IoError("cannot listen on " + a.host + ":" + std::to_string(a.port));
}

void add_cluster_options(CLI::App* cmd, ClusterArgs& a) {
  cmd->add_option("--in", a.in, "Embedding set (ESF)")->required();
  cmd->add_option("--out", a.out, "Output JSON")->required();
  cmd->add_option("--restarts", a.opt.restarts, "K-Means++ restarts")->capture_default_str();
  cmd->add_option("--seed", a.opt.seed, "RNG seed")->capture_default_str();
  cmd->add_option("--max-iter", a.opt.lloyd.max_iter, "Lloyd iteration cap")->capture_default_str();
  cmd->add_option("--tol", a.opt.lloyd.tol, "Relative inertia tolerance")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"protoseg: prototype-mining segmentation from image embeddings"};
  app.require_subcommand(1);
  unsigned threads = 0;
  app.add_option("--threads", threads, "Worker thread cap (0 = all cores)");
  app.set_version_flag("--version", std::string(kVersion));

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic image/mask dataset");
  c_synth->add_option("--out", synth.out, "Output directory")->required();
  c_synth->add_option("--images", synth.cfg.image_count)->capture_default_str();
  c_synth->add_option("--size", synth.cfg.image_size, "Image side in pixels")->capture_default_str();
  c_synth->add_option("--classes", synth.cfg.class_count)->capture_default_str();
  c_synth->add_option("--region-seeds", synth.cfg.region_seed_count, "Region seeds per image")->capture_default_str();
  c_synth->add_option("--sigma", synth.cfg.noise_sigma, "Pixel noise sigma (8-bit units)")->capture_default_str();
  c_synth->add_option("--seed", synth.cfg.rng_seed)->capture_default_str();

  FeaturizeArgs feat;
  auto* c_feat = app.add_subcommand("featurize", "Compute embedding grids (EGF) and patch embeddings (ESF)");
  c_feat->add_option("--images", feat.images, "Directory of PPM images")->required();
  c_feat->add_option("--out", feat.out, "Directory for EGF grids")->required();
  c_feat->add_option("--patches", feat.patches, "Output ESF of patch embeddings");
  c_feat->add_option("--gt", feat.gt, "Directory of ground-truth PGM masks (adds gt_proportions)");
  c_feat->add_option("--patch-size", feat.patch_size)->capture_default_str();
  c_feat->add_option("--block", feat.block)->capture_default_str();
  c_feat->add_flag("--thumbs", feat.thumbs, "Write patch thumbnails next to the ESF");

  SubsampleArgs sub;
  auto* c_sub = app.add_subcommand("subsample", "Uniformly sample m patches");
  c_sub->add_option("--in", sub.in)->required();
  c_sub->add_option("--out", sub.out)->required();
  c_sub->add_option("-m,--count", sub.m)->capture_default_str();
  c_sub->add_option("--seed", sub.seed)->capture_default_str();

  ClusterArgs clu;
  auto* c_clu = app.add_subcommand("cluster", "K-Means++ clustering of an ESF");
  add_cluster_options(c_clu, clu);
  c_clu->add_option("-k", clu.k, "Cluster count")->required();

  ClusterArgs elb;
  auto* c_elb = app.add_subcommand("elbow", "Elbow-method selection of k");
  add_cluster_options(c_elb, elb);
  c_elb->add_option("--min", elb.v_min)->capture_default_str();
  c_elb->add_option("--max", elb.v_max)->capture_default_str();

  RepsArgs reps;
  auto* c_reps = app.add_subcommand("sample-reps", "Representative patches per cluster");
  c_reps->add_option("--patches", reps.patches)->required();
  c_reps->add_option("--clustering", reps.clustering)->required();
  c_reps->add_option("--out", reps.out)->required();
  c_reps->add_option("-t", reps.t)->capture_default_str();
  c_reps->add_option("--strategy", reps.strategy)->check(CLI::IsMember({"central", "equidistant"}))->capture_default_str();
  c_reps->add_option("--seed", reps.seed)->capture_default_str();

  OracleArgs ora;
  auto* c_ora = app.add_subcommand("oracle-label", "Simulated pathologist verdicts from ground-truth proportions");
  c_ora->add_option("--patches", ora.patches)->required();
  c_ora->add_option("--clustering", ora.clustering)->required();
  c_ora->add_option("--reps", ora.reps, "Representatives JSON from sample-reps");
  c_ora->add_option("--labels", ora.labels, "Label map JSON")->required();
  c_ora->add_option("--out", ora.out)->required();
  c_ora->add_option("--threshold", ora.threshold)->capture_default_str();
  c_ora->add_flag("--whole-cluster", ora.whole_cluster, "Rate every member instead of the representatives");

  DictArgs dic;
  auto* c_dic = app.add_subcommand("build-dict", "Build the prototype dictionary");
  c_dic->add_option("--clustering", dic.clustering)->required();
  c_dic->add_option("--verdicts", dic.verdicts)->required();
  c_dic->add_option("--labels", dic.labels)->required();
  c_dic->add_option("--out", dic.out)->required();

  SegmentArgs seg;
  auto* c_seg = app.add_subcommand("segment", "Query the dictionary for coarse masks");
  c_seg->add_option("--grid", seg.grid, "EGF file or directory")->required();
  c_seg->add_option("--dict", seg.dict)->required();
  c_seg->add_option("--out", seg.out, "PGM path, or directory when --grid is a directory")->required();
  c_seg->add_option("--mode", seg.mode)->check(CLI::IsMember({"dq", "cq"}))->capture_default_str();
  c_seg->add_option("--gamma", seg.gamma)->capture_default_str();
  c_seg->add_option("--seed", seg.seed)->capture_default_str();
  c_seg->add_option("--restarts", seg.restarts)->capture_default_str();
  c_seg->add_option("--upsample", seg.upsample, "Nearest-neighbour upsampling factor")->capture_default_str();

  EvaluateArgs ev;
  auto* c_ev = app.add_subcommand("evaluate", "Pixel accuracy and Dice over paired masks");
  c_ev->add_option("--pred", ev.pred)->required();
  c_ev->add_option("--gt", ev.gt)->required();
  c_ev->add_option("--out", ev.out)->required();
  c_ev->add_flag("--include-absent", ev.include_absent, "Average Dice over all classes");

  PipelineArgs pipe;
  auto* c_pipe = app.add_subcommand("pipeline", "Run every stage from one JSON config");
  c_pipe->add_option("--config", pipe.config, "Pipeline config JSON");
  c_pipe->add_option("--out-dir", pipe.out_dir);
  c_pipe->add_option("-k", pipe.k, "Fixed cluster count (skips the elbow search)");
  c_pipe->add_option("--mode", pipe.mode)->check(CLI::IsMember({"dq", "cq"}));
  c_pipe->add_option("--seed-synth", pipe.seed_synth);
  c_pipe->add_option("--seed-subsample", pipe.seed_subsample);
  c_pipe->add_option("--seed-cluster", pipe.seed_cluster);
  c_pipe->add_option("--seed-sampling", pipe.seed_sampling);
  c_pipe->add_option("--seed-segment", pipe.seed_segment);

  ServeArgs srv;
  auto* c_srv = app.add_subcommand("serve", "HTTP labeling service");
  c_srv->add_option("--dir", srv.dir, "Session directory")->capture_default_str();
  c_srv->add_option("--host", srv.host)->capture_default_str();
  c_srv->add_option("--port", srv.port)->capture_default_str();
  c_srv->add_option("--cors-origin", srv.cors_origin)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ErrorKind::config);
  }
  set_max_threads(threads);

  try {
    if (c_synth->parsed()) run_synth(synth);
    else if (c_feat->parsed()) run_featurize(feat);
    else if (c_sub->parsed()) run_subsample(sub);
    else if (c_clu->parsed()) run_cluster(clu);
    else if (c_elb->parsed()) run_elbow(elb);
    else if (c_reps->parsed()) run_sample_reps(reps);
    else if (c_ora->parsed()) run_oracle_label(ora);
    else if (c_dic->parsed()) run_build_dict(dic);
    else if (c_seg->parsed()) run_segment(seg);
    else if (c_ev->parsed()) run_evaluate(ev);
    else if (c_pipe->parsed()) run_pipeline_cmd(pipe);
    else if (c_srv->parsed()) run_serve(srv);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::io);
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::io);
  }
  return 0;
}
