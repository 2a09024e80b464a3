// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>

#include "protoseg/pipeline.hpp"
#include "support/oracles.hpp"

using namespace protoseg;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

EmbeddingGrid random_grid(SplitMix64& rng, std::uint32_t h, std::uint32_t w, std::size_t dim) {
  EmbeddingGrid g(h, w, static_cast<std::uint32_t>(dim));
  for (auto& x : g.data) x = static_cast<float>(rng.normal());
  return g;
}

PrototypeDictionary random_dict(SplitMix64& rng, std::size_t l, std::size_t dim, std::size_t classes) {
  std::vector<std::vector<double>> cs;
  std::vector<ClassId> ids;
  for (std::size_t p = 0; p < l; ++p) {
    cs.push_back(oracle::random_gaussian(rng, dim));
    ids.push_back(static_cast<ClassId>(rng.below(classes)));
  }
  return oracle::make_dictionary(cs, ids, classes);
}

PipelineConfig synthetic_config(const fs::path& out) {
  PipelineConfig c;
  c.output_dir = out;
  SyntheticDatasetConfig s;
  s.image_count = 20;
  s.image_size = 256;
  s.class_count = 4;
  s.region_seed_count = 3;
  c.synthetic = s;
  c.elbow_min = 2;
  c.elbow_max = 12;
  c.mode = QueryMode::cluster_then_query;
  return c;
}

Outcome clustering_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  SplitMix64 rng(101);
  std::size_t bad = 0;
  double worst = 0.0;
  const std::size_t trials = 200;
  for (std::size_t it = 0; it < trials; ++it) {
    const std::size_t n = 3 + rng.below(10);
    const std::size_t dim = 1 + rng.below(4);
    const std::size_t k = 1 + rng.below(3);
    oracle::Points pts;
    for (std::size_t i = 0; i < n; ++i) pts.push_back(oracle::unit(oracle::random_gaussian(rng, dim)));
    const auto flat = oracle::flatten(pts);
    const auto r = cluster(MatrixView<double>(flat, n, dim), k, ClusterOptions{64, it, {}});
    const double opt = oracle::brute_force_inertia(pts, k);
    const double rel = opt > 0 ? (r.inertia - opt) / opt : r.inertia;
    worst = std::max(worst, rel);
    if (rel > 1e-6) ++bad;
  }
  const double s = seconds_since(t0);
  return {bad == 0 && s < 60.0, fmt("%zu instances, %zu above optimum, worst relative gap %.2e, %.2f s", trials, bad, worst, s)};
}

Outcome dq_oracle() {
  SplitMix64 rng(202);
  std::size_t mismatched = 0;
  const std::size_t trials = 100;
  for (std::size_t it = 0; it < trials; ++it) {
    const std::size_t dim = 2 + rng.below(63);
    const auto dict = random_dict(rng, 1 + rng.below(40), dim, 1 + rng.below(8));
    const auto grid = random_grid(rng, static_cast<std::uint32_t>(1 + rng.below(64)), static_cast<std::uint32_t>(1 + rng.below(64)), dim);
    if (direct_query(grid, dict).labels != oracle::brute_force_dq(grid, dict)) ++mismatched;
  }
  return {mismatched == 0, fmt("%zu cases, %zu mismatched", trials, mismatched)};
}

Outcome cq_degeneracy() {
  SplitMix64 rng(303);
  std::size_t cases = 0, mismatched = 0;
  while (cases < 50) {
    const std::size_t dim = 3 + rng.below(14);
    const auto dict = random_dict(rng, 2 + rng.below(10), dim, 6);
    const auto grid = random_grid(rng, static_cast<std::uint32_t>(1 + rng.below(6)), static_cast<std::uint32_t>(1 + rng.below(6)), dim);
    CqConfig cfg;
    cfg.seed = cases;
    const auto dq = direct_query(grid, dict);
    if (cfg.gamma * static_cast<double>(distinct_tissue_count(dq)) < static_cast<double>(distinct_cell_count(grid))) continue;
    ++cases;
    if (cluster_then_query(grid, dict, cfg).labels != dq.labels) ++mismatched;
  }
  return {mismatched == 0, fmt("%zu cases with gamma*d >= distinct cells, %zu mismatched", cases, mismatched)};
}

Outcome end_to_end(const fs::path& dir) {
  const auto t0 = std::chrono::steady_clock::now();
  auto cfg = synthetic_config(dir);
  const double sep = cfg.synthetic->min_color_separation() / cfg.synthetic->noise_sigma;
  const auto out = run_pipeline(cfg);
  const double s = seconds_since(t0);
  const auto& r = out.report;
  return {r.macro_dice >= 0.90 && r.macro_pixel_accuracy >= 0.90 && s < 300.0 && sep >= 6.0,
          fmt("k=%zu, %zu prototypes, macro Dice %.4f, pixel accuracy %.4f, separation %.1f sigma, %.1f s", out.selected_k,
              out.dictionary_size, r.macro_dice, r.macro_pixel_accuracy, sep, s)};
}

Outcome cq_outliers() {
  std::size_t wins = 0, dq_total = 0, cq_total = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto c = oracle::make_perturbed_grid(seed);
    const auto dq = oracle::count_errors(direct_query(c.grid, c.dict).labels, c.truth);
    CqConfig cfg;
    cfg.seed = seed;
    const auto cq = oracle::count_errors(cluster_then_query(c.grid, c.dict, cfg).labels, c.truth);
    wins += cq <= dq ? 1 : 0;
    dq_total += dq;
    cq_total += cq;
  }
  return {wins >= 45, fmt("CQ <= DQ errors in %zu/50 trials (total errors DQ %zu, CQ %zu)", wins, dq_total, cq_total)};
}

Outcome elbow_recovery() {
  bool pass = true;
  std::ostringstream detail;
  for (std::size_t c : {3u, 5u, 8u}) {
    std::size_t hits = 0;
    double min_ratio = 1e300;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto blobs = oracle::make_blobs(c, 30, 10, 0.05, 1000 * c + seed);
      min_ratio = std::min(min_ratio, blobs.scatter_ratio);
      const auto flat = oracle::flatten(blobs.points);
      const auto t = elbow_select(MatrixView<double>(flat, blobs.points.size(), 10), 2, 12, ClusterOptions{8, seed, {}});
      hits += t.selected_k == c ? 1 : 0;
    }
    pass = pass && hits >= 9 && min_ratio >= 20.0;
    detail << "c=" << c << ": " << hits << "/10 (min scatter ratio " << static_cast<int>(min_ratio) << ") ";
  }
  return {pass, detail.str()};
}

Outcome k_sweep(const fs::path& dir) {
  double lo = 1.0, hi = 0.0;
  for (std::size_t k = 12; k <= 30; ++k) {
    auto cfg = synthetic_config(dir / ("k" + std::to_string(k)));
    cfg.k = k;
    const double d = run_pipeline(cfg).report.macro_dice;
    lo = std::min(lo, d);
    hi = std::max(hi, d);
    fs::remove_all(cfg.output_dir);
  }
  return {hi - lo < 0.05, fmt("macro Dice over k=12..30 in [%.4f, %.4f], range %.4f", lo, hi, hi - lo)};
}

Outcome performance() {
  SyntheticDatasetConfig s;
  s.image_count = 20;
  s.image_size = 1024;
  s.rng_seed = 7;
  const auto ds = generate_synthetic_dataset(s);
  std::vector<float> data;
  for (const auto& img : ds.images) {
    const auto g = block_featurize(img);
    data.insert(data.end(), g.data.begin(), g.data.end());
  }
  data.resize(20000 * kFeatureDim);
  const MatrixView<float> pts(data, 20000, kFeatureDim);
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = cluster(pts, 30, ClusterOptions{8, 1, {}});
  const double secs = seconds_since(t0);
  return {secs < 11.0, fmt("20000 x 64, k=30, 8 restarts: %.2f s on %zu thread(s), inertia %.4f", secs, max_threads(), r.inertia)};
}

Outcome determinism(const fs::path& dir) {
  auto a_cfg = synthetic_config(dir / "a");
  auto b_cfg = synthetic_config(dir / "b");
  const auto a = run_pipeline(a_cfg);
  const auto b = run_pipeline(b_cfg);
  std::size_t files = 0, differing = 0;
  for (std::size_t i = 0; i < a.stages.size(); ++i) {
    for (const auto& [path, digest] : a.stages[i].digests) {
      ++files;
      const auto it = b.stages[i].digests.find(path);
      if (it == b.stages[i].digests.end() || it->second != digest) ++differing;
    }
  }

  // Round-trips of every artifact type written by run a.
  std::size_t roundtrip_failures = 0;
  const auto rewrite_equal = [&](const fs::path& src, auto read, auto write) {
    const auto tmp = dir / "rt" / src.filename();
    write(read(src), tmp);
    if (read_file_bytes(tmp) != read_file_bytes(src)) ++roundtrip_failures;
  };
  rewrite_equal(dir / "a" / "grids" / "img_000.egf", [](auto p) { return read_egf(p); }, [](const auto& v, auto p) { write_egf(v, p); });
  rewrite_equal(dir / "a" / "patches" / "all.esf", [](auto p) { return read_esf(p); }, [](const auto& v, auto p) { write_esf(v, p); });
  if (read_file_bytes(esf_sidecar_path(dir / "rt" / "all.esf")) != read_file_bytes(esf_sidecar_path(dir / "a" / "patches" / "all.esf"))) {
    ++roundtrip_failures;
  }
  rewrite_equal(dir / "a" / "pred" / "img_000.pgm", [](auto p) { return read_mask(p); }, [](const auto& v, auto p) { write_mask(v, p); });
  rewrite_equal(dir / "a" / "dictionary.json", [](auto p) { return load_dictionary(p); }, [](const auto& v, auto p) { save_dictionary(v, p); });
  rewrite_equal(
      dir / "a" / "clustering.json", [](auto p) { return clustering_from_json(nlohmann::json::parse(read_file_text(p))); },
      [](const auto& v, auto p) { write_file_bytes(p, to_json_value(v).dump(1) + "\n"); });
  rewrite_equal(dir / "a" / "images" / "img_000.ppm", [](auto p) { return read_ppm(p); }, [](const auto& v, auto p) { write_ppm(v, p); });
  return {files > 0 && differing == 0 && roundtrip_failures == 0,
          fmt("%zu artifacts compared, %zu differ; %zu round-trip failures", files, differing, roundtrip_failures)};
}

}  // namespace

int main() {
  oracle::TempDir tmp;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"clustering-oracle", clustering_oracle},
      {"dq-oracle", dq_oracle},
      {"cq-degeneracy", cq_degeneracy},
      {"end-to-end-synthetic", [&] { return end_to_end(tmp / "e2e"); }},
      {"cq-outlier-suppression", cq_outliers},
      {"elbow-recovery", elbow_recovery},
      {"k-robustness", [&] { return k_sweep(tmp / "sweep"); }},
      {"performance", performance},
      {"determinism-and-formats", [&] { return determinism(tmp / "det"); }},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
    failed += o.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
