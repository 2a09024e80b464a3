#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "embedding.hpp"
#include "error.hpp"
#include "parallel.hpp"
#include "rng.hpp"

namespace protoseg {

struct ClusteringResult {
  std::size_t k = 0;
  std::size_t dim = 0;
  std::vector<double> centroids;            // k x dim
  std::vector<std::uint32_t> assignments;   // one per point
  double inertia = 0.0;                     // sum of squared distances to assigned centroids
  std::vector<std::size_t> cluster_sizes;
  std::size_t iterations = 0;
  std::uint64_t seed = 0;
  bool converged = false;                   // assignments reached a Lloyd fixed point
  bool duplicate_centroids = false;         // seeding had to repeat a location
  std::vector<double> inertia_history;      // inertia after each assignment step

  std::span<const double> centroid(std::size_t j) const {
    return std::span<const double>(centroids).subspan(j * dim, dim);
  }
  std::size_t point_count() const { return assignments.size(); }
};

struct LloydOptions {
  std::size_t max_iter = 300;
  double tol = 1e-6;  // relative inertia improvement
};

struct ClusterOptions {
  std::size_t restarts = 8;
  std::uint64_t seed = 0;
  LloydOptions lloyd{};
};

struct Seeding {
  std::vector<double> centroids;     // k x dim
  std::vector<std::size_t> indices;  // chosen point rows
  bool duplicates = false;
};

/// K-Means++ (D^2) seeding: the first centre is a uniform point, each further
/// centre is drawn with probability proportional to its squared distance to
/// the nearest centre chosen so far. If every remaining weight is zero (all
/// points coincide with chosen centres) a uniform point is taken and the
/// result is flagged as holding duplicates.
template <class T>
Seeding kmeanspp_seed(const MatrixView<T>& points, std::size_t k, std::uint64_t seed) {
  const std::size_t n = points.rows;
  if (n == 0) throw NumericError("cannot seed an empty point set");
  if (k < 1 || k > n) throw ConfigError("k=" + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  SplitMix64 rng(seed);
  Seeding s;
  s.indices.reserve(k);
  s.centroids.reserve(k * points.cols);
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());

  auto take = [&](std::size_t idx) {
    s.indices.push_back(idx);
    const auto row = points.row(idx);
    for (T v : row) s.centroids.push_back(static_cast<double>(v));
    for (std::size_t i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], squared_euclidean(points.row(i), row));
  };

  take(rng.below(n));
  while (s.indices.size() < k) {
    double total = 0.0;
    for (double d : nearest) total += d;
    if (!(total > 0.0)) {
      s.duplicates = true;
      take(rng.below(n));
      continue;
    }
    const double target = rng.uniform() * total;
    double cumulative = 0.0;
    std::size_t pick = n;
    std::size_t last_positive = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (nearest[i] <= 0.0) continue;
      last_positive = i;
      cumulative += nearest[i];
      if (cumulative > target) {
        pick = i;
        break;
      }
    }
    take(pick < n ? pick : last_positive);
  }
  return s;
}

namespace detail {

// Nearest centroid by |p|^2 + |c|^2 - 2 p.c, clamped at 0; ties go to the
// lower centroid index. Centroids are transposed (dim x k) so the inner loop
// runs across centroids; each p.c is still summed strictly left to right
// over coordinates.
template <class T>
void assign_points(const MatrixView<T>& points, std::span<const double> point_norms,
                   std::span<const double> centroids, std::span<const double> centroid_norms, std::size_t k,
                   std::vector<std::uint32_t>& labels, std::vector<double>& dist) {
  const std::size_t dim = points.cols;
  // Register tile: kRows points x kCols centroids.
  constexpr std::size_t kRows = 2;
  constexpr std::size_t kCols = 8;
  const std::size_t padded_k = (k + kCols - 1) / kCols * kCols;
  std::vector<double> ct(dim * padded_k, 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t d = 0; d < dim; ++d) ct[d * padded_k + j] = centroids[j * dim + d];
  }

  constexpr std::size_t kChunk = 256;
  const std::size_t chunks = (points.rows + kChunk - 1) / kChunk;
  parallel_for(chunks, [&](std::size_t chunk) {
    std::vector<double> dots(kRows * padded_k);
    const std::size_t begin = chunk * kChunk;
    const std::size_t end = std::min(points.rows, begin + kChunk);
    for (std::size_t i0 = begin; i0 < end; i0 += kRows) {
      const std::size_t rows = std::min(kRows, end - i0);
      const T* p0 = points.data.data() + i0 * dim;
      const T* p1 = rows > 1 ? p0 + dim : p0;
      for (std::size_t jb = 0; jb < padded_k; jb += kCols) {
        double a0[kCols] = {};
        double a1[kCols] = {};
        for (std::size_t d = 0; d < dim; ++d) {
          const double x0 = static_cast<double>(p0[d]);
          const double x1 = static_cast<double>(p1[d]);
          const double* c = ct.data() + d * padded_k + jb;
          for (std::size_t j = 0; j < kCols; ++j) {
            a0[j] += x0 * c[j];
            a1[j] += x1 * c[j];
          }
        }
        std::copy_n(a0, kCols, dots.data() + jb);
        std::copy_n(a1, kCols, dots.data() + padded_k + jb);
      }
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t i = i0 + r;
        const double* a = dots.data() + r * padded_k;
        double best = std::numeric_limits<double>::infinity();
        std::uint32_t arg = 0;
        for (std::size_t j = 0; j < k; ++j) {
          const double dd = std::max(0.0, point_norms[i] + centroid_norms[j] - 2.0 * a[j]);
          if (dd < best) {
            best = dd;
            arg = static_cast<std::uint32_t>(j);
          }
        }
        labels[i] = arg;
        dist[i] = best;
      }
    }
  });
}

template <class T>
std::vector<std::size_t> update_means(const MatrixView<T>& points, const std::vector<std::uint32_t>& labels,
                                      std::size_t k, std::vector<double>& centroids) {
  const std::size_t dim = points.cols;
  std::vector<double> sums(k * dim, 0.0);
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < points.rows; ++i) {
    const auto p = points.row(i);
    double* s = sums.data() + labels[i] * dim;
    for (std::size_t d = 0; d < dim; ++d) s[d] += static_cast<double>(p[d]);
    ++counts[labels[i]];
  }
  for (std::size_t j = 0; j < k; ++j) {
    if (counts[j] == 0) continue;
    for (std::size_t d = 0; d < dim; ++d) centroids[j * dim + d] = sums[j * dim + d] / static_cast<double>(counts[j]);
  }
  return counts;
}

}  // namespace detail

/// Lloyd refinement from the given initial centroids (k x dim, row-major).
///
/// Each round assigns every point to its nearest centroid and then moves
/// centroids to the mean of their members. An empty cluster is reseeded at
/// the point farthest from its current centroid. Iteration stops at a fixed
/// point, when the relative inertia improvement drops below `tol`, or after
/// `max_iter` rounds. The returned centroids are always the means of the
/// returned assignments; `converged` is set when those assignments are also
/// nearest-centroid assignments.
template <class T>
ClusteringResult lloyd_iterate(const MatrixView<T>& points, std::vector<double> centroids, const LloydOptions& opt = {}) {
  const std::size_t n = points.rows;
  const std::size_t dim = points.cols;
  if (n == 0) throw NumericError("cannot cluster an empty point set");
  if (dim == 0 || centroids.empty() || centroids.size() % dim != 0) {
    throw DimensionMismatchError(centroids.size(), dim);
  }
  const std::size_t k = centroids.size() / dim;
  if (opt.max_iter < 1) throw ConfigError("max_iter must be >= 1");

  std::vector<double> point_norms(n);
  for (std::size_t i = 0; i < n; ++i) point_norms[i] = squared_norm(points.row(i));

  ClusteringResult res;
  res.k = k;
  res.dim = dim;
  std::vector<std::uint32_t> labels(n, 0), previous;
  std::vector<double> dist(n, 0.0);
  std::vector<double> centroid_norms(k);
  auto refresh_norms = [&] {
    for (std::size_t j = 0; j < k; ++j) centroid_norms[j] = squared_norm(std::span<const double>(centroids).subspan(j * dim, dim));
  };
  auto total = [&] {
    double s = 0.0;
    for (double d : dist) s += d;
    return s;
  };

  for (std::size_t iter = 0;; ++iter) {
    refresh_norms();
    detail::assign_points(points, point_norms, centroids, centroid_norms, k, labels, dist);
    const double inertia = total();
    res.inertia_history.push_back(inertia);
    res.iterations = iter + 1;

    if (iter > 0 && labels == previous) {
      res.converged = true;  // centroids already are the means of `labels`
      break;
    }
    bool stop = iter + 1 >= opt.max_iter;
    if (iter > 0) {
      const double prev = res.inertia_history[iter - 1];
      const double improvement = prev > 0.0 ? (prev - inertia) / prev : 0.0;
      if (improvement < opt.tol) stop = true;
    }

    auto counts = detail::update_means(points, labels, k, centroids);
    if (stop) {
      // Report assignments whose means are the centroids; check whether they
      // are also a fixed point.
      std::vector<std::uint32_t> check(n);
      std::vector<double> check_dist(n);
      refresh_norms();
      detail::assign_points(points, point_norms, centroids, centroid_norms, k, check, check_dist);
      res.converged = check == labels;
      break;
    }
    std::vector<bool> used(n, false);
    for (std::size_t j = 0; j < k; ++j) {
      if (counts[j] != 0) continue;
      std::size_t far = n;
      for (std::size_t i = 0; i < n; ++i) {
        if (used[i]) continue;
        if (far == n || dist[i] > dist[far]) far = i;
      }
      if (far == n) break;
      used[far] = true;
      const auto row = points.row(far);
      for (std::size_t d = 0; d < dim; ++d) centroids[j * dim + d] = static_cast<double>(row[d]);
    }
    previous = labels;
  }

  res.centroids = std::move(centroids);
  res.assignments = std::move(labels);
  res.cluster_sizes.assign(k, 0);
  double inertia = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ++res.cluster_sizes[res.assignments[i]];
    inertia += squared_euclidean(points.row(i), res.centroid(res.assignments[i]));
  }
  res.inertia = inertia;
  return res;
}

/// Best of `restarts` independent K-Means++ + Lloyd runs. Restart r uses
/// derive_seed(opt.seed, r); the winner minimises (inertia, sub-seed).
template <class T>
ClusteringResult cluster(const MatrixView<T>& points, std::size_t k, const ClusterOptions& opt = {}) {
  if (points.rows == 0) throw NumericError("cannot cluster an empty point set");
  if (k < 1 || k > points.rows) {
    throw ConfigError("k=" + std::to_string(k) + " outside [1, " + std::to_string(points.rows) + "]");
  }
  if (opt.restarts < 1) throw ConfigError("restarts must be >= 1");
  std::vector<ClusteringResult> runs(opt.restarts);
  parallel_for(opt.restarts, [&](std::size_t r) {
    const std::uint64_t sub = derive_seed(opt.seed, r);
    auto seeding = kmeanspp_seed(points, k, sub);
    runs[r] = lloyd_iterate(points, std::move(seeding.centroids), opt.lloyd);
    runs[r].seed = sub;
    runs[r].duplicate_centroids = seeding.duplicates;
  });
  std::size_t best = 0;
  for (std::size_t r = 1; r < runs.size(); ++r) {
    if (runs[r].inertia < runs[best].inertia ||
        (runs[r].inertia == runs[best].inertia && runs[r].seed < runs[best].seed)) {
      best = r;
    }
  }
  return std::move(runs[best]);
}

/// cluster() on rows sorted lexicographically by value, with results mapped
/// back to the caller's order. Input order then has no effect on the output.
template <class T>
ClusteringResult cluster_canonical(const MatrixView<T>& points, std::size_t k, const ClusterOptions& opt = {}) {
  std::vector<std::size_t> order(points.rows);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto ra = points.row(a);
    const auto rb = points.row(b);
    return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
  });
  std::vector<T> sorted;
  sorted.reserve(points.data.size());
  for (std::size_t i : order) sorted.insert(sorted.end(), points.row(i).begin(), points.row(i).end());
  auto res = cluster(MatrixView<T>(sorted, points.rows, points.cols), k, opt);
  std::vector<std::uint32_t> labels(points.rows);
  for (std::size_t s = 0; s < order.size(); ++s) labels[order[s]] = res.assignments[s];
  res.assignments = std::move(labels);
  return res;
}

struct ElbowTrace {
  std::vector<std::size_t> candidates;           // v values, ascending
  std::vector<double> inertia;                   // D_v
  std::vector<std::optional<double>> reduction;  // R_v = D_{v-1} - D_v, absent for the first v
  std::vector<std::optional<double>> curvature;  // D_{v-1} - 2 D_v + D_{v+1}, interior v only
  std::size_t selected_k = 0;
};

/// Runs cluster() for each v in [v_min, v_max] with the same options and picks
/// the interior v of maximal discrete curvature (ties to the smaller v).
template <class T>
ElbowTrace elbow_select(const MatrixView<T>& points, std::size_t v_min, std::size_t v_max, const ClusterOptions& opt = {}) {
  if (v_min < 2) throw ConfigError("elbow range must start at >= 2");
  if (v_max > points.rows) throw ConfigError("elbow range exceeds the number of points");
  if (v_max < v_min + 2) throw ConfigError("elbow range needs at least 3 candidates");
  ElbowTrace t;
  for (std::size_t v = v_min; v <= v_max; ++v) {
    t.candidates.push_back(v);
    t.inertia.push_back(cluster(points, v, opt).inertia);
  }
  const std::size_t m = t.candidates.size();
  t.reduction.assign(m, std::nullopt);
  t.curvature.assign(m, std::nullopt);
  for (std::size_t i = 1; i < m; ++i) t.reduction[i] = t.inertia[i - 1] - t.inertia[i];
  std::size_t best = 1;
  for (std::size_t i = 1; i + 1 < m; ++i) {
    t.curvature[i] = t.inertia[i - 1] - 2.0 * t.inertia[i] + t.inertia[i + 1];
    if (*t.curvature[i] > *t.curvature[best]) best = i;
  }
  t.selected_k = t.candidates[best];
  return t;
}

inline nlohmann::json to_json_value(const ClusteringResult& r) {
  nlohmann::json centroids = nlohmann::json::array();
  for (std::size_t j = 0; j < r.k; ++j) {
    const auto c = r.centroid(j);
    centroids.push_back(std::vector<double>(c.begin(), c.end()));
  }
  return {{"k", r.k},
          {"dim", r.dim},
          {"seed", r.seed},
          {"inertia", r.inertia},
          {"iterations", r.iterations},
          {"converged", r.converged},
          {"duplicate_centroids", r.duplicate_centroids},
          {"cluster_sizes", r.cluster_sizes},
          {"inertia_history", r.inertia_history},
          {"centroids", std::move(centroids)},
          {"assignments", r.assignments}};
}

inline ClusteringResult clustering_from_json(const nlohmann::json& j) {
  try {
    ClusteringResult r;
    r.k = j.at("k").get<std::size_t>();
    r.dim = j.at("dim").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.inertia = j.at("inertia").get<double>();
    r.iterations = j.at("iterations").get<std::size_t>();
    r.converged = j.at("converged").get<bool>();
    r.duplicate_centroids = j.value("duplicate_centroids", false);
    r.cluster_sizes = j.at("cluster_sizes").get<std::vector<std::size_t>>();
    r.inertia_history = j.value("inertia_history", std::vector<double>{});
    r.assignments = j.at("assignments").get<std::vector<std::uint32_t>>();
    const auto& cs = j.at("centroids");
    if (cs.size() != r.k) throw IoError("clustering: centroid count does not match k");
    for (const auto& c : cs) {
      auto row = c.get<std::vector<double>>();
      if (row.size() != r.dim) throw DimensionMismatchError(row.size(), r.dim);
      r.centroids.insert(r.centroids.end(), row.begin(), row.end());
    }
    if (r.cluster_sizes.size() != r.k) throw IoError("clustering: cluster_sizes length does not match k");
    for (auto a : r.assignments) {
      if (a >= r.k) throw IoError("clustering: assignment out of range");
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed clustering JSON: ") + e.what());
  }
}

inline nlohmann::json to_json_value(const ElbowTrace& t) {
  auto opt = [](const std::vector<std::optional<double>>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& x : v) a.push_back(x ? nlohmann::json(*x) : nlohmann::json(nullptr));
    return a;
  };
  return {{"candidates", t.candidates},
          {"inertia", t.inertia},
          {"reduction", opt(t.reduction)},
          {"curvature", opt(t.curvature)},
          {"selected_k", t.selected_k}};
}

}  // namespace protoseg
