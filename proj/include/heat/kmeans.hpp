#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "heat/binio.hpp"
#include "heat/matrix.hpp"
#include "heat/rng.hpp"

namespace heat {

struct ClusterModel {
  Matd centroids;  // M x dim
  int M = 0;
  int iterations = 0;
  double objective = 0;
  std::uint64_t seed = 0;
};

namespace detail {

inline int nearest_centroid(const Matd& centroids, const Eigen::RowVectorXd& x) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index m = 0; m < centroids.rows(); ++m) {
    double d = (centroids.row(m) - x).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(m);
    }
  }
  return best;
}

}  // namespace detail

// Lloyd iterations with k-means++ seeding; `restarts` independent runs keep
// the best objective. Convergence = unchanged assignment or 100 iterations.
// Empty clusters are repaired by re-seeding to the point farthest from its
// assigned centroid.
inline ClusterModel kmeans_fit(const Matd& x, int M, std::uint64_t seed, int restarts = 10,
                               int max_iter = 100,
                               std::vector<double>* objective_trace = nullptr) {
  const Eigen::Index n = x.rows();
  if (M < 1 || n < M) throw InvalidArgument("kmeans_fit: need n >= M >= 1");

  ClusterModel best;
  best.objective = std::numeric_limits<double>::infinity();

  for (int r = 0; r < restarts; ++r) {
    Rng rng(seed, "kmeans", static_cast<std::uint64_t>(r));

    // k-means++ seeding
    Matd centroids(M, x.cols());
    std::vector<double> d2(static_cast<std::size_t>(n),
                           std::numeric_limits<double>::infinity());
    Eigen::Index first = static_cast<Eigen::Index>(rng.uniform_int(static_cast<std::uint64_t>(n)));
    centroids.row(0) = x.row(first);
    for (int m = 1; m < M; ++m) {
      double total = 0;
      for (Eigen::Index i = 0; i < n; ++i) {
        double d = (x.row(i) - centroids.row(m - 1)).squaredNorm();
        d2[static_cast<std::size_t>(i)] = std::min(d2[static_cast<std::size_t>(i)], d);
        total += d2[static_cast<std::size_t>(i)];
      }
      Eigen::Index pick = 0;
      if (total > 0) {
        double u = rng.uniform() * total, acc = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
          acc += d2[static_cast<std::size_t>(i)];
          if (acc >= u) {
            pick = i;
            break;
          }
        }
      } else {
        pick = static_cast<Eigen::Index>(rng.uniform_int(static_cast<std::uint64_t>(n)));
      }
      centroids.row(m) = x.row(pick);
    }

    std::vector<int> assign(static_cast<std::size_t>(n), -1);
    int it = 0;
    double obj = 0;
    for (it = 0; it < max_iter; ++it) {
      bool changed = false;
      obj = 0;
      for (Eigen::Index i = 0; i < n; ++i) {
        int a = detail::nearest_centroid(centroids, x.row(i));
        obj += (x.row(i) - centroids.row(a)).squaredNorm();
        if (a != assign[static_cast<std::size_t>(i)]) {
          assign[static_cast<std::size_t>(i)] = a;
          changed = true;
        }
      }
      if (objective_trace && r == 0) objective_trace->push_back(obj);
      if (!changed) break;

      // update means in 64-bit, fixed ascending point order
      Matd sums = Matd::Zero(M, x.cols());
      std::vector<std::int64_t> counts(static_cast<std::size_t>(M), 0);
      for (Eigen::Index i = 0; i < n; ++i) {
        sums.row(assign[static_cast<std::size_t>(i)]) += x.row(i);
        counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])]++;
      }
      for (int m = 0; m < M; ++m) {
        if (counts[static_cast<std::size_t>(m)] > 0) {
          centroids.row(m) = sums.row(m) / static_cast<double>(counts[static_cast<std::size_t>(m)]);
        } else {
          // farthest point from its assigned centroid becomes the new seed
          double worst = -1;
          Eigen::Index worst_i = 0;
          for (Eigen::Index i = 0; i < n; ++i) {
            double d = (x.row(i) - centroids.row(assign[static_cast<std::size_t>(i)])).squaredNorm();
            if (d > worst) {
              worst = d;
              worst_i = i;
            }
          }
          centroids.row(m) = x.row(worst_i);
          assign[static_cast<std::size_t>(worst_i)] = m;
        }
      }
    }

    if (obj < best.objective) {
      best.centroids = centroids;
      best.M = M;
      best.iterations = it;
      best.objective = obj;
      best.seed = seed;
    }
  }
  return best;
}

// Nearest centroid by squared Euclidean distance; ties break to the lowest
// index.
inline int assign_cluster(const Matd& flat_point, const ClusterModel& model) {
  if (model.M < 1) throw InvalidArgument("assign_cluster: unfitted model");
  if (flat_point.rows() != 1 || flat_point.cols() != model.centroids.cols()) {
    throw InvalidArgument("assign_cluster: dimension mismatch");
  }
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index m = 0; m < model.centroids.rows(); ++m) {
    double d = (model.centroids.row(m) - flat_point.row(0)).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(m);
    }
  }
  return best;
}

}  // namespace heat
