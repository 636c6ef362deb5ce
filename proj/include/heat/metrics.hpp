#pragma once

#include <cmath>
#include <map>
#include <vector>

#include "heat/geometry.hpp"
#include "heat/kmeans.hpp"
#include "heat/matrix.hpp"
#include "heat/scenario.hpp"

namespace heat {

// ---------------------------------------------------------------------------
// Open-loop metrics
// ---------------------------------------------------------------------------

struct OpenLoopReport {
  std::map<int, double> l2_at;         // horizon seconds -> meters
  double l2_avg = 0;
  std::map<int, double> collision_at;  // horizon seconds -> percent
  double collision_avg = 0;
  std::int64_t n_samples = 0;
};

inline const std::vector<int> kHorizonsSec = {1, 2, 3};

// Euclidean (x, y) displacement at each horizon; heading excluded. Horizon h
// seconds corresponds to the future step 2h at the 2 Hz waypoint rate.
inline std::map<int, double> l2_metric(const Matd& pred, const Matd& gt,
                                       const std::vector<int>& horizons = kHorizonsSec) {
  if (pred.rows() != gt.rows() || pred.cols() != 3 || gt.cols() != 3) {
    throw InvalidArgument("l2_metric: shape mismatch");
  }
  std::map<int, double> out;
  for (int h : horizons) {
    Eigen::Index step = 2 * h;  // steps are 1-based offsets from t
    if (step < 1 || step > pred.rows()) throw InvalidArgument("l2_metric: horizon beyond T");
    Eigen::Index i = step - 1;
    out[h] = std::hypot(pred(i, 0) - gt(i, 0), pred(i, 1) - gt(i, 1));
  }
  return out;
}

inline OrientedBox ego_box_at(const Matd& pred, Eigen::Index i, const EgoState& ref) {
  Vec2 world = local_to_world({pred(i, 0), pred(i, 1)}, {ref.x, ref.y}, ref.heading);
  return {world, wrap_angle(ref.heading + pred(i, 2)), kEgoLength, kEgoWidth};
}

// Per-horizon collision flag: any step up to the horizon where the planned
// ego rectangle overlaps an agent rectangle at the matched timestep.
inline std::map<int, bool> collision_metric(const Matd& pred, const Episode& ep, int frame_index,
                                            const std::vector<int>& horizons = kHorizonsSec) {
  const EgoState& ref = ep.frames[static_cast<std::size_t>(frame_index)].ego;
  int n_frames = static_cast<int>(ep.frames.size());
  std::map<int, bool> out;
  for (int h : horizons) out[h] = false;
  int max_step = 0;
  for (int h : horizons) max_step = std::max(max_step, 2 * h);
  for (int step = 1; step <= max_step && step <= static_cast<int>(pred.rows()); ++step) {
    int t = frame_index + step;
    if (t >= n_frames) break;
    OrientedBox ego = ego_box_at(pred, step - 1, ref);
    bool hit = false;
    for (const AgentTrack& tr : ep.scene.agents) {
      const AgentState& a = tr.states[static_cast<std::size_t>(t)];
      if (boxes_overlap(ego, {{a.x, a.y}, a.heading, a.length, a.width})) {
        hit = true;
        break;
      }
    }
    if (hit) {
      for (int h : horizons) {
        if (2 * h >= step) out[h] = true;
      }
    }
  }
  return out;
}

// Order-independent merge accumulator for OpenLoopReport.
struct OpenLoopAccum {
  std::map<int, double> l2_sum;
  std::map<int, std::int64_t> coll_count;
  std::int64_t n = 0;

  void add(const std::map<int, double>& l2, const std::map<int, bool>& coll) {
    for (const auto& [h, v] : l2) l2_sum[h] += v;
    for (const auto& [h, c] : coll) coll_count[h] += c ? 1 : 0;
    ++n;
  }

  OpenLoopReport report() const {
    OpenLoopReport r;
    r.n_samples = n;
    if (n == 0) return r;
    double l2a = 0, ca = 0;
    for (const auto& [h, v] : l2_sum) {
      r.l2_at[h] = v / static_cast<double>(n);
      l2a += r.l2_at[h];
    }
    for (const auto& [h, c] : coll_count) {
      r.collision_at[h] = 100.0 * static_cast<double>(c) / static_cast<double>(n);
      ca += r.collision_at[h];
    }
    if (!r.l2_at.empty()) r.l2_avg = l2a / static_cast<double>(r.l2_at.size());
    if (!r.collision_at.empty()) r.collision_avg = ca / static_cast<double>(r.collision_at.size());
    return r;
  }
};

// ---------------------------------------------------------------------------
// Clustering agreement: adjusted mutual information (arithmetic mean
// normalization) and silhouette.
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<int> relabel(const std::vector<int>& labels, int* k_out) {
  std::map<int, int> remap;
  std::vector<int> out;
  out.reserve(labels.size());
  for (int l : labels) {
    auto it = remap.insert({l, static_cast<int>(remap.size())}).first;
    out.push_back(it->second);
  }
  *k_out = static_cast<int>(remap.size());
  return out;
}

inline double entropy_from_counts(const std::vector<std::int64_t>& c, double n) {
  double h = 0;
  for (std::int64_t v : c) {
    if (v > 0) {
      double p = static_cast<double>(v) / n;
      h -= p * std::log(p);
    }
  }
  return h;
}

}  // namespace detail

// AMI = (MI - E[MI]) / (mean(H(U), H(V)) - E[MI]) with the exact
// hypergeometric expectation (computed via lgamma).
inline double adjusted_mutual_info(const std::vector<int>& u_in, const std::vector<int>& v_in) {
  if (u_in.size() != v_in.size() || u_in.empty()) {
    throw InvalidArgument("adjusted_mutual_info: label size mismatch");
  }
  int R = 0, C = 0;
  std::vector<int> u = detail::relabel(u_in, &R);
  std::vector<int> v = detail::relabel(v_in, &C);
  const double n = static_cast<double>(u.size());

  std::vector<std::int64_t> a(static_cast<std::size_t>(R), 0), b(static_cast<std::size_t>(C), 0);
  std::vector<std::vector<std::int64_t>> nij(static_cast<std::size_t>(R),
                                             std::vector<std::int64_t>(static_cast<std::size_t>(C), 0));
  for (std::size_t i = 0; i < u.size(); ++i) {
    a[static_cast<std::size_t>(u[i])]++;
    b[static_cast<std::size_t>(v[i])]++;
    nij[static_cast<std::size_t>(u[i])][static_cast<std::size_t>(v[i])]++;
  }

  double mi = 0;
  for (int i = 0; i < R; ++i) {
    for (int j = 0; j < C; ++j) {
      std::int64_t c = nij[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      if (c > 0) {
        double pij = static_cast<double>(c) / n;
        mi += pij * std::log(n * static_cast<double>(c) /
                             (static_cast<double>(a[static_cast<std::size_t>(i)]) *
                              static_cast<double>(b[static_cast<std::size_t>(j)])));
      }
    }
  }

  // expected MI under the permutation (hypergeometric) model
  double emi = 0;
  std::int64_t N = static_cast<std::int64_t>(u.size());
  for (int i = 0; i < R; ++i) {
    std::int64_t ai = a[static_cast<std::size_t>(i)];
    for (int j = 0; j < C; ++j) {
      std::int64_t bj = b[static_cast<std::size_t>(j)];
      std::int64_t lo = std::max<std::int64_t>(1, ai + bj - N);
      std::int64_t hi = std::min(ai, bj);
      for (std::int64_t k = lo; k <= hi; ++k) {
        double term1 = static_cast<double>(k) / n *
                       std::log(n * static_cast<double>(k) /
                                (static_cast<double>(ai) * static_cast<double>(bj)));
        double lg = std::lgamma(static_cast<double>(ai) + 1) +
                    std::lgamma(static_cast<double>(bj) + 1) +
                    std::lgamma(static_cast<double>(N - ai) + 1) +
                    std::lgamma(static_cast<double>(N - bj) + 1) -
                    std::lgamma(static_cast<double>(N) + 1) -
                    std::lgamma(static_cast<double>(k) + 1) -
                    std::lgamma(static_cast<double>(ai - k) + 1) -
                    std::lgamma(static_cast<double>(bj - k) + 1) -
                    std::lgamma(static_cast<double>(N - ai - bj + k) + 1);
        emi += term1 * std::exp(lg);
      }
    }
  }

  double hu = detail::entropy_from_counts(a, n);
  double hv = detail::entropy_from_counts(b, n);
  double denom = 0.5 * (hu + hv) - emi;
  if (std::abs(denom) < 1e-12) {
    // degenerate labelings (single cluster): perfect agreement iff MI == EMI
    return (std::abs(mi - emi) < 1e-12) ? 1.0 : 0.0;
  }
  return (mi - emi) / denom;
}

// Mean silhouette coefficient over all points; singleton-cluster points
// contribute 0 by convention.
inline double silhouette_score(const Matd& x, const std::vector<int>& labels) {
  if (static_cast<std::size_t>(x.rows()) != labels.size() || labels.empty()) {
    throw InvalidArgument("silhouette_score: size mismatch");
  }
  int k = 0;
  std::vector<int> lab = detail::relabel(labels, &k);
  if (k < 2) return 0.0;
  const Eigen::Index n = x.rows();
  std::vector<std::int64_t> count(static_cast<std::size_t>(k), 0);
  for (int l : lab) count[static_cast<std::size_t>(l)]++;

  double total = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<double> dist_sum(static_cast<std::size_t>(k), 0.0);
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      dist_sum[static_cast<std::size_t>(lab[static_cast<std::size_t>(j)])] +=
          (x.row(i) - x.row(j)).norm();
    }
    int li = lab[static_cast<std::size_t>(i)];
    std::int64_t own = count[static_cast<std::size_t>(li)];
    if (own <= 1) continue;  // silhouette 0
    double a_i = dist_sum[static_cast<std::size_t>(li)] / static_cast<double>(own - 1);
    double b_i = 1e300;
    for (int c = 0; c < k; ++c) {
      if (c == li || count[static_cast<std::size_t>(c)] == 0) continue;
      b_i = std::min(b_i, dist_sum[static_cast<std::size_t>(c)] /
                              static_cast<double>(count[static_cast<std::size_t>(c)]));
    }
    double denom = std::max(a_i, b_i);
    if (denom > 0) total += (b_i - a_i) / denom;
  }
  return total / static_cast<double>(n);
}

struct LatentStructureReport {
  double ami_behavior = 0;
  double ami_domain = 0;
  double silhouette_behavior = 0;
  std::int64_t n = 0;
};

// K-means on pooled latents, then chance-corrected agreement of the induced
// labels with behavior labels vs domain labels.
inline LatentStructureReport latent_structure(const Matd& latents,
                                              const std::vector<int>& behavior_labels,
                                              const std::vector<int>& domain_labels, int M,
                                              std::uint64_t seed) {
  if (latents.rows() <= M) throw InvalidArgument("latent_structure: need n > M");
  if (static_cast<std::size_t>(latents.rows()) != behavior_labels.size() ||
      behavior_labels.size() != domain_labels.size()) {
    throw InvalidArgument("latent_structure: label size mismatch");
  }
  ClusterModel cm = kmeans_fit(latents, M, seed);
  std::vector<int> pred;
  pred.reserve(static_cast<std::size_t>(latents.rows()));
  for (Eigen::Index i = 0; i < latents.rows(); ++i) {
    Matd row = latents.row(i);
    pred.push_back(assign_cluster(row, cm));
  }
  LatentStructureReport r;
  r.n = latents.rows();
  r.ami_behavior = adjusted_mutual_info(pred, behavior_labels);
  r.ami_domain = adjusted_mutual_info(pred, domain_labels);
  r.silhouette_behavior = silhouette_score(latents, behavior_labels);
  return r;
}

}  // namespace heat
