#pragma once

#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include "heat/binio.hpp"
#include "heat/kmeans.hpp"
#include "heat/matrix.hpp"
#include "heat/world_model.hpp"

namespace heat {

// Stage-2 artifact: cluster geometry plus the averaged prototype and action
// memory tensors, with provenance of the inputs that produced it.
struct PriorsArtifact {
  ClusterModel cluster_model;
  std::vector<Matf> prototypes;  // M slices, each L x D (P_m)
  std::vector<Matf> memory;      // M slices, each L x D
  std::vector<std::int64_t> counts;
  int M = 0, L = 0, D = 0, T = 0;
  double heading_weight = 1.0;
  std::string dataset_sha256, checkpoint_sha256;
};

// Waypoints flattened for clustering; heading columns are scaled by
// heading_weight (default 1 = raw units).
inline Matd clustering_vector(const Matd& waypoints, double heading_weight) {
  Matd flat(1, waypoints.rows() * 3);
  for (Eigen::Index t = 0; t < waypoints.rows(); ++t) {
    flat(0, 3 * t + 0) = waypoints(t, 0);
    flat(0, 3 * t + 1) = waypoints(t, 1);
    flat(0, 3 * t + 2) = waypoints(t, 2) * heading_weight;
  }
  return flat;
}

inline std::vector<int> assign_triplets(const std::vector<BehaviorTriplet>& triplets,
                                        const ClusterModel& model, double heading_weight) {
  std::vector<int> out;
  out.reserve(triplets.size());
  for (const auto& bt : triplets) {
    out.push_back(assign_cluster(clustering_vector(bt.gt_waypoints, heading_weight), model));
  }
  return out;
}

namespace detail {

// Mean of per-triplet L x D slices over each cluster; 64-bit accumulation in
// ascending sample_id order (triplets arrive pre-sorted from export).
template <class Pick>
std::vector<Matf> cluster_means(const std::vector<BehaviorTriplet>& triplets,
                                const std::vector<int>& assignments, int M, Pick pick,
                                std::vector<std::int64_t>* counts_out) {
  if (triplets.empty() || triplets.size() != assignments.size()) {
    throw InvalidArgument("cluster_means: triplets/assignments mismatch");
  }
  const Eigen::Index L = pick(triplets[0]).rows();
  const Eigen::Index D = pick(triplets[0]).cols();
  std::vector<Matd> sums(static_cast<std::size_t>(M), Matd::Zero(L, D));
  std::vector<std::int64_t> counts(static_cast<std::size_t>(M), 0);

  std::vector<std::size_t> order(triplets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return triplets[a].sample_id < triplets[b].sample_id;
  });
  for (std::size_t i : order) {
    int m = assignments[i];
    if (m < 0 || m >= M) throw InvalidArgument("cluster_means: assignment out of range");
    sums[static_cast<std::size_t>(m)] += pick(triplets[i]).template cast<double>();
    counts[static_cast<std::size_t>(m)]++;
  }
  std::vector<Matf> out;
  out.reserve(static_cast<std::size_t>(M));
  for (int m = 0; m < M; ++m) {
    if (counts[static_cast<std::size_t>(m)] == 0) {
      throw InvalidArgument("empty cluster " + std::to_string(m) + "; refit required");
    }
    out.push_back((sums[static_cast<std::size_t>(m)] /
                   static_cast<double>(counts[static_cast<std::size_t>(m)]))
                      .cast<float>());
  }
  if (counts_out) *counts_out = counts;
  return out;
}

}  // namespace detail

inline std::vector<Matf> build_prototypes(const std::vector<BehaviorTriplet>& triplets,
                                          const std::vector<int>& assignments, int M,
                                          std::vector<std::int64_t>* counts = nullptr) {
  return detail::cluster_means(
      triplets, assignments, M, [](const BehaviorTriplet& bt) -> const Matf& { return bt.h_t; },
      counts);
}

inline std::vector<Matf> build_memory(const std::vector<BehaviorTriplet>& triplets,
                                      const std::vector<int>& assignments, int M,
                                      std::vector<std::int64_t>* counts = nullptr) {
  return detail::cluster_means(
      triplets, assignments, M, [](const BehaviorTriplet& bt) -> const Matf& { return bt.psi_t; },
      counts);
}

inline PriorsArtifact build_priors(const std::vector<BehaviorTriplet>& triplets, int M,
                                   std::uint64_t seed, double heading_weight,
                                   const std::string& dataset_sha256 = "",
                                   const std::string& checkpoint_sha256 = "") {
  if (triplets.empty()) throw InvalidArgument("build_priors: no triplets");
  Matd x(static_cast<Eigen::Index>(triplets.size()), triplets[0].gt_waypoints.rows() * 3);
  for (std::size_t i = 0; i < triplets.size(); ++i) {
    x.row(static_cast<Eigen::Index>(i)) =
        clustering_vector(triplets[i].gt_waypoints, heading_weight).row(0);
  }
  PriorsArtifact art;
  art.cluster_model = kmeans_fit(x, M, seed);
  std::vector<int> assign = assign_triplets(triplets, art.cluster_model, heading_weight);
  art.prototypes = build_prototypes(triplets, assign, M, &art.counts);
  art.memory = build_memory(triplets, assign, M);
  art.M = M;
  art.L = static_cast<int>(triplets[0].h_t.rows());
  art.D = static_cast<int>(triplets[0].h_t.cols());
  art.T = static_cast<int>(triplets[0].gt_waypoints.rows());
  art.heading_weight = heading_weight;
  art.dataset_sha256 = dataset_sha256;
  art.checkpoint_sha256 = checkpoint_sha256;
  return art;
}

inline constexpr char kPriorsMagic[] = "HEATPRI1";

inline void save_priors(const PriorsArtifact& art, const std::filesystem::path& path) {
  if (art.M < 1 || static_cast<int>(art.prototypes.size()) != art.M ||
      static_cast<int>(art.memory.size()) != art.M) {
    throw InvalidArgument("save_priors: inconsistent artifact");
  }
  json header;
  header["M"] = art.M;
  header["L"] = art.L;
  header["D"] = art.D;
  header["T"] = art.T;
  header["counts"] = art.counts;
  header["heading_weight"] = art.heading_weight;
  header["kmeans_seed"] = art.cluster_model.seed;
  header["kmeans_objective"] = art.cluster_model.objective;
  header["kmeans_iterations"] = art.cluster_model.iterations;
  header["dataset_sha256"] = art.dataset_sha256;
  header["checkpoint_sha256"] = art.checkpoint_sha256;

  std::vector<char> payload;
  {
    Matf c = art.cluster_model.centroids.cast<float>();
    append_mat_f32(payload, c);
  }
  for (const auto& p : art.prototypes) append_mat_f32(payload, p);
  for (const auto& m : art.memory) append_mat_f32(payload, m);

  std::string body = std::string(kPriorsMagic) + "\n" + header.dump() + "\n";
  body.append(payload.data(), payload.size());
  body += sha256_hex(body);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot open for write: " + path.string());
  f.write(body.data(), static_cast<std::streamsize>(body.size()));
  if (!f) throw FormatError("write failed: " + path.string());
}

inline PriorsArtifact load_priors(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open: " + path.string());
  std::string body((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  const std::string magic_line = std::string(kPriorsMagic) + "\n";
  if (body.rfind(magic_line, 0) != 0) throw FormatError("bad priors magic: " + path.string());
  if (body.size() < magic_line.size() + 64) throw FormatError("truncated priors file");
  std::string trailer = body.substr(body.size() - 64);
  std::string hashed = body.substr(0, body.size() - 64);
  if (sha256_hex(hashed) != trailer) throw FormatError("priors checksum mismatch: " + path.string());

  std::size_t hdr_end = body.find('\n', magic_line.size());
  if (hdr_end == std::string::npos) throw FormatError("missing priors header");
  json header;
  try {
    header = json::parse(body.substr(magic_line.size(), hdr_end - magic_line.size()));
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad priors header: ") + e.what());
  }

  PriorsArtifact art;
  art.M = header.at("M").get<int>();
  art.L = header.at("L").get<int>();
  art.D = header.at("D").get<int>();
  art.T = header.at("T").get<int>();
  art.counts = header.at("counts").get<std::vector<std::int64_t>>();
  art.heading_weight = header.value("heading_weight", 1.0);
  art.cluster_model.M = art.M;
  art.cluster_model.seed = header.value("kmeans_seed", std::uint64_t{0});
  art.cluster_model.objective = header.value("kmeans_objective", 0.0);
  art.cluster_model.iterations = header.value("kmeans_iterations", 0);
  art.dataset_sha256 = header.value("dataset_sha256", "");
  art.checkpoint_sha256 = header.value("checkpoint_sha256", "");
  if (art.M < 1 || art.L < 1 || art.D < 1 || art.T < 1 ||
      static_cast<int>(art.counts.size()) != art.M) {
    throw FormatError("priors header dimensions invalid");
  }
  for (std::int64_t c : art.counts) {
    if (c < 1) throw FormatError("priors artifact has an empty cluster");
  }

  std::size_t expected = (static_cast<std::size_t>(art.M) * 3 * static_cast<std::size_t>(art.T) +
                          2 * static_cast<std::size_t>(art.M) * static_cast<std::size_t>(art.L) *
                              static_cast<std::size_t>(art.D)) *
                         4;
  std::vector<char> payload(hashed.begin() + static_cast<std::ptrdiff_t>(hdr_end + 1),
                            hashed.end());
  if (payload.size() != expected) {
    throw FormatError("priors payload size mismatch: got " + std::to_string(payload.size()) +
                      ", expected " + std::to_string(expected));
  }
  std::size_t off = 0;
  art.cluster_model.centroids = read_mat_f32<double>(payload, off, art.M, 3 * art.T);
  for (int m = 0; m < art.M; ++m) {
    art.prototypes.push_back(read_mat_f32<float>(payload, off, art.L, art.D));
  }
  for (int m = 0; m < art.M; ++m) {
    art.memory.push_back(read_mat_f32<float>(payload, off, art.L, art.D));
  }
  return art;
}

}  // namespace heat
