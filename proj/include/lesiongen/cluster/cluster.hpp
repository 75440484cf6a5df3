#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lesiongen/rng.hpp"
#include "lesiongen/style/features.hpp"

namespace lesiongen {

/// Concatenated [image token, mask token]; the mask is replicated to three
/// channels. Inputs are one sample each: image [1,3,H,W], mask [1,1,H,W].
std::vector<double> embed_pair(const Tensor& image, const Tensor& mask, const FeatureExtractor& extractor);

/// Row i embeds sample i of a [N, 4, H, W] batch. Rows are the same as
/// embed_pair on each sample.
Eigen::MatrixXd embed_samples(const Tensor& samples, const FeatureExtractor& extractor, bool normalize = false);

struct KMeansResult {
  std::vector<int> assignment;
  Eigen::MatrixXd centroids;       // K x D
  std::vector<double> inertia;     // within-cluster sum of squares after each Lloyd round
  int iterations = 0;
  int repairs = 0;
};

/// k-means++ seeding then Lloyd rounds until the assignment stops changing or
/// max_iter rounds. Ties go to the lower cluster id. An empty cluster takes
/// the point farthest from its own centroid (among clusters with > 1 member).
KMeansResult kmeans(const Eigen::MatrixXd& points, int k, std::uint64_t seed, int max_iter = 100);

/// Cluster id -> checkpoint, plus an optional whole-dataset model. A registry
/// with k == 0 and a full checkpoint is the Full-Diff configuration.
struct ClusterRegistry {
  int k = 0;
  std::map<std::string, int> assignment;
  Eigen::MatrixXd centroids;
  std::map<int, std::filesystem::path> checkpoints;
  std::optional<std::filesystem::path> full_checkpoint;

  /// Cluster ids without a checkpoint.
  std::vector<int> missing() const;
  bool complete() const { return missing().empty(); }
  std::vector<std::string> members(int cluster) const;
};

ClusterRegistry build_registry(const std::vector<std::string>& ids, const KMeansResult& clusters,
                               std::map<int, std::filesystem::path> checkpoints,
                               std::optional<std::filesystem::path> full_checkpoint = std::nullopt);

/// Plain-text index; paths are stored as written. See README for the format.
void save_registry(const std::filesystem::path& path, const ClusterRegistry& registry);
ClusterRegistry load_registry(const std::filesystem::path& path);
/// sample_id,cluster rows sorted by id.
void write_membership_csv(const std::filesystem::path& path, const ClusterRegistry& registry);

/// Uniform over 0..K-1. Throws when the registry is partial or has no clusters.
int pick_model(const ClusterRegistry& registry, Rng& rng);

}  // namespace lesiongen
