#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pslab/dataset.hpp"
#include "pslab/pipeline.hpp"

namespace pslab {

/// Anything that maps boxes in a scene to retrieval features.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::size_t feat_dim() const = 0;
  // One row per box, inference behaviour only.
  virtual Tensor embed_boxes(const Scene& scene,
                             std::span<const BoundingBox> boxes) const = 0;
  // Gallery boxes derived from a scene's proposals; identity by default.
  virtual std::vector<BoundingBox> detect(const Scene& /*scene*/,
                                          std::span<const BoundingBox> proposals) const {
    return {proposals.begin(), proposals.end()};
  }
};

class ModelExtractor final : public FeatureExtractor {
 public:
  explicit ModelExtractor(const PersonSearchModel& model, DetectOptions options = {})
      : model_(&model), options_(options) {}
  std::size_t feat_dim() const override;
  Tensor embed_boxes(const Scene& scene,
                     std::span<const BoundingBox> boxes) const override;
  std::vector<BoundingBox> detect(const Scene& scene,
                                  std::span<const BoundingBox> proposals) const override;

 private:
  const PersonSearchModel* model_;
  DetectOptions options_;
};

struct GalleryEntry {
  int scene = 0;          // dataset scene index
  std::size_t box = 0;    // detection index within the scene
  BoundingBox bbox;
  std::vector<double> feat;
};

/// Proposal features of a set of scenes. Immutable once built.
class GalleryIndex {
 public:
  GalleryIndex() = default;
  GalleryIndex(std::vector<int> scene_ids, std::vector<GalleryEntry> entries);

  const std::vector<int>& scenes() const { return scene_ids_; }
  const std::vector<GalleryEntry>& entries() const { return entries_; }
  // entries of one scene, empty when the scene has no proposals or is absent
  std::span<const GalleryEntry> scene_entries(int scene) const;

 private:
  std::vector<int> scene_ids_;
  std::vector<GalleryEntry> entries_;
  std::map<int, std::pair<std::size_t, std::size_t>> ranges_;
};

/// Embeds every proposal of `gallery_size` scenes sampled (seeded) from
/// `scene_pool`, in pool order when the whole pool is requested.
GalleryIndex build_gallery(const FeatureExtractor& extractor,
                           std::span<const Scene> scenes,
                           std::span<const int> scene_pool, int gallery_size,
                           std::uint64_t seed);

std::vector<double> query_features(const FeatureExtractor& extractor,
                                   const Scene& scene, const QueryRecord& query);

struct RankedCandidate {
  const GalleryEntry* entry = nullptr;
  double distance = 0.0;
};

/// Ascending Euclidean distance; ties broken by (scene, box index).
std::vector<RankedCandidate> rank_candidates(std::span<const double> query_feat,
                                             std::span<const GalleryEntry* const> candidates);
std::vector<RankedCandidate> rank_candidates(std::span<const double> query_feat,
                                             const GalleryIndex& gallery);

/// Greedy one-to-one matching down the ranked list: a candidate is a hit
/// when it overlaps (IoU > threshold) a not-yet-matched GT box of
/// `identity` in its scene.
std::vector<bool> match_ranked(std::span<const RankedCandidate> ranked,
                               std::span<const Scene> scenes, int identity,
                               double threshold = 0.5);

/// (1/G) * sum over hit ranks k of precision@k. Throws ContractError if
/// G < 1 or if there are more hits than G.
double average_precision(const std::vector<bool>& hits, int ground_truth_count);

struct QueryResult {
  int query = 0;
  int identity = 0;
  double ap = 0.0;
  bool top1 = false;
  bool occluded = false;
  bool low_res = false;
  int gallery_scenes = 0;
};

struct SubsetMetrics {
  double map = 0.0;
  double top1 = 0.0;
  int queries = 0;
};

struct EvalReport {
  std::vector<QueryResult> per_query;
  double map = 0.0;
  double top1 = 0.0;
  int gallery_size = 0;
  double mean_feat_norm = 0.0;
  std::map<std::string, SubsetMetrics> subsets;  // "occluded", "low_res"
  std::vector<std::string> notes;
};

struct EvalOptions {
  int gallery_size = 50;
  std::uint64_t seed = 0;
  double match_threshold = 0.5;
};

/// Person-search protocol: every query searches a gallery made of all
/// scenes (other than its own) showing its identity, padded with negative
/// scenes from a seeded per-query order up to `gallery_size` scenes.
/// Larger galleries therefore nest the smaller ones.
EvalReport evaluate(const FeatureExtractor& extractor,
                    std::span<const Scene> scenes,
                    std::span<const int> test_scenes,
                    std::span<const QueryRecord> queries,
                    const EvalOptions& options);

/// Same protocol for several gallery sizes, embedding each scene once.
std::vector<EvalReport> evaluate_sizes(const FeatureExtractor& extractor,
                                       std::span<const Scene> scenes,
                                       std::span<const int> test_scenes,
                                       std::span<const QueryRecord> queries,
                                       std::span<const int> gallery_sizes,
                                       std::uint64_t seed,
                                       double match_threshold = 0.5);

}  // namespace pslab
