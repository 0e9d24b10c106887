#include "pslab/eval.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "pslab/errors.hpp"

namespace pslab {

std::size_t ModelExtractor::feat_dim() const {
  return static_cast<std::size_t>(model_->config().feat_dim);
}

Tensor ModelExtractor::embed_boxes(const Scene& scene,
                                   std::span<const BoundingBox> boxes) const {
  return model_->embed(extract_batch(scene, boxes, model_->config()));
}

std::vector<BoundingBox> ModelExtractor::detect(
    const Scene& scene, std::span<const BoundingBox> proposals) const {
  std::vector<BoundingBox> out;
  for (const auto& d : pslab::detect(*model_, scene, proposals, options_))
    out.push_back(d.box);
  return out;
}

GalleryIndex::GalleryIndex(std::vector<int> scene_ids,
                           std::vector<GalleryEntry> entries)
    : scene_ids_(std::move(scene_ids)), entries_(std::move(entries)) {
  for (std::size_t i = 0; i < entries_.size();) {
    std::size_t j = i;
    while (j < entries_.size() && entries_[j].scene == entries_[i].scene) ++j;
    ranges_[entries_[i].scene] = {i, j};
    i = j;
  }
}

std::span<const GalleryEntry> GalleryIndex::scene_entries(int scene) const {
  auto it = ranges_.find(scene);
  if (it == ranges_.end()) return {};
  return {entries_.data() + it->second.first, it->second.second - it->second.first};
}

namespace {

std::vector<GalleryEntry> embed_scene(const FeatureExtractor& extractor,
                                      const Scene& scene, int scene_index) {
  std::vector<GalleryEntry> out;
  const auto boxes = extractor.detect(scene, scene.proposals);
  if (boxes.empty()) return out;
  const Tensor feats = extractor.embed_boxes(scene, boxes);
  for (std::size_t b = 0; b < boxes.size(); ++b) {
    auto row = feats.row_span(b);
    for (double v : row)
      if (!std::isfinite(v)) throw NumericalError("non-finite gallery feature");
    out.push_back({scene_index, b, boxes[b], {row.begin(), row.end()}});
  }
  return out;
}

}  // namespace

GalleryIndex build_gallery(const FeatureExtractor& extractor,
                           std::span<const Scene> scenes,
                           std::span<const int> scene_pool, int gallery_size,
                           std::uint64_t seed) {
  if (gallery_size < 1 || gallery_size > static_cast<int>(scene_pool.size())) {
    throw ConfigError("gallery size " + std::to_string(gallery_size) +
                      " not in [1, " + std::to_string(scene_pool.size()) + "]");
  }
  std::vector<int> chosen(scene_pool.begin(), scene_pool.end());
  if (gallery_size < static_cast<int>(chosen.size())) {
    Rng rng(derive_seed(seed, "gallery"));
    for (std::size_t i = 0; i < static_cast<std::size_t>(gallery_size); ++i)
      std::swap(chosen[i], chosen[i + rng.uniform_index(chosen.size() - i)]);
    chosen.resize(static_cast<std::size_t>(gallery_size));
  }
  std::vector<GalleryEntry> entries;
  for (int s : chosen) {
    auto e = embed_scene(extractor, scenes[static_cast<std::size_t>(s)], s);
    entries.insert(entries.end(), std::make_move_iterator(e.begin()),
                   std::make_move_iterator(e.end()));
  }
  return GalleryIndex(std::move(chosen), std::move(entries));
}

std::vector<double> query_features(const FeatureExtractor& extractor,
                                   const Scene& scene, const QueryRecord& query) {
  if (query.instance < 0 || query.instance >= static_cast<int>(scene.instances.size())) {
    throw IndexError("query probe instance out of range");
  }
  const BoundingBox probe = scene.instances[static_cast<std::size_t>(query.instance)].box;
  const Tensor f = extractor.embed_boxes(scene, std::span<const BoundingBox>(&probe, 1));
  return {f.values().begin(), f.values().end()};
}

std::vector<RankedCandidate> rank_candidates(
    std::span<const double> query_feat,
    std::span<const GalleryEntry* const> candidates) {
  std::vector<RankedCandidate> ranked;
  ranked.reserve(candidates.size());
  for (const GalleryEntry* e : candidates) {
    if (e->feat.size() != query_feat.size()) {
      throw ShapeError("query feature dimension " + std::to_string(query_feat.size()) +
                       " != gallery dimension " + std::to_string(e->feat.size()));
    }
    ranked.push_back({e, std::sqrt(squared_distance(query_feat, e->feat))});
  }
  std::sort(ranked.begin(), ranked.end(),
            [](const RankedCandidate& a, const RankedCandidate& b) {
              if (a.distance != b.distance) return a.distance < b.distance;
              if (a.entry->scene != b.entry->scene) return a.entry->scene < b.entry->scene;
              return a.entry->box < b.entry->box;
            });
  return ranked;
}

std::vector<RankedCandidate> rank_candidates(std::span<const double> query_feat,
                                             const GalleryIndex& gallery) {
  std::vector<const GalleryEntry*> ptrs;
  ptrs.reserve(gallery.entries().size());
  for (const auto& e : gallery.entries()) ptrs.push_back(&e);
  return rank_candidates(query_feat, ptrs);
}

std::vector<bool> match_ranked(std::span<const RankedCandidate> ranked,
                               std::span<const Scene> scenes, int identity,
                               double threshold) {
  std::set<std::pair<int, std::size_t>> matched;
  std::vector<bool> hits;
  hits.reserve(ranked.size());
  for (const auto& r : ranked) {
    const Scene& scene = scenes[static_cast<std::size_t>(r.entry->scene)];
    double best = threshold;
    std::size_t best_idx = scene.instances.size();
    for (std::size_t i = 0; i < scene.instances.size(); ++i) {
      const auto& gt = scene.instances[i].box;
      if (gt.label != identity || matched.count({r.entry->scene, i})) continue;
      const double v = iou(r.entry->bbox, gt);
      if (v > best) {
        best = v;
        best_idx = i;
      }
    }
    const bool hit = best_idx < scene.instances.size();
    if (hit) matched.insert({r.entry->scene, best_idx});
    hits.push_back(hit);
  }
  return hits;
}

double average_precision(const std::vector<bool>& hits, int ground_truth_count) {
  if (ground_truth_count < 1) {
    throw ContractError("average precision undefined without ground truth");
  }
  double sum = 0.0;
  int found = 0;
  for (std::size_t k = 0; k < hits.size(); ++k) {
    if (!hits[k]) continue;
    ++found;
    sum += static_cast<double>(found) / static_cast<double>(k + 1);
  }
  if (found > ground_truth_count) {
    throw ContractError("more hits than ground-truth instances");
  }
  return sum / ground_truth_count;
}

namespace {

void finalize(EvalReport& report) {
  if (report.per_query.empty()) {
    report.notes.push_back("no query had a ground-truth match in its gallery");
    return;
  }
  double ap = 0.0, top1 = 0.0;
  std::map<std::string, SubsetMetrics> subsets;
  for (const auto& q : report.per_query) {
    ap += q.ap;
    top1 += q.top1 ? 1.0 : 0.0;
    for (auto [flag, name] : {std::pair{q.occluded, "occluded"}, {q.low_res, "low_res"}}) {
      if (!flag) continue;
      auto& s = subsets[name];
      s.map += q.ap;
      s.top1 += q.top1 ? 1.0 : 0.0;
      ++s.queries;
    }
  }
  const double n = static_cast<double>(report.per_query.size());
  report.map = ap / n;
  report.top1 = top1 / n;
  for (auto& [name, s] : subsets) {
    s.map /= s.queries;
    s.top1 /= s.queries;
  }
  for (const char* name : {"occluded", "low_res"})
    if (!subsets.count(name)) {
      report.notes.push_back(std::string("subset ") + name +
                             " has no flagged queries; rows omitted");
    }
  report.subsets = std::move(subsets);
}

}  // namespace

std::vector<EvalReport> evaluate_sizes(const FeatureExtractor& extractor,
                                       std::span<const Scene> scenes,
                                       std::span<const int> test_scenes,
                                       std::span<const QueryRecord> queries,
                                       std::span<const int> gallery_sizes,
                                       std::uint64_t seed, double match_threshold) {
  if (queries.empty()) throw ConfigError("evaluation needs at least one query");
  for (int size : gallery_sizes) {
    if (size < 1 || size >= static_cast<int>(test_scenes.size())) {
      throw ConfigError("gallery size " + std::to_string(size) +
                        " exceeds the " + std::to_string(test_scenes.size() - 1) +
                        " scenes available to each query");
    }
  }
  const GalleryIndex index = build_gallery(extractor, scenes, test_scenes,
                                           static_cast<int>(test_scenes.size()), seed);
  double norm_sum = 0.0;
  for (const auto& e : index.entries()) norm_sum += l2_norm(e.feat);
  const double mean_norm =
      index.entries().empty() ? 0.0 : norm_sum / static_cast<double>(index.entries().size());

  std::vector<EvalReport> reports(gallery_sizes.size());
  for (std::size_t g = 0; g < gallery_sizes.size(); ++g) {
    reports[g].gallery_size = gallery_sizes[g];
    reports[g].mean_feat_norm = mean_norm;
  }

  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    const QueryRecord& q = queries[qi];
    const Scene& probe_scene = scenes[static_cast<std::size_t>(q.scene)];
    const auto qfeat = query_features(extractor, probe_scene, q);

    std::vector<int> positives, negatives;
    for (int s : test_scenes) {
      if (s == q.scene) continue;
      const auto& inst = scenes[static_cast<std::size_t>(s)].instances;
      const bool has = std::any_of(inst.begin(), inst.end(), [&](const PersonInstance& p) {
        return p.box.label == q.identity;
      });
      (has ? positives : negatives).push_back(s);
    }
    Rng rng(derive_seed(derive_seed(seed, "negatives"), static_cast<std::uint64_t>(qi)));
    for (std::size_t i = negatives.size(); i > 1; --i)
      std::swap(negatives[i - 1], negatives[rng.uniform_index(i)]);

    int gt_count = 0;
    for (int s : positives)
      for (const auto& p : scenes[static_cast<std::size_t>(s)].instances)
        gt_count += (p.box.label == q.identity);

    for (std::size_t g = 0; g < gallery_sizes.size(); ++g) {
      EvalReport& report = reports[g];
      if (gt_count == 0) {
        report.notes.push_back("query " + std::to_string(qi) +
                               " excluded: identity absent from the gallery");
        continue;
      }
      const std::size_t pad = static_cast<std::size_t>(
          std::max(0, gallery_sizes[g] - static_cast<int>(positives.size())));
      std::vector<const GalleryEntry*> cands;
      auto add_scene = [&](int s) {
        for (const auto& e : index.scene_entries(s)) cands.push_back(&e);
      };
      for (int s : positives) add_scene(s);
      for (std::size_t i = 0; i < std::min(pad, negatives.size()); ++i) add_scene(negatives[i]);

      const auto ranked = rank_candidates(qfeat, cands);
      const auto hits = match_ranked(ranked, scenes, q.identity, match_threshold);
      QueryResult r;
      r.query = static_cast<int>(qi);
      r.identity = q.identity;
      r.ap = average_precision(hits, gt_count);
      r.top1 = !hits.empty() && hits.front();
      r.occluded = q.occluded;
      r.low_res = q.low_res;
      r.gallery_scenes = static_cast<int>(positives.size() + std::min(pad, negatives.size()));
      report.per_query.push_back(r);
    }
  }
  for (auto& r : reports) finalize(r);
  return reports;
}

EvalReport evaluate(const FeatureExtractor& extractor, std::span<const Scene> scenes,
                    std::span<const int> test_scenes,
                    std::span<const QueryRecord> queries, const EvalOptions& options) {
  const int sizes[] = {options.gallery_size};
  return evaluate_sizes(extractor, scenes, test_scenes, queries, sizes, options.seed,
                        options.match_threshold)
      .front();
}

}  // namespace pslab
