#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pslab/synthscene.hpp"

namespace pslab {

struct DatasetConfig {
  std::uint64_t seed = 1;
  int identities = 50;
  int prototype_dim = 16;
  // identities are partitioned into sites; a scene only shows people from
  // one site, which keeps sites usable as identity-disjoint split units
  int sites = 10;
  int scenes = 500;
  int patch_width = 8;
  int patch_height = 16;
  Variation variation;
  SceneConfig scene;
  ProposalConfig proposals;
  double test_fraction = 0.4;
  int query_count = 100;

  void validate() const;
};

struct Dataset {
  std::vector<Scene> scenes;
  DatasetSplit split;
  std::string source_hash;  // hash of the generating config, if known
};

World make_world(const DatasetConfig& config);
Dataset generate_dataset(const DatasetConfig& config);

/// Writes `manifest.json` plus `scenes.bin` (canvas and patch bytes) into
/// `dir`. Output is a pure function of the dataset.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

inline constexpr const char* kManifestName = "manifest.json";
inline constexpr const char* kBlobName = "scenes.bin";

}  // namespace pslab
