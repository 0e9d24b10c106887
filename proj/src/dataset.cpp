#include "pslab/dataset.hpp"

#include <fstream>
#include <iterator>
#include <numeric>

#include <json.hpp>

#include "pslab/errors.hpp"

namespace pslab {

using nlohmann::json;

void DatasetConfig::validate() const {
  if (identities < 2) throw ConfigError("dataset needs at least two identities");
  if (sites < 2 || sites > identities) {
    throw ConfigError("sites must lie in [2, identities]");
  }
  if (scenes < sites) throw ConfigError("need at least one scene per site");
  if (prototype_dim < 1) throw ConfigError("prototype_dim must be positive");
  if (patch_width < 1 || patch_height < 1) {
    throw ConfigError("patch size must be positive");
  }
  if (query_count < 1) throw ConfigError("query_count must be positive");
  variation.validate();
  scene.validate();
  proposals.validate();
}

World make_world(const DatasetConfig& config) {
  config.validate();
  World world;
  world.prototype_dim = config.prototype_dim;
  world.identities = generate_identities(config.identities, config.prototype_dim,
                                         config.seed, config.variation);
  world.decoder = PatchDecoder(config.prototype_dim, config.patch_width,
                               config.patch_height, config.seed);
  return world;
}

Dataset generate_dataset(const DatasetConfig& config) {
  const World world = make_world(config);
  std::vector<std::vector<int>> site_pools(static_cast<std::size_t>(config.sites));
  for (int id = 0; id < config.identities; ++id)
    site_pools[static_cast<std::size_t>(id % config.sites)].push_back(id);

  Dataset dataset;
  dataset.scenes.reserve(static_cast<std::size_t>(config.scenes));
  for (int s = 0; s < config.scenes; ++s) {
    const int site = s % config.sites;
    const std::uint64_t scene_seed =
        derive_seed(derive_seed(config.seed, "scene"), static_cast<std::uint64_t>(s));
    Scene scene = render_scene(world, site_pools[static_cast<std::size_t>(site)],
                               config.scene, scene_seed);
    scene.id = s;
    scene.site = site;
    scene = with_proposals(std::move(scene), config.proposals,
                           derive_seed(scene_seed, "proposals"));
    dataset.scenes.push_back(std::move(scene));
  }
  dataset.split = make_splits(dataset.scenes, config.query_count, config.seed,
                              config.test_fraction);
  return dataset;
}

namespace {

json box_json(const BoundingBox& b) { return json::array({b.x, b.y, b.w, b.h}); }

BoundingBox box_from(const json& j, int label) {
  if (!j.is_array() || j.size() != 4) throw IoError("manifest box must be [x,y,w,h]");
  BoundingBox b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(),
                j[3].get<double>(), label};
  if (!(b.w > 0.0 && b.h > 0.0)) throw IoError("manifest box has non-positive extent");
  return b;
}

void append_bytes(std::vector<std::uint8_t>& blob, const Image& img,
                  json& out_offset) {
  out_offset = blob.size();
  blob.insert(blob.end(), img.pixels.begin(), img.pixels.end());
}

}  // namespace

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  std::vector<char> split_of(dataset.scenes.size(), 'n');
  for (int s : dataset.split.train_scenes) split_of.at(static_cast<std::size_t>(s)) = 't';
  for (int s : dataset.split.test_scenes) split_of.at(static_cast<std::size_t>(s)) = 'e';

  std::vector<std::uint8_t> blob;
  json scenes = json::array();
  for (std::size_t i = 0; i < dataset.scenes.size(); ++i) {
    const Scene& s = dataset.scenes[i];
    json js;
    js["id"] = s.id;
    js["site"] = s.site;
    js["width"] = s.width();
    js["height"] = s.height();
    js["split"] = split_of[i] == 't' ? "train" : split_of[i] == 'e' ? "test" : "none";
    append_bytes(blob, s.canvas, js["canvas_offset"]);
    json instances = json::array();
    for (const auto& inst : s.instances) {
      json ji;
      ji["box"] = box_json(inst.box);
      ji["label"] = inst.box.label;
      ji["occluded"] = inst.occluded;
      ji["low_res"] = inst.low_res;
      if (!inst.patch.pixels.empty()) {
        append_bytes(blob, inst.patch, ji["patch_offset"]);
        ji["patch_width"] = inst.patch.width;
        ji["patch_height"] = inst.patch.height;
      }
      instances.push_back(std::move(ji));
    }
    js["instances"] = std::move(instances);
    json proposals = json::array();
    for (const auto& p : s.proposals)
      proposals.push_back({{"box", box_json(p)}, {"label", p.label}});
    js["proposals"] = std::move(proposals);
    scenes.push_back(std::move(js));
  }
  json queries = json::array();
  for (const auto& q : dataset.split.queries) {
    queries.push_back({{"scene", q.scene},
                       {"instance", q.instance},
                       {"identity", q.identity},
                       {"occluded", q.occluded},
                       {"low_res", q.low_res}});
  }
  json manifest;
  manifest["format"] = "pslab-manifest";
  manifest["version"] = 1;
  manifest["blob"] = kBlobName;
  manifest["blob_bytes"] = blob.size();
  manifest["config_hash"] = dataset.source_hash;
  manifest["scenes"] = std::move(scenes);
  manifest["queries"] = std::move(queries);

  const auto manifest_path = dir / kManifestName;
  std::ofstream mf(manifest_path, std::ios::binary | std::ios::trunc);
  if (!mf) throw IoError("cannot write " + manifest_path.string());
  mf << manifest.dump(1) << '\n';
  const auto blob_path = dir / kBlobName;
  std::ofstream bf(blob_path, std::ios::binary | std::ios::trunc);
  if (!bf) throw IoError("cannot write " + blob_path.string());
  bf.write(reinterpret_cast<const char*>(blob.data()),
           static_cast<std::streamsize>(blob.size()));
  if (!mf || !bf) throw IoError("short write in " + dir.string());
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / kManifestName;
  std::ifstream mf(manifest_path, std::ios::binary);
  if (!mf) throw IoError("cannot read manifest " + manifest_path.string());
  json manifest;
  try {
    manifest = json::parse(mf);
  } catch (const json::exception& e) {
    throw IoError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  const auto blob_path = dir / manifest.value("blob", std::string(kBlobName));
  std::ifstream bf(blob_path, std::ios::binary);
  if (!bf) throw IoError("cannot read blob " + blob_path.string());
  const std::vector<std::uint8_t> blob((std::istreambuf_iterator<char>(bf)),
                                       std::istreambuf_iterator<char>());

  auto read_image = [&](std::size_t offset, int w, int h) {
    Image img(w, h);
    if (offset + img.pixels.size() > blob.size()) {
      throw IoError("blob offset out of range in " + blob_path.string());
    }
    std::copy_n(blob.begin() + static_cast<std::ptrdiff_t>(offset),
                img.pixels.size(), img.pixels.begin());
    return img;
  };

  Dataset dataset;
  try {
    dataset.source_hash = manifest.value("config_hash", std::string());
    int index = 0;
    for (const auto& js : manifest.at("scenes")) {
      Scene s;
      s.id = js.at("id").get<int>();
      s.site = js.value("site", 0);
      s.canvas = read_image(js.at("canvas_offset").get<std::size_t>(),
                            js.at("width").get<int>(), js.at("height").get<int>());
      for (const auto& ji : js.at("instances")) {
        PersonInstance inst;
        inst.box = box_from(ji.at("box"), ji.at("label").get<int>());
        inst.occluded = ji.value("occluded", false);
        inst.low_res = ji.value("low_res", false);
        if (ji.contains("patch_offset")) {
          inst.patch = read_image(ji.at("patch_offset").get<std::size_t>(),
                                  ji.at("patch_width").get<int>(),
                                  ji.at("patch_height").get<int>());
        }
        s.instances.push_back(std::move(inst));
      }
      for (const auto& jp : js.at("proposals"))
        s.proposals.push_back(box_from(jp.at("box"), jp.value("label", kBackgroundLabel)));
      const std::string split = js.value("split", std::string("none"));
      if (split == "train") dataset.split.train_scenes.push_back(index);
      if (split == "test") dataset.split.test_scenes.push_back(index);
      dataset.scenes.push_back(std::move(s));
      ++index;
    }
    for (const auto& jq : manifest.at("queries")) {
      QueryRecord q;
      q.scene = jq.at("scene").get<int>();
      q.instance = jq.at("instance").get<int>();
      q.identity = jq.at("identity").get<int>();
      q.occluded = jq.value("occluded", false);
      q.low_res = jq.value("low_res", false);
      if (q.scene < 0 || q.scene >= index) throw IoError("query scene out of range");
      const auto& sc = dataset.scenes[static_cast<std::size_t>(q.scene)];
      if (q.instance < 0 || q.instance >= static_cast<int>(sc.instances.size())) {
        throw IoError("query instance out of range");
      }
      dataset.split.queries.push_back(q);
    }
  } catch (const json::exception& e) {
    throw IoError("manifest " + manifest_path.string() + " violates schema: " +
                  e.what());
  }
  return dataset;
}

}  // namespace pslab
