#include "difflight/datapipe/dataset.hpp"

#include <filesystem>
#include <fstream>
#include <json.hpp>

namespace difflight::datapipe {

namespace fs = std::filesystem;
using nlohmann::json;

void OfflineDataset::validate() const {
  require(!episodes.empty(), "dataset: no episodes");
  for (const auto& ep : episodes) {
    require(ep.n_intersections == net.n_intersections(), "dataset: episode topology mismatch");
    require(ep.n_steps == episodes.front().n_steps, "dataset: episodes must share one horizon");
    require(ep.control_period == net.control_period, "dataset: control period mismatch");
  }
}

OfflineDataset build_dataset(const trafficsim::NetworkSpec& net, const trafficsim::FlowSpec& flow,
                             const std::vector<PolicyKind>& policies, int episodes_per_policy, std::uint64_t seed) {
  require(!policies.empty() && episodes_per_policy >= 1, "dataset: need at least one policy and episode");
  OfflineDataset ds;
  ds.net = net;
  ds.topo_hash = trafficsim::topology_hash(net);
  ds.norm = Normalization::from(net);
  Rng root(seed);
  for (PolicyKind kind : policies) {
    Rng stream = root.fork(policy_name(kind));
    for (int e = 0; e < episodes_per_policy; ++e) {
      const std::uint64_t ep_seed = stream.fork(static_cast<std::uint64_t>(e)).engine()();
      ds.episodes.push_back(run_behavior_policy(net, flow, kind, ep_seed));
    }
  }
  ds.validate();
  return ds;
}

void save_dataset(const std::string& dir, const OfflineDataset& ds) {
  ds.validate();
  fs::create_directories(fs::path(dir) / "episodes");
  json manifest;
  manifest["schema_version"] = 1;
  manifest["network"] = json::parse(trafficsim::network_spec_json(ds.net));
  manifest["topology_hash"] = ds.topo_hash;
  manifest["normalization"] = {{"lane_capacity", ds.norm.lane_capacity}, {"q_max", ds.norm.q_max}};
  manifest["episodes"] = json::array();
  for (size_t i = 0; i < ds.episodes.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "episodes/ep_%03zu.jsonl", i);
    save_episode((fs::path(dir) / name).string(), ds.episodes[i]);
    manifest["episodes"].push_back({{"file", name},
                                    {"policy", ds.episodes[i].policy},
                                    {"seed", ds.episodes[i].seed},
                                    {"n_steps", ds.episodes[i].n_steps}});
  }
  std::ofstream f(fs::path(dir) / "manifest.json");
  require(f.good(), "cannot write dataset manifest in " + dir);
  f << manifest.dump(2) << "\n";
}

OfflineDataset load_dataset(const std::string& dir) {
  std::ifstream f(fs::path(dir) / "manifest.json");
  require(f.good(), "cannot open dataset manifest in " + dir);
  json manifest;
  f >> manifest;
  require(manifest.value("schema_version", 0) == 1, "dataset manifest: unsupported schema_version");
  OfflineDataset ds;
  ds.net = trafficsim::parse_network_spec(manifest.at("network").dump());
  ds.topo_hash = manifest.at("topology_hash").get<std::string>();
  require(ds.topo_hash == trafficsim::topology_hash(ds.net), "dataset manifest: topology hash mismatch");
  ds.norm.lane_capacity = manifest.at("normalization").at("lane_capacity").get<int>();
  ds.norm.q_max = manifest.at("normalization").at("q_max").get<float>();
  for (const auto& je : manifest.at("episodes")) {
    ds.episodes.push_back(load_episode((fs::path(dir) / je.at("file").get<std::string>()).string()));
  }
  ds.validate();
  return ds;
}

}  // namespace difflight::datapipe
