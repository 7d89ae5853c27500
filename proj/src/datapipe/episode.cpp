#include "difflight/datapipe/episode.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>

namespace difflight::datapipe {

using nlohmann::json;

std::string episode_jsonl(const Episode& ep) {
  std::string out;
  json header;
  header["policy"] = ep.policy;
  header["seed"] = ep.seed;
  header["n_intersections"] = ep.n_intersections;
  header["n_steps"] = ep.n_steps;
  header["control_period"] = ep.control_period;
  out += header.dump() + "\n";
  for (int s = 0; s < ep.n_steps; ++s) {
    for (int i = 0; i < ep.n_intersections; ++i) {
      const StepRecord& r = ep.at(s, i);
      json j;
      j["t"] = s * ep.control_period;
      j["intersection_id"] = i;
      j["obs"] = std::vector<float>(r.obs.begin(), r.obs.end());
      j["action"] = std::string(1, trafficsim::phase_letter(static_cast<trafficsim::Phase>(r.action)));
      j["reward"] = r.reward;
      out += j.dump() + "\n";
    }
  }
  for (const auto& v : ep.vehicles) {
    json j;
    j["vehicle_id"] = v.id;
    j["t_enter"] = v.t_enter;
    if (v.completed())
      j["t_leave"] = v.t_leave;
    else
      j["t_leave"] = nullptr;
    out += j.dump() + "\n";
  }
  return out;
}

Episode parse_episode_jsonl(const std::string& text) {
  Episode ep;
  std::istringstream in(text);
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    if (!have_header) {
      ep.policy = j.at("policy").get<std::string>();
      ep.seed = j.at("seed").get<std::uint64_t>();
      ep.n_intersections = j.at("n_intersections").get<int>();
      ep.n_steps = j.at("n_steps").get<int>();
      ep.control_period = j.at("control_period").get<int>();
      ep.steps.resize(static_cast<size_t>(ep.n_steps) * static_cast<size_t>(ep.n_intersections));
      have_header = true;
      continue;
    }
    if (j.contains("vehicle_id")) {
      trafficsim::VehicleRecord v;
      v.id = j.at("vehicle_id").get<int>();
      v.t_enter = j.at("t_enter").get<int>();
      v.t_leave = j.at("t_leave").is_null() ? -1 : j.at("t_leave").get<int>();
      ep.vehicles.push_back(v);
      continue;
    }
    const int t = j.at("t").get<int>();
    const int inter = j.at("intersection_id").get<int>();
    require(t % ep.control_period == 0, "episode log: off-grid timestamp");
    const int step = t / ep.control_period;
    require(step >= 0 && step < ep.n_steps && inter >= 0 && inter < ep.n_intersections,
            "episode log: record out of range");
    StepRecord r;
    auto obs = j.at("obs").get<std::vector<float>>();
    require(obs.size() == trafficsim::kObsDim, "episode log: observation must have 24 entries");
    std::copy(obs.begin(), obs.end(), r.obs.begin());
    r.action = static_cast<int>(trafficsim::phase_from_letter(j.at("action").get<std::string>().at(0)));
    r.reward = j.at("reward").get<float>();
    ep.at(step, inter) = r;
  }
  require(have_header, "episode log: missing header line");
  return ep;
}

void save_episode(const std::string& path, const Episode& ep) {
  std::ofstream f(path);
  require(f.good(), "cannot open for writing: " + path);
  f << episode_jsonl(ep);
  require(f.good(), "write failed: " + path);
}

Episode load_episode(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), "cannot open: " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_episode_jsonl(text);
}

}  // namespace difflight::datapipe
