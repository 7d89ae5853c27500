#include <fstream>
#include <json.hpp>
#include <set>

#include "difflight/trafficsim/network.hpp"

namespace difflight::trafficsim {

using nlohmann::json;

namespace {

// fail-fast on unknown fields so stale/typoed specs never run silently
void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  require(obj.is_object(), where + ": expected a JSON object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    require(allowed.count(it.key()) > 0, where + ": unknown field '" + it.key() + "'");
  }
}

void write_json(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  require(f.good(), "cannot open for writing: " + path);
  f << text;
  require(f.good(), "write failed: " + path);
}

std::vector<Turn> parse_turns(const std::string& s, const std::string& where) {
  std::vector<Turn> out;
  for (char c : s) {
    switch (c) {
      case 'L': out.push_back(Turn::Left); break;
      case 'T': out.push_back(Turn::Through); break;
      case 'R': out.push_back(Turn::Right); break;
      default: throw ContractViolation(where + ": route turn must be L/T/R, got '" + std::string(1, c) + "'");
    }
  }
  return out;
}

std::string turns_string(const std::vector<Turn>& turns) {
  std::string s;
  for (Turn t : turns) s.push_back(t == Turn::Left ? 'L' : (t == Turn::Through ? 'T' : 'R'));
  return s;
}

}  // namespace

NetworkSpec parse_network_spec(const std::string& json_text) {
  json j = json::parse(json_text);
  check_keys(j,
             {"schema_version", "rows", "cols", "lane_capacity", "free_flow_time", "saturation_period",
              "min_action_duration", "control_period"},
             "network spec");
  require(j.value("schema_version", 0) == 1, "network spec: unsupported schema_version");
  NetworkSpec net;
  net.rows = j.at("rows").get<int>();
  net.cols = j.at("cols").get<int>();
  net.lane_capacity = j.value("lane_capacity", net.lane_capacity);
  net.free_flow_time = j.value("free_flow_time", net.free_flow_time);
  net.saturation_period = j.value("saturation_period", net.saturation_period);
  net.min_action_duration = j.value("min_action_duration", net.min_action_duration);
  net.control_period = j.value("control_period", net.control_period);
  net.validate();
  return net;
}

std::string network_spec_json(const NetworkSpec& net) {
  json j;
  j["schema_version"] = 1;
  j["rows"] = net.rows;
  j["cols"] = net.cols;
  j["lane_capacity"] = net.lane_capacity;
  j["free_flow_time"] = net.free_flow_time;
  j["saturation_period"] = net.saturation_period;
  j["min_action_duration"] = net.min_action_duration;
  j["control_period"] = net.control_period;
  return j.dump(2) + "\n";
}

FlowSpec parse_flow_spec(const std::string& json_text) {
  json j = json::parse(json_text);
  check_keys(j, {"schema_version", "episode_seconds", "sources"}, "flow spec");
  require(j.value("schema_version", 0) == 1, "flow spec: unsupported schema_version");
  FlowSpec flow;
  flow.episode_seconds = j.at("episode_seconds").get<int>();
  require(flow.episode_seconds > 0, "flow spec: episode_seconds must be positive");
  for (const auto& js : j.at("sources")) {
    check_keys(js, {"side", "index", "rate", "routes", "scheduled"}, "flow source");
    FlowSource s;
    s.side = approach_from_name(js.at("side").get<std::string>());
    s.index = js.at("index").get<int>();
    for (const auto& jr : js.value("rate", json::array())) {
      check_keys(jr, {"t0", "t1", "rate"}, "rate piece");
      RatePiece p{jr.at("t0").get<int>(), jr.at("t1").get<int>(), jr.at("rate").get<double>()};
      require(p.rate >= 0 && p.t1 > p.t0, "flow spec: bad rate piece");
      s.rate.push_back(p);
    }
    for (const auto& jr : js.at("routes")) {
      check_keys(jr, {"turns", "weight"}, "route");
      Route r;
      r.turns = parse_turns(jr.at("turns").get<std::string>(), "flow spec");
      r.weight = jr.value("weight", 1.0);
      require(r.weight > 0, "flow spec: route weight must be positive");
      s.routes.push_back(std::move(r));
    }
    for (const auto& ja : js.value("scheduled", json::array())) {
      check_keys(ja, {"t", "route"}, "scheduled arrival");
      s.scheduled.push_back({ja.at("t").get<int>(), ja.value("route", 0)});
    }
    flow.sources.push_back(std::move(s));
  }
  return flow;
}

std::string flow_spec_json(const FlowSpec& flow) {
  json j;
  j["schema_version"] = 1;
  j["episode_seconds"] = flow.episode_seconds;
  j["sources"] = json::array();
  for (const auto& s : flow.sources) {
    json js;
    js["side"] = approach_name(s.side);
    js["index"] = s.index;
    js["rate"] = json::array();
    for (const auto& p : s.rate) js["rate"].push_back({{"t0", p.t0}, {"t1", p.t1}, {"rate", p.rate}});
    js["routes"] = json::array();
    for (const auto& r : s.routes) js["routes"].push_back({{"turns", turns_string(r.turns)}, {"weight", r.weight}});
    if (!s.scheduled.empty()) {
      js["scheduled"] = json::array();
      for (const auto& a : s.scheduled) js["scheduled"].push_back({{"t", a.t}, {"route", a.route}});
    }
    j["sources"].push_back(std::move(js));
  }
  return j.dump(2) + "\n";
}

NetworkSpec load_network_spec(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), "cannot open: " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return parse_network_spec(text);
  } catch (const json::exception& e) {
    throw ContractViolation("network spec " + path + ": " + e.what());
  }
}

void save_network_spec(const std::string& path, const NetworkSpec& net) { write_json(path, network_spec_json(net)); }

FlowSpec load_flow_spec(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), "cannot open: " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return parse_flow_spec(text);
  } catch (const json::exception& e) {
    throw ContractViolation("flow spec " + path + ": " + e.what());
  }
}

void save_flow_spec(const std::string& path, const FlowSpec& flow) { write_json(path, flow_spec_json(flow)); }

}  // namespace difflight::trafficsim
