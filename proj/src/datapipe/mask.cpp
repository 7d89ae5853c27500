#include "difflight/datapipe/mask.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numeric>

namespace difflight::datapipe {

using nlohmann::json;
using trafficsim::GridTopology;

const char* mask_pattern_name(MaskPattern p) { return p == MaskPattern::RM ? "rm" : "km"; }

MaskPattern mask_pattern_from_name(const std::string& s) {
  if (s == "rm") return MaskPattern::RM;
  if (s == "km") return MaskPattern::KM;
  throw ContractViolation("unknown missing pattern '" + s + "'");
}

double MaskSet::masked_fraction() const {
  if (cells.empty()) return 0;
  long miss = 0;
  for (auto c : cells) miss += (c == 0);
  return static_cast<double>(miss) / static_cast<double>(cells.size());
}

bool MaskSet::intersection_masked(int inter) const {
  for (int s = 0; s < n_steps; ++s)
    if (observed(inter, s)) return false;
  return true;
}

namespace {

std::vector<int> grid_neighbors(const GridTopology& topo, int id) {
  std::vector<int> out;
  for (int a = 0; a < 4; ++a) {
    auto n = topo.neighbor(id, static_cast<trafficsim::Approach>(a));
    if (n) out.push_back(*n);
  }
  return out;
}

std::vector<int> pick_km_intersections(const GridTopology& topo, int count, KmAdjacency adjacency, Rng& rng) {
  const int n = topo.n();
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  std::vector<std::uint8_t> masked(static_cast<size_t>(n), 0);
  std::vector<int> picked;

  if (adjacency == KmAdjacency::Adjacent) {
    // at least one masked intersection must have every neighbor masked
    int center = -1;
    for (int id : order) {
      if (1 + static_cast<int>(grid_neighbors(topo, id).size()) <= count) {
        center = id;
        break;
      }
    }
    require(center >= 0, "km mask: adjacent variant needs rate covering an intersection plus all its neighbors");
    masked[static_cast<size_t>(center)] = 1;
    picked.push_back(center);
    for (int nb : grid_neighbors(topo, center)) {
      masked[static_cast<size_t>(nb)] = 1;
      picked.push_back(nb);
    }
  }

  // spread pass: prefer intersections whose neighbors are all observable
  for (int id : order) {
    if (static_cast<int>(picked.size()) >= count) break;
    if (masked[static_cast<size_t>(id)]) continue;
    bool clean = true;
    for (int nb : grid_neighbors(topo, id)) clean = clean && !masked[static_cast<size_t>(nb)];
    if (clean) {
      masked[static_cast<size_t>(id)] = 1;
      picked.push_back(id);
    }
  }
  // fill pass when spreading is impossible at this rate
  for (int id : order) {
    if (static_cast<int>(picked.size()) >= count) break;
    if (!masked[static_cast<size_t>(id)]) {
      masked[static_cast<size_t>(id)] = 1;
      picked.push_back(id);
    }
  }
  return picked;
}

}  // namespace

MaskSet generate_mask(const trafficsim::NetworkSpec& net, int n_steps, MaskPattern pattern, double rate,
                      std::uint64_t seed, KmAdjacency km_adjacency) {
  require(rate >= 0.0 && rate <= 1.0, "mask rate must be in [0,1]");
  require(n_steps > 0, "mask needs a positive number of control steps");
  const int n = net.n_intersections();
  MaskSet m;
  m.pattern = pattern;
  m.rate = rate;
  m.seed = seed;
  m.km_adjacency = km_adjacency;
  m.topology_hash = trafficsim::topology_hash(net);
  m.n_intersections = n;
  m.n_steps = n_steps;
  m.cells.assign(static_cast<size_t>(n) * static_cast<size_t>(n_steps), 1);

  Rng rng = Rng(seed).fork("mask");
  if (pattern == MaskPattern::RM) {
    for (int i = 0; i < n; ++i)
      for (int s = 0; s < n_steps; ++s)
        if (rng.bernoulli(rate)) m.cells[static_cast<size_t>(i) * static_cast<size_t>(n_steps) + static_cast<size_t>(s)] = 0;
  } else {
    const double exact = rate * n;
    const int count = static_cast<int>(std::llround(exact));
    require(std::abs(exact - count) < 1e-6,
            "km mask: rate " + std::to_string(rate) + " does not correspond to a whole number of intersections");
    GridTopology topo(net.rows, net.cols);
    auto picked = pick_km_intersections(topo, count, km_adjacency, rng);
    for (int id : picked)
      for (int s = 0; s < n_steps; ++s)
        m.cells[static_cast<size_t>(id) * static_cast<size_t>(n_steps) + static_cast<size_t>(s)] = 0;
  }
  return m;
}

std::string mask_json(const MaskSet& mask) {
  json j;
  j["schema_version"] = 1;
  j["pattern"] = mask_pattern_name(mask.pattern);
  j["rate"] = mask.rate;
  j["seed"] = mask.seed;
  j["km_adjacency"] = mask.km_adjacency == KmAdjacency::Spread ? "spread" : "adjacent";
  j["topology_hash"] = mask.topology_hash;
  j["n_intersections"] = mask.n_intersections;
  j["n_steps"] = mask.n_steps;
  std::vector<std::string> rows;
  for (int i = 0; i < mask.n_intersections; ++i) {
    std::string row(static_cast<size_t>(mask.n_steps), '0');
    for (int s = 0; s < mask.n_steps; ++s)
      if (mask.observed(i, s)) row[static_cast<size_t>(s)] = '1';
    rows.push_back(std::move(row));
  }
  j["cells"] = rows;
  return j.dump(2) + "\n";
}

MaskSet parse_mask(const std::string& json_text) {
  json j = json::parse(json_text);
  require(j.value("schema_version", 0) == 1, "mask file: unsupported schema_version");
  MaskSet m;
  m.pattern = mask_pattern_from_name(j.at("pattern").get<std::string>());
  m.rate = j.at("rate").get<double>();
  m.seed = j.at("seed").get<std::uint64_t>();
  const std::string adj = j.value("km_adjacency", "spread");
  m.km_adjacency = adj == "adjacent" ? KmAdjacency::Adjacent : KmAdjacency::Spread;
  m.topology_hash = j.at("topology_hash").get<std::string>();
  m.n_intersections = j.at("n_intersections").get<int>();
  m.n_steps = j.at("n_steps").get<int>();
  auto rows = j.at("cells").get<std::vector<std::string>>();
  require(static_cast<int>(rows.size()) == m.n_intersections, "mask file: row count mismatch");
  m.cells.assign(static_cast<size_t>(m.n_intersections) * static_cast<size_t>(m.n_steps), 0);
  for (int i = 0; i < m.n_intersections; ++i) {
    require(static_cast<int>(rows[static_cast<size_t>(i)].size()) == m.n_steps, "mask file: row length mismatch");
    for (int s = 0; s < m.n_steps; ++s)
      if (rows[static_cast<size_t>(i)][static_cast<size_t>(s)] == '1')
        m.cells[static_cast<size_t>(i) * static_cast<size_t>(m.n_steps) + static_cast<size_t>(s)] = 1;
  }
  return m;
}

void save_mask(const std::string& path, const MaskSet& mask) {
  std::ofstream f(path);
  require(f.good(), "cannot open for writing: " + path);
  f << mask_json(mask);
  require(f.good(), "write failed: " + path);
}

MaskSet load_mask(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), "cannot open: " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_mask(text);
}

}  // namespace difflight::datapipe
