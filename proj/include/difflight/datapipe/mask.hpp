#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "difflight/rng.hpp"
#include "difflight/trafficsim/network.hpp"

namespace difflight::datapipe {

enum class MaskPattern { RM, KM };
enum class KmAdjacency { Spread, Adjacent };

const char* mask_pattern_name(MaskPattern p);
MaskPattern mask_pattern_from_name(const std::string& s);

// Sensor availability per (intersection, control step); observation and
// reward of a cell go missing simultaneously. RM: i.i.d. Bernoulli(rate)
// dropouts. KM: whole intersections permanently unobserved.
struct MaskSet {
  MaskPattern pattern = MaskPattern::RM;
  double rate = 0;
  std::uint64_t seed = 0;
  KmAdjacency km_adjacency = KmAdjacency::Spread;
  std::string topology_hash;
  int n_intersections = 0;
  int n_steps = 0;
  std::vector<std::uint8_t> cells;  // [inter * n_steps + step], 1 = observed

  bool observed(int inter, int step) const {
    return cells[static_cast<size_t>(inter) * static_cast<size_t>(n_steps) + static_cast<size_t>(step)] != 0;
  }
  double masked_fraction() const;
  // For KM masks: true if the whole intersection is unobserved.
  bool intersection_masked(int inter) const;
};

MaskSet generate_mask(const trafficsim::NetworkSpec& net, int n_steps, MaskPattern pattern, double rate,
                      std::uint64_t seed, KmAdjacency km_adjacency = KmAdjacency::Spread);

std::string mask_json(const MaskSet& mask);
MaskSet parse_mask(const std::string& json_text);
void save_mask(const std::string& path, const MaskSet& mask);
MaskSet load_mask(const std::string& path);

}  // namespace difflight::datapipe
