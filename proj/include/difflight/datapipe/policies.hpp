#pragma once

#include "difflight/datapipe/episode.hpp"
#include "difflight/rng.hpp"
#include "difflight/trafficsim/simulator.hpp"

namespace difflight::datapipe {

enum class PolicyKind { FixedTime, GreedyQueue, EpsilonGreedyQueue, Random };

const char* policy_name(PolicyKind k);
PolicyKind policy_from_name(const std::string& s);

// Scripted controllers used to build offline datasets. fixed_time cycles
// A->B->C->D one control period each; greedy picks the phase whose two
// movements hold the largest summed queue (ties to the lowest phase index).
trafficsim::Phase decide_policy(PolicyKind kind, const trafficsim::ObservationVector& obs, int control_step,
                                double epsilon, Rng& rng);

Episode run_behavior_policy(const trafficsim::NetworkSpec& net, const trafficsim::FlowSpec& flow, PolicyKind kind,
                            std::uint64_t seed, double epsilon = 0.1);

}  // namespace difflight::datapipe
