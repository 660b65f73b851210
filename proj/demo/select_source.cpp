// Picks the most transferable of three synthetic sources for one target task
// and prints each candidate's F-OTCE and JC-OTCE.

#include <cstdio>
#include <vector>

#include "otce/otce.hpp"

int main() {
  // The target is the clean task; candidates are increasingly corrupted copies.
  std::vector<otce::ScoredPair> candidates;
  const otce::FeatureSet target = otce::synth::generate_task_pair({3, 4, 40, 4.0, 0.0, 0.0, 7}).source;
  for (double noise : {0.0, 0.3, 0.6}) {
    otce::synth::SyntheticTaskSpec spec{3, 4, 40, 4.0, 1.0, noise, 7};
    const otce::FeatureSet source = otce::synth::generate_task_pair(spec).target;
    const auto f = otce::f_otce(source, target);
    const auto jc = otce::jc_otce(source, target);
    char id[32];
    std::snprintf(id, sizeof id, "noise-%.1f", noise);
    std::printf("%-10s  F-OTCE % .4f  JC-OTCE % .4f\n", id, f.value, jc.value);
    candidates.push_back({id, f.value, {}});
  }
  const auto ranked = otce::rank_sources(candidates);
  std::printf("best source: %s\n", ranked.front().task_id.c_str());
}
