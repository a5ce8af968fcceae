#pragma once

#include "everest/activation_source.hpp"
#include "everest/nta.hpp"

#include <cstddef>
#include <utility>
#include <vector>

namespace everest {

// Distance (similarity mode) or score (highest mode) of every candidate, in
// input order. The target is skipped when the spec excludes it.
std::vector<std::pair<InputId, double>> all_candidate_scores(const QuerySpec& spec, const ActivationMatrix& acts);

// Full scan; ties keep the lower input id.
std::vector<ResultEntry> brute_force_topk(const QuerySpec& spec, const ActivationMatrix& acts);

// Per group neuron, every candidate sorted by its per-neuron component:
// ascending |act - target act| in similarity mode, descending clamped
// activation in highest mode. Ties by input id.
struct AbsDiffLists {
    std::vector<std::vector<std::pair<InputId, double>>> lists;
};

AbsDiffLists build_abs_diff_lists(const QuerySpec& spec, const ActivationMatrix& acts);

struct CtaResult {
    std::vector<ResultEntry> entries;
    std::vector<std::size_t> depths; // sequential depth per list at halt
    std::size_t d = 0;               // max depth
};

// Classic threshold algorithm: round-robin sorted access, random access for
// the full distance, threshold = aggregate of the last values seen.
CtaResult cta_reference(const QuerySpec& spec, const ActivationMatrix& acts, const AbsDiffLists& lists);

struct OptimalityReport {
    std::size_t d = 0;
    std::size_t R = 0;
    std::size_t bound = 0;
    std::vector<std::size_t> perNeuronAccessed;
    long long maxExcess = 0; // max(accessed - bound); <= 0 when passing
    bool pass = true;
};

OptimalityReport check_instance_optimality(const QueryStats& ntaStats, const CtaResult& cta, std::size_t R);

// Exact equality of the sorted distance multisets.
bool same_distance_multiset(const std::vector<ResultEntry>& a, const std::vector<ResultEntry>& b);

// theta * dist(y) <= dist(z) for every returned y and excluded z (scores are
// compared the other way round in highest mode). Returns the number of
// violating pairs.
std::size_t count_theta_violations(const QuerySpec& spec, const std::vector<ResultEntry>& returned,
                                   const ActivationMatrix& acts, double theta);

} // namespace everest
