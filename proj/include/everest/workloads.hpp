#pragma once

#include "everest/activation_source.hpp"
#include "everest/baselines.hpp"
#include "everest/nta.hpp"
#include "everest/synthetic_model.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace everest {

enum class WorkloadKind { w1, w2, w3, iqa_seq };
enum class GroupKind { top, rand_high };

WorkloadKind parse_workload(std::string_view s);
std::string_view to_string(WorkloadKind k);

struct TransitionProbabilities {
    double pSame = 0.0;
    double pPrev = 0.0;
    double pNew = 0.0;
};

// w1 / w2 layer-transition probabilities; w3 and iqa_seq have none.
TransitionProbabilities transition_probabilities(WorkloadKind kind);

struct WorkloadSpec {
    WorkloadKind kind = WorkloadKind::w1;
    std::size_t queries = 100;
    std::uint64_t seed = 1;
    std::size_t k = 20;
    std::size_t groupSize = 3;
    // Sequence shape for iqa_seq.
    std::size_t nSize = 5;
    std::size_t nReplace = 1;
    DistanceFn distance = DistanceFn::l2();
};

// Neurons with a positive activation for the row, strongest first, cut to
// the upper half (rounded up).
std::vector<NeuronId> rand_high_pool(std::span<const float> row);

// `size` distinct neurons: the strongest ones (top) or a random draw from the
// rand-high pool (rand_high). Short pools are topped up with the strongest
// remaining neurons.
std::vector<NeuronId> pick_group(GroupKind kind, std::span<const float> row, std::size_t size, XorShift64Star& rng);

// Seeded query stream. Choosing neuron groups needs the target's
// activations; that inference is charged to `generationLedger`.
std::vector<QuerySpec> generate_workload(const WorkloadSpec& spec, const ActivationSource& source,
                                         InferenceLedger& generationLedger);

// One most-similar query on a random target with a group of `kind`.
QuerySpec make_query(const ActivationSource& source, LayerId layer, GroupKind kind, std::size_t groupSize,
                     std::size_t k, XorShift64Star& rng, InferenceLedger& generationLedger);

struct HarnessRow {
    std::size_t queryIdx = 0;
    std::string strategy;
    std::uint64_t inferenceUnits = 0;
    std::uint64_t inputsRun = 0;
    std::uint64_t bytesRead = 0;
    std::uint64_t bytesStored = 0;
    std::uint64_t cumulativeUnits = 0;
    std::uint64_t resultHash = 0;
};

// Hash of the sorted result distances; equal for answers that differ only in
// how ties were broken.
std::uint64_t result_hash(const std::vector<ResultEntry>& entries);

// Runs every query through every strategy. Each strategy's preparation cost
// is charged to its query-0 row. Rows are ordered by query, then strategy.
std::vector<HarnessRow> run_harness(const std::vector<QuerySpec>& queries, std::span<Strategy* const> strategies);

void write_harness_csv(std::ostream& out, const std::vector<HarnessRow>& rows);

} // namespace everest
