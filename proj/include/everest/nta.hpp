#pragma once

#include "everest/activation_source.hpp"
#include "everest/distance.hpp"
#include "everest/iqa_cache.hpp"
#include "everest/mai.hpp"
#include "everest/npi.hpp"
#include "everest/types.hpp"

#include <atomic>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace everest {

struct QuerySpec {
    InputId target = 0; // ignored in highest mode
    LayerId layer{};
    std::vector<NeuronId> group;
    std::size_t k = 20;
    DistanceFn distance = DistanceFn::l2();
    QueryMode mode = QueryMode::most_similar;
    std::optional<double> theta;
    // Whether the target itself competes for a result slot (at distance 0).
    bool includeTarget = true;
};

// `distance` is the aggregate distance in similarity mode and the activation
// score in highest mode.
struct ResultEntry {
    InputId input = 0;
    double distance = 0.0;

    friend bool operator==(const ResultEntry&, const ResultEntry&) = default;
};

struct QueryStats {
    std::size_t inputsSeen = 0;     // inputs whose activations the query used
    std::size_t inputsRun = 0;      // inputs actually sent to inference
    std::size_t cacheHits = 0;
    std::size_t roundsExecuted = 0; // partition rounds (c + 1 at exit)
    std::size_t maiSteps = 0;       // batches filled from MAI lists
    std::vector<std::size_t> perNeuronDepth;
    double finalThreshold = 0.0;
    std::vector<double> thresholds; // one per round or MAI step
    std::optional<double> thetaAchieved;
    bool stoppedEarly = false;
    bool truncated = false; // k exceeded the number of candidates
    bool exhausted = false; // every partition of every neuron was visited
    std::size_t indexBytesRead = 0;
    std::vector<InputId> inferred; // in inference order
};

struct TopKResult {
    std::vector<ResultEntry> entries;
    QueryStats stats;
};

// Entries confirmed since the previous partial: none of them can be displaced
// any more.
struct PartialResult {
    std::vector<ResultEntry> entries;
    double threshold = 0.0;
    std::optional<double> theta; // guarantee of the current top if stopped now
    std::size_t iteration = 0;
};

enum class ThresholdRule {
    // Lower bound from the next partition in visit order (its dPar).
    partition_bound,
    // Lower bound from the activation range already seen per neuron, with the
    // side flags set once the first or last partition has been visited.
    seen_boundary,
};

struct ExecutionOptions {
    std::size_t batchSize = 64;
    ThresholdRule rule = ThresholdRule::partition_bound;
    const MaximumActivationIndex* mai = nullptr;
    ActivationCache* cache = nullptr;
    const std::atomic<bool>* stop = nullptr;
    // Stop early once this many rounds/MAI steps have run without halting.
    std::optional<std::size_t> stopAfterIterations;
    std::function<void(const PartialResult&)> onPartial;
};

// Validates the spec against a layer of `nInputs` x `width`.
void validate_query(const QuerySpec& spec, std::size_t nInputs, std::size_t width);

// Per-partition distance between the target's activation and the nearest
// edge of each partition; 0 for the target's own partition.
std::vector<double> compute_dpar(const NeuralPartitionIndex& idx, NeuronId neuron, PartitionId targetPid,
                                 float targetAct);

// Visit order: ascending dPar, then distance to the target's partition, then
// partition id.
std::vector<PartitionId> order_partitions(std::span<const double> dPar, PartitionId targetPid);

// Runs one top-k query against an NPI. The source is consulted only for the
// rows the algorithm decides to look at.
TopKResult execute(const QuerySpec& spec, const ActivationSource& source, const NeuralPartitionIndex& idx,
                   InferenceLedger& ledger, const ExecutionOptions& options = {});

} // namespace everest
