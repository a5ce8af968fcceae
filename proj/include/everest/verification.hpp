#pragma once

#include "everest/nta.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace everest {

struct VerificationOptions {
    std::size_t queries = 500;
    std::uint64_t seed = 42;
    std::size_t nInputs = 1000;
    std::vector<std::size_t> layerWidths = {32, 64, 128, 256};
    std::size_t batchSize = 16;
    ThresholdRule rule = ThresholdRule::partition_bound;
};

struct VerificationFailure {
    std::size_t queryIdx = 0;
    std::string kind; // "oracle" or "bound"
    std::string detail;
};

struct VerificationReport {
    std::size_t queries = 0;
    std::size_t oracleMismatches = 0;
    std::size_t boundChecks = 0;
    std::size_t boundViolations = 0;
    long long maxExcess = 0; // largest (accessed - (d + 2R)) seen
    std::size_t maiQueries = 0;
    std::size_t iqaQueries = 0;
    std::size_t highestQueries = 0;
    std::vector<VerificationFailure> failures;
};

// Seeded random queries over a synthetic model, mixing group sizes 1/3/10,
// top/rand-high groups, both modes, l1/l2/linf, MAI and IQA on/off, and
// several partition counts. Each query is compared with brute force; each is
// also re-run without MAI and IQA and its per-neuron accesses checked against
// the classic threshold algorithm's depth plus two partitions.
VerificationReport run_verification(const VerificationOptions& options);

} // namespace everest
