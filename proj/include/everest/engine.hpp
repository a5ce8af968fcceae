#pragma once

#include "everest/activation_source.hpp"
#include "everest/iqa_cache.hpp"
#include "everest/nta.hpp"
#include "everest/storage.hpp"

namespace everest {

struct EngineOptions {
    std::size_t batchSize = 64;
    ThresholdRule rule = ThresholdRule::partition_bound;
    bool useMai = true;
};

struct EngineAnswer {
    TopKResult result;
    bool fullScan = false; // answered from a full scan of the layer
    bool indexed = false;  // the layer's indexes exist after the query
};

// Query front door: answers from the layer's indexes when they exist,
// otherwise scans the layer once, answers from the scan and lets the index
// manager persist indexes for the next query.
class Engine {
public:
    Engine(const ActivationSource& source, IndexManager& manager, ActivationCache* cache = nullptr,
           EngineOptions options = {});

    // `extra` supplies streaming/stop hooks; its index, cache and batch
    // fields are overridden by the engine's own.
    EngineAnswer query(const QuerySpec& spec, InferenceLedger& ledger, ExecutionOptions extra = {});

    const ActivationSource& source() const noexcept { return source_; }
    IndexManager& manager() noexcept { return manager_; }
    ActivationCache* cache() noexcept { return cache_; }
    const EngineOptions& options() const noexcept { return options_; }

private:
    const ActivationSource& source_;
    IndexManager& manager_;
    ActivationCache* cache_;
    EngineOptions options_;
};

} // namespace everest
