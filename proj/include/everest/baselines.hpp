#pragma once

#include "everest/activation_source.hpp"
#include "everest/engine.hpp"
#include "everest/nta.hpp"
#include "everest/storage.hpp"

#include <cstdint>
#include <list>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace everest {

struct StrategyAnswer {
    std::vector<ResultEntry> entries;
    std::uint64_t bytesRead = 0; // simulated disk reads for this query
};

// One way of answering a stream of queries. Inference is charged to the
// ledger passed in; storage is simulated and reported through bytes_stored().
class Strategy {
public:
    virtual ~Strategy() = default;

    virtual std::string name() const = 0;
    // One-time work before the first query (charged to `ledger`).
    virtual void prepare(InferenceLedger& ledger) { (void)ledger; }
    virtual StrategyAnswer answer(const QuerySpec& spec, InferenceLedger& ledger) = 0;
    virtual std::uint64_t bytes_stored() const = 0;
};

// Stores every layer's activations up front.
class PreprocessAll final : public Strategy {
public:
    PreprocessAll(const ActivationSource& source, std::size_t batchSize);

    std::string name() const override { return "preprocess"; }
    void prepare(InferenceLedger& ledger) override;
    StrategyAnswer answer(const QuerySpec& spec, InferenceLedger& ledger) override;
    std::uint64_t bytes_stored() const override { return stored_; }

private:
    const ActivationSource& source_;
    std::size_t batchSize_;
    std::vector<ActivationMatrix> layers_;
    std::uint64_t stored_ = 0;
};

// Recomputes the queried layer for every input on every query.
class ReprocessAll final : public Strategy {
public:
    ReprocessAll(const ActivationSource& source, std::size_t batchSize);

    std::string name() const override { return "reprocess"; }
    StrategyAnswer answer(const QuerySpec& spec, InferenceLedger& ledger) override;
    std::uint64_t bytes_stored() const override { return 0; }

private:
    const ActivationSource& source_;
    std::size_t batchSize_;
};

// Disk cache of whole layers with least-recently-used eviction.
class LruLayerCache final : public Strategy {
public:
    LruLayerCache(const ActivationSource& source, std::size_t batchSize, std::uint64_t budgetBytes);

    std::string name() const override { return "lru"; }
    StrategyAnswer answer(const QuerySpec& spec, InferenceLedger& ledger) override;
    std::uint64_t bytes_stored() const override { return stored_; }

    std::vector<LayerId> cached_layers() const; // most recent first

private:
    const ActivationSource& source_;
    std::size_t batchSize_;
    std::uint64_t budget_;
    std::uint64_t stored_ = 0;
    std::list<std::uint32_t> recency_; // front = most recently used
    std::map<std::uint32_t, ActivationMatrix> layers_;
};

struct LayerPriority {
    LayerId layer{};
    double savedCostPerByte = 0.0;
};

// Proxy cost model: recomputing a layer costs nInputs * depth units, reading
// it back costs bytes * scanUnitsPerByte units. Every layer is assumed to be
// queried equally often.
std::vector<LayerPriority> layer_priorities(const ActivationSource& source, double scanUnitsPerByte);

// Greedy pick by savedCostPerByte (ties by layer id) while the budget allows.
std::vector<LayerId> select_priority_layers(const ActivationSource& source, std::uint64_t budgetBytes,
                                            double scanUnitsPerByte);

// Stores the layers chosen by the cost model ahead of time.
class PriorityLayerCache final : public Strategy {
public:
    static constexpr double kDefaultScanUnitsPerByte = 1.0 / 4096.0;

    PriorityLayerCache(const ActivationSource& source, std::size_t batchSize, std::uint64_t budgetBytes,
                       double scanUnitsPerByte = kDefaultScanUnitsPerByte);

    std::string name() const override { return "priority"; }
    void prepare(InferenceLedger& ledger) override;
    StrategyAnswer answer(const QuerySpec& spec, InferenceLedger& ledger) override;
    std::uint64_t bytes_stored() const override { return stored_; }

    const std::vector<LayerId>& selected() const noexcept { return selected_; }

private:
    const ActivationSource& source_;
    std::size_t batchSize_;
    std::uint64_t budget_;
    double scanUnitsPerByte_;
    std::vector<LayerId> selected_;
    std::map<std::uint32_t, ActivationMatrix> layers_;
    std::uint64_t stored_ = 0;
};

// NPI/MAI with incremental indexing, answered through an Engine.
class IncrementalIndexStrategy final : public Strategy {
public:
    IncrementalIndexStrategy(const ActivationSource& source, IndexManagerOptions indexOptions,
                        EngineOptions engineOptions = {}, std::size_t iqaBudgetBytes = 0);

    std::string name() const override { return "everest"; }
    StrategyAnswer answer(const QuerySpec& spec, InferenceLedger& ledger) override;
    std::uint64_t bytes_stored() const override { return manager_.bytes_on_disk(); }

    IndexManager& manager() noexcept { return manager_; }
    const TopKResult& last_result() const noexcept { return last_; }

private:
    IndexManager manager_;
    std::unique_ptr<ActivationCache> cache_;
    Engine engine_;
    TopKResult last_;
};

} // namespace everest
