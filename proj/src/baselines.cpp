#include "everest/baselines.hpp"

#include "everest/errors.hpp"
#include "everest/oracle.hpp"

#include <algorithm>
#include <numeric>

namespace everest {

namespace {

std::vector<InputId> all_inputs(const ActivationSource& source) {
    std::vector<InputId> ids(source.input_count());
    std::iota(ids.begin(), ids.end(), InputId{0});
    return ids;
}

void check_spec(const ActivationSource& source, const QuerySpec& spec) {
    if (spec.layer.index >= source.layer_count()) {
        throw LayerOutOfRange("layer " + std::to_string(spec.layer.index) + " out of range");
    }
    validate_query(spec, source.input_count(), source.layer_width(spec.layer));
}

} // namespace

PreprocessAll::PreprocessAll(const ActivationSource& source, std::size_t batchSize)
    : source_(source), batchSize_(batchSize) {}

void PreprocessAll::prepare(InferenceLedger& ledger) {
    std::vector<LayerId> layers;
    for (std::uint32_t l = 0; l < source_.layer_count(); ++l) layers.emplace_back(l);
    const auto ids = all_inputs(source_);
    layers_ = source_.infer_layers(layers, ids, batchSize_, ledger);
    stored_ = full_materialization_bytes(source_);
}

StrategyAnswer PreprocessAll::answer(const QuerySpec& spec, InferenceLedger&) {
    check_spec(source_, spec);
    if (layers_.empty()) {
        throw ContractViolation("PreprocessAll::prepare must run before the first query");
    }
    return {brute_force_topk(spec, layers_[spec.layer.index]), layer_bytes(source_, spec.layer)};
}

ReprocessAll::ReprocessAll(const ActivationSource& source, std::size_t batchSize)
    : source_(source), batchSize_(batchSize) {}

StrategyAnswer ReprocessAll::answer(const QuerySpec& spec, InferenceLedger& ledger) {
    check_spec(source_, spec);
    const auto ids = all_inputs(source_);
    return {brute_force_topk(spec, source_.infer_layer(spec.layer, ids, batchSize_, ledger)), 0};
}

LruLayerCache::LruLayerCache(const ActivationSource& source, std::size_t batchSize, std::uint64_t budgetBytes)
    : source_(source), batchSize_(batchSize), budget_(budgetBytes) {}

StrategyAnswer LruLayerCache::answer(const QuerySpec& spec, InferenceLedger& ledger) {
    check_spec(source_, spec);
    const std::uint32_t l = spec.layer.index;
    if (auto it = layers_.find(l); it != layers_.end()) {
        recency_.remove(l);
        recency_.push_front(l);
        return {brute_force_topk(spec, it->second), layer_bytes(source_, spec.layer)};
    }
    const auto ids = all_inputs(source_);
    ActivationMatrix acts = source_.infer_layer(spec.layer, ids, batchSize_, ledger);
    StrategyAnswer out{brute_force_topk(spec, acts), 0};

    const std::uint64_t bytes = layer_bytes(source_, spec.layer);
    if (bytes <= budget_) {
        while (stored_ + bytes > budget_) {
            const std::uint32_t victim = recency_.back();
            recency_.pop_back();
            stored_ -= layer_bytes(source_, LayerId(victim));
            layers_.erase(victim);
        }
        layers_.emplace(l, std::move(acts));
        recency_.push_front(l);
        stored_ += bytes;
    }
    return out;
}

std::vector<LayerId> LruLayerCache::cached_layers() const {
    std::vector<LayerId> out;
    for (std::uint32_t l : recency_) out.emplace_back(l);
    return out;
}

std::vector<LayerPriority> layer_priorities(const ActivationSource& source, double scanUnitsPerByte) {
    std::vector<LayerPriority> out;
    for (std::uint32_t l = 0; l < source.layer_count(); ++l) {
        const LayerId layer(l);
        const double bytes = static_cast<double>(layer_bytes(source, layer));
        const double recompute = static_cast<double>(source.input_count()) * source.layer_depth(layer);
        const double saved = recompute - bytes * scanUnitsPerByte;
        out.push_back({layer, bytes > 0 ? std::max(0.0, saved / bytes) : 0.0});
    }
    return out;
}

std::vector<LayerId> select_priority_layers(const ActivationSource& source, std::uint64_t budgetBytes,
                                            double scanUnitsPerByte) {
    auto priorities = layer_priorities(source, scanUnitsPerByte);
    std::ranges::stable_sort(priorities, [](const LayerPriority& a, const LayerPriority& b) {
        return a.savedCostPerByte > b.savedCostPerByte;
    });
    std::vector<LayerId> chosen;
    std::uint64_t used = 0;
    for (const auto& p : priorities) {
        if (p.savedCostPerByte <= 0.0) continue;
        const std::uint64_t bytes = layer_bytes(source, p.layer);
        if (used + bytes > budgetBytes) continue;
        used += bytes;
        chosen.push_back(p.layer);
    }
    return chosen;
}

PriorityLayerCache::PriorityLayerCache(const ActivationSource& source, std::size_t batchSize,
                                       std::uint64_t budgetBytes, double scanUnitsPerByte)
    : source_(source), batchSize_(batchSize), budget_(budgetBytes), scanUnitsPerByte_(scanUnitsPerByte) {}

void PriorityLayerCache::prepare(InferenceLedger& ledger) {
    selected_ = select_priority_layers(source_, budget_, scanUnitsPerByte_);
    if (selected_.empty()) return;
    const auto ids = all_inputs(source_);
    auto mats = source_.infer_layers(selected_, ids, batchSize_, ledger);
    for (std::size_t i = 0; i < selected_.size(); ++i) {
        stored_ += layer_bytes(source_, selected_[i]);
        layers_.emplace(selected_[i].index, std::move(mats[i]));
    }
}

StrategyAnswer PriorityLayerCache::answer(const QuerySpec& spec, InferenceLedger& ledger) {
    check_spec(source_, spec);
    if (auto it = layers_.find(spec.layer.index); it != layers_.end()) {
        return {brute_force_topk(spec, it->second), layer_bytes(source_, spec.layer)};
    }
    const auto ids = all_inputs(source_);
    return {brute_force_topk(spec, source_.infer_layer(spec.layer, ids, batchSize_, ledger)), 0};
}

IncrementalIndexStrategy::IncrementalIndexStrategy(const ActivationSource& source, IndexManagerOptions indexOptions,
                                         EngineOptions engineOptions, std::size_t iqaBudgetBytes)
    : manager_(source, std::move(indexOptions)),
      cache_(iqaBudgetBytes > 0 ? std::make_unique<ActivationCache>(iqaBudgetBytes) : nullptr),
      engine_(source, manager_, cache_.get(), engineOptions) {}

StrategyAnswer IncrementalIndexStrategy::answer(const QuerySpec& spec, InferenceLedger& ledger) {
    EngineAnswer a = engine_.query(spec, ledger);
    last_ = a.result;
    return {a.result.entries, a.fullScan ? 0 : a.result.stats.indexBytesRead};
}

} // namespace everest
