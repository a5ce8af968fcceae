#include "everest/engine.hpp"

#include "everest/errors.hpp"
#include "everest/oracle.hpp"

#include <limits>

namespace everest {

Engine::Engine(const ActivationSource& source, IndexManager& manager, ActivationCache* cache, EngineOptions options)
    : source_(source), manager_(manager), cache_(cache), options_(options) {}

EngineAnswer Engine::query(const QuerySpec& spec, InferenceLedger& ledger, ExecutionOptions extra) {
    if (spec.layer.index >= source_.layer_count()) {
        throw LayerOutOfRange("layer " + std::to_string(spec.layer.index) + " out of range");
    }
    validate_query(spec, source_.input_count(), source_.layer_width(spec.layer));

    EngineAnswer answer;
    if (!manager_.is_built(spec.layer)) {
        auto outcome = manager_.ensure_indexed(spec.layer, ledger);
        if (outcome.fullScan) {
            const ActivationMatrix& acts = *outcome.scanned;
            answer.fullScan = true;
            answer.indexed = outcome.built;
            answer.result.entries = brute_force_topk(spec, acts);
            QueryStats& stats = answer.result.stats;
            stats.inputsSeen = acts.rows();
            stats.inputsRun = acts.rows();
            stats.exhausted = true;
            stats.truncated = answer.result.entries.size() < spec.k;
            stats.perNeuronDepth.assign(spec.group.size(), acts.rows());
            stats.finalThreshold = std::numeric_limits<double>::infinity();
            if (extra.onPartial) {
                extra.onPartial(PartialResult{answer.result.entries, stats.finalThreshold, std::nullopt, 1});
            }
            return answer;
        }
    }

    auto npi = manager_.npi(spec.layer);
    auto mai = options_.useMai ? manager_.mai(spec.layer) : nullptr;
    extra.batchSize = options_.batchSize;
    extra.rule = options_.rule;
    extra.mai = mai.get();
    extra.cache = cache_;
    answer.indexed = true;
    answer.result = execute(spec, source_, *npi, ledger, extra);
    return answer;
}

} // namespace everest
