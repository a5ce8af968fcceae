#pragma once

#include "everest/activation_source.hpp"
#include "everest/mai.hpp"
#include "everest/npi.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace everest {

struct Configuration {
    std::uint32_t nPartitions = 0;
    float ratio = 0.0f;
    std::size_t batchSize = 1;

    friend bool operator==(const Configuration&, const Configuration&) = default;
};

// nPartitions: the largest power of two >= 2 with
//   nPartitions <= nInputs / batchSize  and  nNeurons * nInputs * log2(nPartitions) bits < budget.
// ratio: the largest value whose MAI (8 bytes per entry) fits in what is
// left, capped at 1. Throws ConfigError when no partition count fits.
Configuration select_configuration(std::uint64_t budgetBytes, std::size_t nInputs, std::size_t nNeurons,
                                   std::size_t batchSize);

// Bytes needed to store every activation of every layer as f32.
std::uint64_t full_materialization_bytes(const ActivationSource& source);
std::uint64_t layer_bytes(const ActivationSource& source, LayerId layer);

enum class LayerState { absent, built };

std::string_view to_string(LayerState s);

struct CatalogEntry {
    LayerId layer{};
    LayerState state = LayerState::absent;
    std::filesystem::path npiPath;
    std::filesystem::path maiPath;
    std::uint64_t bytes = 0;
    Configuration config;
};

struct IndexManagerOptions {
    std::filesystem::path directory;
    std::uint64_t budgetBytes = 0; // across all layers
    std::size_t batchSize = 64;
    bool useMai = true;
};

// Builds layer indexes the first time a layer is queried and keeps them on
// disk under a global budget. Layers are indexed first come, first served;
// indexes are never evicted. Each layer's configuration is selected from its
// proportional share of the budget.
class IndexManager {
public:
    IndexManager(const ActivationSource& source, IndexManagerOptions options);

    struct EnsureOutcome {
        bool fullScan = false; // the layer was scanned; `scanned` holds it
        bool built = false;    // indexes are available after the call
        std::optional<ActivationMatrix> scanned;
    };

    // No-op for built layers. Otherwise runs inference on every input,
    // builds and persists NPI + MAI if they fit the budget, and hands the
    // scanned matrix back so the pending query can be answered from it.
    EnsureOutcome ensure_indexed(LayerId layer, InferenceLedger& ledger);

    bool is_built(LayerId layer) const;
    // Loaded lazily from disk and kept in memory.
    std::shared_ptr<const NeuralPartitionIndex> npi(LayerId layer);
    std::shared_ptr<const MaximumActivationIndex> mai(LayerId layer);

    std::vector<CatalogEntry> catalog() const;
    std::uint64_t bytes_on_disk() const;
    std::uint64_t budget_bytes() const noexcept { return options_.budgetBytes; }
    std::uint64_t layer_budget(LayerId layer) const;
    const IndexManagerOptions& options() const noexcept { return options_; }
    std::filesystem::path manifest_path() const { return options_.directory / "catalog.json"; }

    // Configuration that fits the layer's share including file headers and
    // partition bounds; nullopt if none does.
    std::optional<Configuration> fit_configuration(LayerId layer) const;

private:
    void load_manifest();
    void write_manifest_locked() const;
    std::uint64_t bytes_on_disk_locked() const;

    const ActivationSource& source_;
    IndexManagerOptions options_;
    mutable std::mutex mu_;
    std::vector<CatalogEntry> entries_;
    std::map<std::uint32_t, std::shared_ptr<const NeuralPartitionIndex>> npiCache_;
    std::map<std::uint32_t, std::shared_ptr<const MaximumActivationIndex>> maiCache_;
};

} // namespace everest
