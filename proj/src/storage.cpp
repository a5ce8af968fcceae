#include "everest/storage.hpp"

#include "everest/errors.hpp"
#include "everest/formats.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <fstream>
#include <numeric>

namespace everest {

using nlohmann::json;

Configuration select_configuration(std::uint64_t budgetBytes, std::size_t nInputs, std::size_t nNeurons,
                                   std::size_t batchSize) {
    if (batchSize == 0) {
        throw ContractViolation("batchSize must be >= 1");
    }
    if (nInputs == 0 || nNeurons == 0) {
        throw ConfigError("cannot index an empty layer");
    }
    const std::uint64_t budgetBits = budgetBytes * 8;
    const std::uint64_t cells = static_cast<std::uint64_t>(nInputs) * nNeurons;
    const std::uint64_t maxByBatch = nInputs / batchSize;

    std::uint32_t chosen = 0;
    std::uint64_t chosenBits = 0;
    for (unsigned bits = 1; bits <= 24; ++bits) {
        const std::uint64_t nPartitions = std::uint64_t{1} << bits;
        if (nPartitions > maxByBatch) break;
        const std::uint64_t costBits = cells * bits;
        if (costBits < budgetBits) {
            chosen = static_cast<std::uint32_t>(nPartitions);
            chosenBits = costBits;
        }
    }
    if (chosen == 0) {
        throw ConfigError("storage budget of " + std::to_string(budgetBytes) + " bytes cannot hold an NPI with 2 partitions for " +
                          std::to_string(nInputs) + " inputs x " + std::to_string(nNeurons) + " neurons at batch size " +
                          std::to_string(batchSize));
    }
    // Remaining bits / (cells * 8 bytes * 8 bits).
    const double ratio = static_cast<double>(budgetBits - chosenBits) / (static_cast<double>(cells) * 64.0);
    return {chosen, static_cast<float>(std::min(1.0, ratio)), batchSize};
}

std::uint64_t layer_bytes(const ActivationSource& source, LayerId layer) {
    return static_cast<std::uint64_t>(source.input_count()) * source.layer_width(layer) * sizeof(float);
}

std::uint64_t full_materialization_bytes(const ActivationSource& source) {
    std::uint64_t total = 0;
    for (std::uint32_t l = 0; l < source.layer_count(); ++l) {
        total += layer_bytes(source, LayerId(l));
    }
    return total;
}

std::string_view to_string(LayerState s) {
    return s == LayerState::built ? "built" : "absent";
}

IndexManager::IndexManager(const ActivationSource& source, IndexManagerOptions options)
    : source_(source), options_(std::move(options)) {
    if (options_.batchSize == 0) {
        throw ContractViolation("batchSize must be >= 1");
    }
    std::error_code ec;
    std::filesystem::create_directories(options_.directory, ec);
    if (ec) {
        throw IoError("cannot create index directory " + options_.directory.string() + ": " + ec.message());
    }
    entries_.resize(source_.layer_count());
    for (std::uint32_t l = 0; l < entries_.size(); ++l) {
        entries_[l].layer = LayerId(l);
    }
    load_manifest();
}

void IndexManager::load_manifest() {
    const auto path = manifest_path();
    if (!std::filesystem::exists(path)) return;
    json doc;
    try {
        std::ifstream in(path);
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw IoError("unreadable catalog " + path.string() + ": " + e.what());
    }
    for (const auto& item : doc.value("layers", json::array())) {
        const auto l = item.at("layerId").get<std::uint32_t>();
        if (l >= entries_.size() || item.value("state", "absent") != "built") continue;
        CatalogEntry e;
        e.layer = LayerId(l);
        e.npiPath = item.value("npiPath", "");
        e.maiPath = item.value("maiPath", "");
        e.bytes = item.value("bytes", std::uint64_t{0});
        e.config.nPartitions = item.value("nPartitions", 0u);
        e.config.ratio = item.value("ratio", 0.0f);
        e.config.batchSize = item.value("batchSize", options_.batchSize);
        std::uint64_t onDisk = 0;
        bool intact = true;
        for (const auto& p : {e.npiPath, e.maiPath}) {
            if (p.empty()) continue;
            std::error_code ec;
            const auto size = std::filesystem::file_size(p, ec);
            if (ec) {
                intact = false;
                break;
            }
            onDisk += size;
        }
        if (!intact || onDisk != e.bytes) continue;
        e.state = LayerState::built;
        entries_[l] = std::move(e);
    }
}

void IndexManager::write_manifest_locked() const {
    json layers = json::array();
    for (const auto& e : entries_) {
        layers.push_back({{"layerId", e.layer.index},
                          {"state", std::string(to_string(e.state))},
                          {"npiPath", e.npiPath.string()},
                          {"maiPath", e.maiPath.string()},
                          {"bytes", e.bytes},
                          {"nPartitions", e.config.nPartitions},
                          {"ratio", e.config.ratio},
                          {"batchSize", e.config.batchSize}});
    }
    const json doc = {{"version", 1}, {"budgetBytes", options_.budgetBytes}, {"layers", layers}};
    const std::string text = doc.dump(2);
    const auto tmp = manifest_path().string() + ".tmp";
    write_file_bytes(tmp, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
    std::error_code ec;
    std::filesystem::rename(tmp, manifest_path(), ec);
    if (ec) {
        throw IoError("cannot replace catalog " + manifest_path().string() + ": " + ec.message());
    }
}

std::uint64_t IndexManager::layer_budget(LayerId layer) const {
    const std::uint64_t full = full_materialization_bytes(source_);
    if (full == 0) return 0;
    const long double share = static_cast<long double>(options_.budgetBytes) * layer_bytes(source_, layer) / full;
    return static_cast<std::uint64_t>(share);
}

std::optional<Configuration> IndexManager::fit_configuration(LayerId layer) const {
    const std::uint64_t share = layer_budget(layer);
    const std::size_t nInputs = source_.input_count();
    const std::size_t nNeurons = source_.layer_width(layer);
    // The selection formula ignores file headers and partition bounds, so
    // search for the largest formula budget whose real files fit the share.
    const auto fitting = [&](std::uint64_t target) -> std::optional<Configuration> {
        Configuration c;
        try {
            c = select_configuration(target, nInputs, nNeurons, options_.batchSize);
        } catch (const ConfigError&) {
            return std::nullopt;
        }
        if (!options_.useMai) c.ratio = 0.0f;
        std::uint64_t bytes = npi_file_bytes(nInputs, nNeurons, c.nPartitions);
        if (options_.useMai) bytes += mai_file_bytes(nNeurons, mai_entry_count(c.ratio, nInputs));
        if (bytes > share) return std::nullopt;
        return c;
    };
    std::uint64_t lo = 0;
    std::uint64_t hi = share;
    std::optional<Configuration> best;
    while (lo < hi) {
        const std::uint64_t mid = lo + (hi - lo + 1) / 2;
        if (auto c = fitting(mid)) {
            best = c;
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    return best;
}

IndexManager::EnsureOutcome IndexManager::ensure_indexed(LayerId layer, InferenceLedger& ledger) {
    std::lock_guard lock(mu_);
    if (layer.index >= entries_.size()) {
        throw LayerOutOfRange("layer " + std::to_string(layer.index) + " out of range");
    }
    EnsureOutcome out;
    CatalogEntry& entry = entries_[layer.index];
    if (entry.state == LayerState::built) {
        out.built = true;
        return out;
    }

    std::vector<InputId> all(source_.input_count());
    std::iota(all.begin(), all.end(), InputId{0});
    ActivationMatrix acts = source_.infer_layer(layer, all, options_.batchSize, ledger);
    out.fullScan = true;

    const auto config = fit_configuration(layer);
    if (config) {
        const std::uint32_t maiEntries = options_.useMai ? mai_entry_count(config->ratio, acts.rows()) : 0;
        std::uint64_t bytes = npi_file_bytes(acts.rows(), acts.cols(), config->nPartitions);
        if (options_.useMai) bytes += mai_file_bytes(acts.cols(), maiEntries);
        if (bytes_on_disk_locked() + bytes <= options_.budgetBytes) {
            auto npi = std::make_shared<const NeuralPartitionIndex>(
                build_npi(acts, config->nPartitions, NpiBuildOptions{.maiEntries = maiEntries}));
            std::shared_ptr<const MaximumActivationIndex> mai;
            if (options_.useMai) mai = std::make_shared<const MaximumActivationIndex>(build_mai(acts, config->ratio));

            CatalogEntry built;
            built.layer = layer;
            built.state = LayerState::built;
            built.npiPath = options_.directory / ("layer_" + std::to_string(layer.index) + ".npi");
            if (mai) built.maiPath = options_.directory / ("layer_" + std::to_string(layer.index) + ".mai");
            built.bytes = bytes;
            built.config = *config;

            const CatalogEntry previous = entry;
            try {
                write_npi_file(built.npiPath, *npi);
                if (mai) write_mai_file(built.maiPath, *mai);
                entry = built;
                write_manifest_locked();
            } catch (const Error&) {
                entry = previous;
                std::error_code ec;
                std::filesystem::remove(built.npiPath, ec);
                if (!built.maiPath.empty()) std::filesystem::remove(built.maiPath, ec);
                throw;
            }
            npiCache_[layer.index] = std::move(npi);
            if (mai) maiCache_[layer.index] = std::move(mai);
            out.built = true;
        }
    }
    out.scanned = std::move(acts);
    return out;
}

bool IndexManager::is_built(LayerId layer) const {
    std::lock_guard lock(mu_);
    return layer.index < entries_.size() && entries_[layer.index].state == LayerState::built;
}

std::shared_ptr<const NeuralPartitionIndex> IndexManager::npi(LayerId layer) {
    std::lock_guard lock(mu_);
    if (layer.index >= entries_.size() || entries_[layer.index].state != LayerState::built) {
        throw ContractViolation("layer " + std::to_string(layer.index) + " is not indexed");
    }
    auto& slot = npiCache_[layer.index];
    if (!slot) slot = std::make_shared<const NeuralPartitionIndex>(read_npi_file(entries_[layer.index].npiPath));
    return slot;
}

std::shared_ptr<const MaximumActivationIndex> IndexManager::mai(LayerId layer) {
    std::lock_guard lock(mu_);
    if (layer.index >= entries_.size() || entries_[layer.index].state != LayerState::built) {
        throw ContractViolation("layer " + std::to_string(layer.index) + " is not indexed");
    }
    if (entries_[layer.index].maiPath.empty()) return nullptr;
    auto& slot = maiCache_[layer.index];
    if (!slot) slot = std::make_shared<const MaximumActivationIndex>(read_mai_file(entries_[layer.index].maiPath));
    return slot;
}

std::vector<CatalogEntry> IndexManager::catalog() const {
    std::lock_guard lock(mu_);
    return entries_;
}

std::uint64_t IndexManager::bytes_on_disk_locked() const {
    std::uint64_t total = 0;
    for (const auto& e : entries_) {
        if (e.state == LayerState::built) total += e.bytes;
    }
    return total;
}

std::uint64_t IndexManager::bytes_on_disk() const {
    std::lock_guard lock(mu_);
    return bytes_on_disk_locked();
}

} // namespace everest
