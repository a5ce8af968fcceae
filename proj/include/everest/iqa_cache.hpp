#pragma once

#include "everest/types.hpp"

#include <cstddef>
#include <cstdint>
#include <list>
#include <mutex>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

namespace everest {

// In-memory cache of full-layer activation rows shared by consecutive queries.
// Eviction is most-recently-used: hits and inserts both refresh an entry, and
// an insert that overflows the budget evicts the freshest other entries first.
class ActivationCache {
public:
    struct Lookup {
        std::vector<std::pair<InputId, std::vector<float>>> hits;
        std::vector<InputId> misses;
    };

    explicit ActivationCache(std::size_t budgetBytes = 0) : budget_(budgetBytes) {}

    ActivationCache(const ActivationCache&) = delete;
    ActivationCache& operator=(const ActivationCache&) = delete;

    // Splits `inputs` into cached rows (marked as used) and misses, keeping
    // the request order in both.
    Lookup lookup(LayerId layer, std::span<const InputId> inputs);

    // Stores a full-layer row. Rows larger than the whole budget are skipped.
    void insert(LayerId layer, InputId input, std::span<const float> row);

    // Membership without touching recency.
    bool contains(LayerId layer, InputId input) const;

    void clear();

    std::size_t budget_bytes() const noexcept { return budget_; }
    std::size_t used_bytes() const;
    std::size_t entry_count() const;
    std::uint64_t hit_count() const;
    std::uint64_t miss_count() const;
    std::uint64_t eviction_count() const;

private:
    using Key = std::uint64_t;
    struct Entry {
        Key key;
        std::vector<float> row;
    };

    static Key key_of(LayerId layer, InputId input) noexcept {
        return (static_cast<Key>(layer.index) << 32) | input;
    }
    static std::size_t bytes_of(const std::vector<float>& row) noexcept { return row.size() * sizeof(float); }

    void erase_locked(std::list<Entry>::iterator it);

    mutable std::mutex mu_;
    std::size_t budget_;
    std::size_t used_ = 0;
    // Front is the most recently used entry.
    std::list<Entry> order_;
    std::unordered_map<Key, std::list<Entry>::iterator> index_;
    std::uint64_t hits_ = 0;
    std::uint64_t misses_ = 0;
    std::uint64_t evictions_ = 0;
};

} // namespace everest
