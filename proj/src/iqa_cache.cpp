#include "everest/iqa_cache.hpp"

namespace everest {

ActivationCache::Lookup ActivationCache::lookup(LayerId layer, std::span<const InputId> inputs) {
    std::lock_guard lock(mu_);
    Lookup out;
    for (InputId x : inputs) {
        auto it = index_.find(key_of(layer, x));
        if (it == index_.end()) {
            out.misses.push_back(x);
            ++misses_;
            continue;
        }
        order_.splice(order_.begin(), order_, it->second);
        out.hits.emplace_back(x, it->second->row);
        ++hits_;
    }
    return out;
}

void ActivationCache::insert(LayerId layer, InputId input, std::span<const float> row) {
    std::lock_guard lock(mu_);
    const Key key = key_of(layer, input);
    if (auto it = index_.find(key); it != index_.end()) {
        erase_locked(it->second);
    }
    const std::size_t bytes = row.size() * sizeof(float);
    if (bytes > budget_ || bytes == 0) {
        return;
    }
    order_.push_front(Entry{key, std::vector<float>(row.begin(), row.end())});
    index_[key] = order_.begin();
    used_ += bytes;
    while (used_ > budget_) {
        // The new entry sits at the front; the next one is the MRU victim.
        erase_locked(std::next(order_.begin()));
        ++evictions_;
    }
}

bool ActivationCache::contains(LayerId layer, InputId input) const {
    std::lock_guard lock(mu_);
    return index_.contains(key_of(layer, input));
}

void ActivationCache::clear() {
    std::lock_guard lock(mu_);
    order_.clear();
    index_.clear();
    used_ = 0;
}

void ActivationCache::erase_locked(std::list<Entry>::iterator it) {
    used_ -= bytes_of(it->row);
    index_.erase(it->key);
    order_.erase(it);
}

std::size_t ActivationCache::used_bytes() const {
    std::lock_guard lock(mu_);
    return used_;
}

std::size_t ActivationCache::entry_count() const {
    std::lock_guard lock(mu_);
    return index_.size();
}

std::uint64_t ActivationCache::hit_count() const {
    std::lock_guard lock(mu_);
    return hits_;
}

std::uint64_t ActivationCache::miss_count() const {
    std::lock_guard lock(mu_);
    return misses_;
}

std::uint64_t ActivationCache::eviction_count() const {
    std::lock_guard lock(mu_);
    return evictions_;
}

} // namespace everest
