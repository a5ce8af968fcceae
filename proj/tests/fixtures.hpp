#pragma once

#include "everest/activation_source.hpp"
#include "everest/synthetic_model.hpp"

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <string>
#include <vector>

namespace everest::testing {

// Six inputs x0..x5, three neurons R1..R3 (columns 0..2).
inline ActivationMatrix example_matrix() {
    return ActivationMatrix(LayerId(0), 6, 3,
                            {3.0f, 3.0f, 0.5f,   // x0
                             2.9f, 2.9f, 0.6f,   // x1
                             2.0f, 1.5f, 1.0f,   // x2
                             1.8f, 0.5f, 0.8f,   // x3
                             1.2f, 1.0f, 1.1f,   // x4
                             1.1f, 1.1f, 1.2f}); // x5
}

inline MatrixSource example_source() {
    return MatrixSource({example_matrix()});
}

// Uniform values in [lo, hi). Small `levels` forces ties.
inline ActivationMatrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, float lo = -1.0f,
                                      float hi = 2.0f, unsigned levels = 0) {
    XorShift64Star rng(seed);
    std::vector<float> v(rows * cols);
    for (float& f : v) {
        if (levels > 0) {
            f = lo + (hi - lo) * static_cast<float>(rng.next_below(levels)) / static_cast<float>(levels);
        } else {
            f = lo + (hi - lo) * static_cast<float>(rng.next_unit());
        }
    }
    return ActivationMatrix(LayerId(0), rows, cols, std::move(v));
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("everest_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const noexcept { return path_; }

private:
    std::filesystem::path path_;
};

} // namespace everest::testing
