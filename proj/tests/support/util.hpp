#ifndef SFDA_TESTS_UTIL_HPP
#define SFDA_TESTS_UTIL_HPP

#include <filesystem>
#include <string>
#include <vector>

#include "sfda/rng.hpp"
#include "sfda/tensor.hpp"

namespace sfda::test {

inline Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(rng.uniform(lo, hi));
    return t;
}

inline Tensor random_binary(std::vector<int> shape, Rng& rng, double p = 0.5) {
    Tensor t(std::move(shape));
    for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.bernoulli(p) ? 1.0f : 0.0f;
    return t;
}

// Scratch directory under the system temp root, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("sfda_test_" + tag + "_" + std::to_string(counter_++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    std::string str() const { return path_.string(); }
    std::filesystem::path path() const { return path_; }

private:
    static inline int counter_ = 0;
    std::filesystem::path path_;
};

inline double rel_err(double got, double want) {
    const double denom = std::max(std::abs(want), 1e-12);
    return std::abs(got - want) / denom;
}

} // namespace sfda::test

#endif
