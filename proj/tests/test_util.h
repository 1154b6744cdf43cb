#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <unistd.h>
#include <string>
#include <vector>

#include "p3d/tensor.h"

namespace p3d::testing {

// Small seeded generator for property tests.
class Gen {
public:
    explicit Gen(std::uint64_t seed) : rng_(seed) {}

    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
    std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }

    Tensor tensor(Shape shape, double lo = -1.0, double hi = 1.0) {
        Tensor t(std::move(shape));
        for (float& v : t.data()) v = static_cast<float>(uniform(lo, hi));
        return t;
    }

    // Values kept at least `gap` away from zero (for kinks of ReLU-like ops).
    Tensor tensor_away_from_zero(Shape shape, double gap, double hi = 1.0) {
        Tensor t(std::move(shape));
        for (float& v : t.data()) {
            const double mag = uniform(gap, hi);
            v = static_cast<float>(uniform(0.0, 1.0) < 0.5 ? -mag : mag);
        }
        return t;
    }

    std::mt19937_64& engine() { return rng_; }

private:
    std::mt19937_64 rng_;
};

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("p3d_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

}  // namespace p3d::testing
