#pragma once

// Shared fixtures and numerical oracles for the unit tests.

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include "veli4sbr/model.hpp"

namespace veli4sbr::testing {

/// Central difference of f around x[i], step h.
inline double central_difference(const std::function<double()>& f, double& x, double h = 1e-5) {
    const double keep = x;
    x = keep + h;
    const double up = f();
    x = keep - h;
    const double down = f();
    x = keep;
    return (up - down) / (2 * h);
}

/// |a - n| / max(|a|, |n|), with an absolute floor so exact zeros compare equal.
inline double relative_error(double analytic, double numeric, double floor = 1e-7) {
    const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / scale;
}

/// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::mt19937_64 rng(std::random_device{}());
        path_ = std::filesystem::temp_directory_path() / ("veli4sbr_" + tag + "_" + std::to_string(rng()));
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

}  // namespace veli4sbr::testing
