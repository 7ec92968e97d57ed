#pragma once

#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include "stitchnet/volume.hpp"

namespace testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::size_t counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("stitchnet-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
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
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline stitchnet::Volume random_volume(std::mt19937_64& rng, stitchnet::Dims3 dims, bool float_exact = false) {
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    stitchnet::Volume v(dims, {1.0, 1.5, 2.0}, "rand");
    for (auto& x : v.data) x = float_exact ? static_cast<double>(static_cast<float>(u(rng))) : u(rng);
    return v;
}

} // namespace testing
