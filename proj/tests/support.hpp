#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>

#include "focusnet/config.hpp"
#include "focusnet/phantom.hpp"
#include "focusnet/snet.hpp"

namespace testing {

// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        static std::mt19937_64 gen(std::random_device{}());
        path = std::filesystem::temp_directory_path() /
               ("focusnet_" + tag + "_" + std::to_string(gen() % 1000000000));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::filesystem::path operator/(const std::string& s) const { return path / s; }
};

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// 32^3 phantom with the default organ layout at test-friendly sizes; use with a
// small-organ threshold of 200 voxels.
inline focusnet::PhantomSpec small_spec(uint64_t seed = 3) {
    using focusnet::ShapeFamily;
    focusnet::PhantomSpec s;
    s.volume_shape = {32, 32, 32};
    s.seed = seed;
    s.organs = {
        {1, "core", 0.04, ShapeFamily::Ellipsoid, 0.6, 0.3},
        {2, "gland_L", 0.01, ShapeFamily::LensPair, 0.4, 0.3},
        {3, "gland_R", 0.01, ShapeFamily::LensPair, 0.4, 0.3},
        {4, "lens_L", 0.003, ShapeFamily::LensPair, 0.9, 0.3},
        {5, "lens_R", 0.003, ShapeFamily::LensPair, 0.9, 0.3},
        {6, "chiasm", 0.0015, ShapeFamily::Tube, 0.5, 0.3},
        {7, "pituitary", 0.001, ShapeFamily::Ellipsoid, 0.75, 0.3},
    };
    return s;
}
inline constexpr double kSmallThreshold = 200.0;

inline focusnet::SNetConfig tiny_snet() {
    focusnet::SNetConfig c;
    c.num_classes = 8;
    c.base_width = 4;
    c.num_downsamples = 1;
    c.blocks_per_stage = 1;
    c.aspp_rates = {1, 2};
    c.se_reduction = 2;
    return c;
}

inline focusnet::RunConfig tiny_run(int epochs = 1) {
    focusnet::RunConfig c;
    c.phantom = small_spec();
    c.snet = tiny_snet();
    c.metrics.small_organ_threshold = kSmallThreshold;
    for (auto& s : c.train.stages) s.epochs = epochs;
    c.train.seed = 11;
    return c;
}

}  // namespace testing
