#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace focusnet {

using Shape3 = std::array<int64_t, 3>;    // depth, height, width
using Spacing3 = std::array<double, 3>;   // mm per voxel, same axis order
using Index3 = std::array<int64_t, 3>;
using Point3 = std::array<double, 3>;

/// Raised for malformed data files and violated data-model invariants.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline int64_t voxel_count(const Shape3& s) { return s[0] * s[1] * s[2]; }

inline int64_t linear_index(const Shape3& s, int64_t z, int64_t y, int64_t x) {
    return (z * s[1] + y) * s[2] + x;
}

inline Index3 unravel(const Shape3& s, int64_t i) {
    return {i / (s[1] * s[2]), (i / s[2]) % s[1], i % s[2]};
}

/// Scalar intensity grid with physical spacing.
struct Volume {
    Shape3 shape{0, 0, 0};
    Spacing3 spacing{1.0, 1.0, 1.0};
    std::vector<float> data;

    static Volume zeros(const Shape3& shape, const Spacing3& spacing);

    float& at(int64_t z, int64_t y, int64_t x) { return data[linear_index(shape, z, y, x)]; }
    float at(int64_t z, int64_t y, int64_t x) const { return data[linear_index(shape, z, y, x)]; }

    /// Throws DataError when the extents, spacing or intensities are invalid.
    void validate() const;
};

/// Integer class map, 0 = background, organs 1..num_classes.
struct LabelMap {
    Shape3 shape{0, 0, 0};
    Spacing3 spacing{1.0, 1.0, 1.0};
    int num_classes = 1;
    std::vector<uint16_t> data;

    static LabelMap zeros(const Shape3& shape, const Spacing3& spacing, int num_classes);

    uint16_t& at(int64_t z, int64_t y, int64_t x) { return data[linear_index(shape, z, y, x)]; }
    uint16_t at(int64_t z, int64_t y, int64_t x) const { return data[linear_index(shape, z, y, x)]; }

    void validate() const;
    bool same_geometry(const Volume& v) const { return shape == v.shape && spacing == v.spacing; }
    bool same_geometry(const LabelMap& o) const { return shape == o.shape && spacing == o.spacing; }
};

/// Per-class metadata derived from training-set statistics.
struct OrganSpec {
    int id = 0;
    std::string name;
    bool is_small = false;
    double mean_voxel_count = 0.0;
    double mean_diameter = 0.0;   // voxels
    double alpha = 1.0;           // focal weight
};

/// Channel-major soft assignment: data[c * voxels + i].
struct ProbabilityGrid {
    int64_t channels = 0;
    Shape3 shape{0, 0, 0};
    Spacing3 spacing{1.0, 1.0, 1.0};
    std::vector<float> data;

    float at(int64_t c, int64_t i) const { return data[c * voxel_count(shape) + i]; }
    float& at(int64_t c, int64_t i) { return data[c * voxel_count(shape) + i]; }

    /// Checks finiteness, non-negativity and the per-voxel simplex constraint.
    void validate(double tolerance = 1e-5) const;
};

// On-disk format: `<stem>.hdr` (JSON text) next to `<stem>.raw` (little-endian payload).
// Either path may be passed; the other is derived from it.
void save_volume(const Volume& v, const std::filesystem::path& path);
Volume load_volume(const std::filesystem::path& path);
void save_labels(const LabelMap& lm, const std::filesystem::path& path);
LabelMap load_labels(const std::filesystem::path& path);

std::filesystem::path header_path(const std::filesystem::path& path);
std::filesystem::path payload_path(const std::filesystem::path& path);

ProbabilityGrid one_hot(const LabelMap& lm);

/// Per-voxel argmax, ties resolved toward the lower class index.
LabelMap argmax_labels(const ProbabilityGrid& p);

/// Index = class id (0..C); absent classes hold 0.
std::vector<int64_t> organ_voxel_counts(const LabelMap& lm);

/// Classes whose mean count is strictly below `threshold`. Classes with a zero
/// mean (never observed) are reported small and produce a warning on stderr.
std::set<int> classify_small_organs(const std::map<int, double>& mean_counts,
                                    double threshold = 1000.0);

/// Mean voxel index of the class, or nullopt when the class is absent.
std::optional<Point3> organ_centroid(const LabelMap& lm, int cls);

/// Diameter (voxels) of the sphere holding `mean_voxel_count` voxels.
double equivalent_diameter(double mean_voxel_count);

}  // namespace focusnet
