#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "focusnet/voldata.hpp"

namespace focusnet {

enum class ShapeFamily { Ellipsoid, Tube, LensPair };

std::string to_string(ShapeFamily f);
ShapeFamily shape_family_from_string(const std::string& s);

struct PhantomOrgan {
    int id = 0;
    std::string name;
    double target_fraction = 0.0;   // of all voxels
    ShapeFamily family = ShapeFamily::Ellipsoid;
    double intensity_mean = 1.0;
    double intensity_contrast = 0.3;   // minimum |mean - background|
};

/// Description of a synthetic volume family.
///
/// Lens-pair organs are consumed two at a time in list order: the second member
/// is placed as the mirror image of the first about the mid-sagittal plane
/// (the plane normal to the width axis through the volume centre). An unpaired
/// trailing lens-pair organ is placed alone.
struct PhantomSpec {
    Shape3 volume_shape{96, 96, 96};
    Spacing3 spacing{1.0, 1.0, 1.0};
    std::vector<PhantomOrgan> organs;
    double background_mean = 0.0;
    double noise_sigma = 0.05;
    uint64_t seed = 0;

    int num_classes() const { return static_cast<int>(organs.size()); }
    void validate() const;

    /// 96^3, 1 mm, three large and four small structures.
    static PhantomSpec desk_default();
};

void to_json(nlohmann::json& j, const PhantomSpec& s);
void from_json(const nlohmann::json& j, PhantomSpec& s);
void to_json(nlohmann::json& j, const OrganSpec& o);
void from_json(const nlohmann::json& j, OrganSpec& o);

struct OrganPlacement {
    int id = 0;
    int64_t voxel_count = 0;
    Point3 center{0.0, 0.0, 0.0};   // centroid of the realized voxels
};

struct PhantomSample {
    Volume volume;
    LabelMap labels;
    std::vector<OrganPlacement> organs;   // ordered by class id
    uint64_t seed = 0;
};

/// Raised when rejection sampling cannot place an organ within the retry budget.
class PlacementError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr int kPlacementRetries = 1000;

PhantomSample generate_phantom(const PhantomSpec& spec);

struct ManifestEntry {
    int index = 0;
    uint64_t seed = 0;
    std::string image;    // header paths relative to the manifest directory
    std::string labels;
    std::vector<int64_t> counts;   // index = class id, includes background
};

struct Manifest {
    PhantomSpec spec;
    std::vector<ManifestEntry> samples;
    std::vector<OrganSpec> organs;   // training-set statistics, ordered by id
    double background_mean_count = 0.0;
    double small_organ_threshold = 1000.0;
    std::filesystem::path directory;   // not serialized; set on load

    std::filesystem::path image_path(size_t i) const { return directory / samples.at(i).image; }
    std::filesystem::path labels_path(size_t i) const { return directory / samples.at(i).labels; }
};

/// Mean counts, equivalent diameters, small flags and inverse-size alphas over `counts`.
/// Zero means are floored to one voxel for the diameter and alpha.
std::vector<OrganSpec> organ_statistics(const std::vector<std::vector<int64_t>>& counts,
                                        const std::vector<std::string>& names,
                                        double small_threshold, double* background_mean = nullptr);

/// Writes n samples (seeds spec.seed + i) plus manifest.json into out_dir.
Manifest generate_dataset(const PhantomSpec& spec, int n, const std::filesystem::path& out_dir,
                          double small_threshold = 1000.0);

void save_manifest(const Manifest& m, const std::filesystem::path& path);
Manifest load_manifest(const std::filesystem::path& path);

}  // namespace focusnet
