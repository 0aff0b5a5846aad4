#include "focusnet/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "focusnet/json_util.hpp"
#include "focusnet/losses.hpp"
#include "focusnet/rng.hpp"

namespace focusnet {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(ShapeFamily f) {
    switch (f) {
        case ShapeFamily::Ellipsoid: return "ellipsoid";
        case ShapeFamily::Tube: return "tube";
        case ShapeFamily::LensPair: return "lens-pair";
    }
    return "ellipsoid";
}

ShapeFamily shape_family_from_string(const std::string& s) {
    if (s == "ellipsoid") return ShapeFamily::Ellipsoid;
    if (s == "tube") return ShapeFamily::Tube;
    if (s == "lens-pair") return ShapeFamily::LensPair;
    throw ConfigError("unknown shape family '" + s + "'");
}

void PhantomSpec::validate() const {
    for (int a = 0; a < 3; ++a) {
        if (volume_shape[a] < 16) throw ConfigError("phantom.volume_shape components must be >= 16");
        if (!(spacing[a] > 0.0)) throw ConfigError("phantom.spacing components must be > 0");
    }
    if (organs.empty()) throw ConfigError("phantom.organs must not be empty");
    if (!(noise_sigma >= 0.0)) throw ConfigError("phantom.noise_sigma must be >= 0");
    double total = 0.0;
    std::vector<bool> seen(organs.size() + 1, false);
    for (const auto& o : organs) {
        if (o.id < 1 || o.id > num_classes() || seen[static_cast<size_t>(o.id)])
            throw ConfigError("phantom organ ids must be a permutation of 1..C");
        seen[static_cast<size_t>(o.id)] = true;
        if (!(o.target_fraction > 0.0 && o.target_fraction < 1.0))
            throw ConfigError("phantom organ '" + o.name + "': target_fraction must lie in (0,1)");
        if (!(o.intensity_contrast >= 0.0))
            throw ConfigError("phantom organ '" + o.name + "': intensity_contrast must be >= 0");
        if (std::abs(o.intensity_mean - background_mean) < o.intensity_contrast)
            throw ConfigError("phantom organ '" + o.name +
                              "': intensity_mean is closer to the background than its contrast");
        total += o.target_fraction;
    }
    if (!(total < 1.0)) throw ConfigError("phantom target fractions must sum to < 1");
}

PhantomSpec PhantomSpec::desk_default() {
    PhantomSpec s;
    s.volume_shape = {96, 96, 96};
    s.spacing = {1.0, 1.0, 1.0};
    s.noise_sigma = 0.05;
    s.background_mean = 0.0;
    s.seed = 0;
    const double c = 0.3;
    s.organs = {
        {1, "core", 0.01, ShapeFamily::Ellipsoid, 0.6, c},
        {2, "gland_L", 0.005, ShapeFamily::LensPair, 0.4, c},
        {3, "gland_R", 0.005, ShapeFamily::LensPair, 0.4, c},
        {4, "lens_L", 0.0001, ShapeFamily::LensPair, 0.9, c},
        {5, "lens_R", 0.0001, ShapeFamily::LensPair, 0.9, c},
        {6, "chiasm", 0.00005, ShapeFamily::Tube, 0.5, c},
        {7, "pituitary", 0.00003, ShapeFamily::Ellipsoid, 0.75, c},
    };
    return s;
}

void to_json(json& j, const PhantomSpec& s) {
    json organs = json::array();
    for (const auto& o : s.organs)
        organs.push_back({{"id", o.id},
                          {"name", o.name},
                          {"target_fraction", o.target_fraction},
                          {"shape_family", to_string(o.family)},
                          {"intensity_mean", o.intensity_mean},
                          {"intensity_contrast", o.intensity_contrast}});
    j = {{"volume_shape", s.volume_shape}, {"spacing", s.spacing},
         {"organs", organs},               {"background_mean", s.background_mean},
         {"noise_sigma", s.noise_sigma},   {"seed", s.seed}};
}

void from_json(const json& j, PhantomSpec& s) {
    check_keys(j, {"volume_shape", "spacing", "organs", "background_mean", "noise_sigma", "seed"},
               "phantom");
    read_opt(j, "volume_shape", s.volume_shape, "phantom");
    read_opt(j, "spacing", s.spacing, "phantom");
    read_opt(j, "background_mean", s.background_mean, "phantom");
    read_opt(j, "noise_sigma", s.noise_sigma, "phantom");
    read_opt(j, "seed", s.seed, "phantom");
    if (j.contains("organs")) {
        s.organs.clear();
        for (const auto& jo : j.at("organs")) {
            check_keys(jo, {"id", "name", "target_fraction", "shape_family", "intensity_mean",
                            "intensity_contrast"},
                       "phantom.organs[]");
            PhantomOrgan o;
            try {
                o.id = jo.at("id").get<int>();
                o.target_fraction = jo.at("target_fraction").get<double>();
            } catch (const json::exception& e) {
                throw ConfigError(std::string("phantom.organs[]: ") + e.what());
            }
            o.name = "organ_" + std::to_string(o.id);
            read_opt(jo, "name", o.name, "phantom.organs[]");
            std::string fam = "ellipsoid";
            read_opt(jo, "shape_family", fam, "phantom.organs[]");
            o.family = shape_family_from_string(fam);
            read_opt(jo, "intensity_mean", o.intensity_mean, "phantom.organs[]");
            read_opt(jo, "intensity_contrast", o.intensity_contrast, "phantom.organs[]");
            s.organs.push_back(o);
        }
    }
}

void to_json(json& j, const OrganSpec& o) {
    j = {{"id", o.id},
         {"name", o.name},
         {"is_small", o.is_small},
         {"mean_voxel_count", o.mean_voxel_count},
         {"mean_diameter", o.mean_diameter},
         {"alpha", o.alpha}};
}

void from_json(const json& j, OrganSpec& o) {
    check_keys(j, {"id", "name", "is_small", "mean_voxel_count", "mean_diameter", "alpha"}, "organ");
    try {
        o.id = j.at("id").get<int>();
        o.name = j.at("name").get<std::string>();
        o.is_small = j.at("is_small").get<bool>();
        o.mean_voxel_count = j.at("mean_voxel_count").get<double>();
        o.mean_diameter = j.at("mean_diameter").get<double>();
        o.alpha = j.at("alpha").get<double>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("organ: ") + e.what());
    }
}

namespace {

// Continuous shape description in voxel coordinates (z, y, x).
struct ShapeParams {
    ShapeFamily family = ShapeFamily::Ellipsoid;   // Ellipsoid or Tube after resolution
    Point3 center{};
    Point3 ratios{1.0, 1.0, 1.0};      // ellipsoid semi-axis ratios, product 1
    Point3 direction{0.0, 0.0, 1.0};   // tube axis
    double scale = 1.0;                // ellipsoid: geometric-mean semi-axis; tube: radius

    double bounding_radius() const {
        if (family == ShapeFamily::Tube) return 4.0 * scale + 1.0;
        return scale * std::max({ratios[0], ratios[1], ratios[2]}) + 1.0;
    }
};

constexpr double kTubeHalfLengthFactor = 3.0;

bool inside(const ShapeParams& p, double z, double y, double x) {
    const double dz = z - p.center[0], dy = y - p.center[1], dx = x - p.center[2];
    if (p.family == ShapeFamily::Tube) {
        const double half = kTubeHalfLengthFactor * p.scale;
        double t = dz * p.direction[0] + dy * p.direction[1] + dx * p.direction[2];
        t = std::clamp(t, -half, half);
        const double rz = dz - t * p.direction[0], ry = dy - t * p.direction[1],
                     rx = dx - t * p.direction[2];
        return rz * rz + ry * ry + rx * rx <= p.scale * p.scale;
    }
    const double az = p.scale * p.ratios[0], ay = p.scale * p.ratios[1], ax = p.scale * p.ratios[2];
    return (dz * dz) / (az * az) + (dy * dy) / (ay * ay) + (dx * dx) / (ax * ax) <= 1.0;
}

// Linear indices covered by the shape; the voxel nearest the centre is always included.
// Returns an empty vector when any covered voxel would fall outside the volume.
std::vector<int64_t> rasterize(const ShapeParams& p, const Shape3& shape) {
    const double r = p.bounding_radius();
    std::array<int64_t, 3> lo{}, hi{};
    for (int a = 0; a < 3; ++a) {
        lo[a] = static_cast<int64_t>(std::floor(p.center[a] - r));
        hi[a] = static_cast<int64_t>(std::ceil(p.center[a] + r));
    }
    std::vector<int64_t> out;
    const Index3 nearest{std::llround(p.center[0]), std::llround(p.center[1]),
                         std::llround(p.center[2])};
    for (int64_t z = lo[0]; z <= hi[0]; ++z)
        for (int64_t y = lo[1]; y <= hi[1]; ++y)
            for (int64_t x = lo[2]; x <= hi[2]; ++x) {
                const bool is_nearest = z == nearest[0] && y == nearest[1] && x == nearest[2];
                if (!is_nearest && !inside(p, static_cast<double>(z), static_cast<double>(y),
                                           static_cast<double>(x)))
                    continue;
                if (z < 0 || y < 0 || x < 0 || z >= shape[0] || y >= shape[1] || x >= shape[2])
                    return {};
                out.push_back(linear_index(shape, z, y, x));
            }
    std::sort(out.begin(), out.end());
    return out;
}

// Chooses the scale whose rasterized count is closest to `target` voxels.
std::vector<int64_t> fit_to_count(ShapeParams& p, double target, const Shape3& shape) {
    const double nominal = p.family == ShapeFamily::Tube
        ? std::cbrt(target / ((2.0 * kTubeHalfLengthFactor + 4.0 / 3.0) * std::numbers::pi))
        : std::cbrt(3.0 * target / (4.0 * std::numbers::pi));
    auto count_at = [&](double s) {
        ShapeParams q = p;
        q.scale = s;
        return static_cast<double>(rasterize(q, shape).size());
    };
    double lo = 0.05 * nominal, hi = 2.0 * nominal + 1.0;
    for (int it = 0; it < 40; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (count_at(mid) >= target) hi = mid;
        else lo = mid;
    }
    const double c_lo = count_at(lo), c_hi = count_at(hi);
    p.scale = std::abs(c_lo - target) <= std::abs(c_hi - target) && c_lo > 0 ? lo : hi;
    return rasterize(p, shape);
}

ShapeParams mirrored(const ShapeParams& p, const Shape3& shape) {
    ShapeParams m = p;
    m.center[2] = static_cast<double>(shape[2] - 1) - p.center[2];
    m.direction[2] = -p.direction[2];
    return m;
}

class Occupancy {
public:
    explicit Occupancy(const Shape3& shape)
        : shape_(shape), blocked_(static_cast<size_t>(voxel_count(shape)), 0) {}

    // True when no voxel lies on or next to (26-neighbourhood) an occupied voxel.
    bool free(const std::vector<int64_t>& voxels) const {
        for (int64_t i : voxels)
            if (blocked_[static_cast<size_t>(i)]) return false;
        return true;
    }

    void claim(const std::vector<int64_t>& voxels) {
        for (int64_t i : voxels) {
            const Index3 c = unravel(shape_, i);
            for (int64_t dz = -1; dz <= 1; ++dz)
                for (int64_t dy = -1; dy <= 1; ++dy)
                    for (int64_t dx = -1; dx <= 1; ++dx) {
                        const int64_t z = c[0] + dz, y = c[1] + dy, x = c[2] + dx;
                        if (z < 0 || y < 0 || x < 0 || z >= shape_[0] || y >= shape_[1] ||
                            x >= shape_[2])
                            continue;
                        blocked_[static_cast<size_t>(linear_index(shape_, z, y, x))] = 1;
                    }
        }
    }

private:
    Shape3 shape_;
    std::vector<uint8_t> blocked_;
};

bool touching(const std::vector<int64_t>& a, const std::vector<int64_t>& b, const Shape3& shape) {
    Occupancy occ(shape);
    occ.claim(a);
    return !occ.free(b);
}

ShapeParams random_shape(Rng& rng, ShapeFamily family) {
    ShapeParams p;
    p.family = family == ShapeFamily::Tube ? ShapeFamily::Tube : ShapeFamily::Ellipsoid;
    if (p.family == ShapeFamily::Ellipsoid) {
        Point3 r{rng.uniform(0.75, 1.33), rng.uniform(0.75, 1.33), rng.uniform(0.75, 1.33)};
        const double g = std::cbrt(r[0] * r[1] * r[2]);
        p.ratios = {r[0] / g, r[1] / g, r[2] / g};
    } else {
        // Cord-like structures run within the axial (height, width) plane.
        const double theta = rng.uniform(0.0, std::numbers::pi);
        p.direction = {0.0, std::sin(theta), std::cos(theta)};
    }
    return p;
}

bool sample_center(Rng& rng, ShapeParams& p, double target, const Shape3& shape) {
    p.scale = p.family == ShapeFamily::Tube
        ? std::cbrt(target / ((2.0 * kTubeHalfLengthFactor + 4.0 / 3.0) * std::numbers::pi))
        : std::cbrt(3.0 * target / (4.0 * std::numbers::pi));
    const double r = p.bounding_radius() + 0.25 * p.bounding_radius();
    for (int a = 0; a < 3; ++a) {
        const double lo = r, hi = static_cast<double>(shape[a] - 1) - r;
        if (hi < lo) return false;
        p.center[a] = rng.uniform(lo, hi);
    }
    return true;
}

}  // namespace

PhantomSample generate_phantom(const PhantomSpec& spec) {
    spec.validate();
    const Shape3& shape = spec.volume_shape;
    const double total = static_cast<double>(voxel_count(shape));
    Rng place_rng(mix_seed(spec.seed, 1));
    Rng noise_rng(mix_seed(spec.seed, 2));

    PhantomSample sample;
    sample.seed = spec.seed;
    sample.labels = LabelMap::zeros(shape, spec.spacing, spec.num_classes());
    Occupancy occupancy(shape);

    auto place_failure = [&](const PhantomOrgan& o) {
        return PlacementError("could not place organ '" + o.name + "' (id " +
                              std::to_string(o.id) + ") after " +
                              std::to_string(kPlacementRetries) +
                              " attempts; the spec is infeasible for the volume size");
    };
    auto paint = [&](const std::vector<int64_t>& voxels, int id) {
        for (int64_t i : voxels) sample.labels.data[static_cast<size_t>(i)] = static_cast<uint16_t>(id);
        occupancy.claim(voxels);
    };

    for (size_t k = 0; k < spec.organs.size(); ++k) {
        const PhantomOrgan& organ = spec.organs[k];
        const double target = organ.target_fraction * total;
        const bool paired = organ.family == ShapeFamily::LensPair && k + 1 < spec.organs.size() &&
                            spec.organs[k + 1].family == ShapeFamily::LensPair;
        bool placed = false;
        for (int attempt = 0; attempt < kPlacementRetries && !placed; ++attempt) {
            ShapeParams p = random_shape(place_rng, organ.family);
            if (!sample_center(place_rng, p, target, shape)) continue;
            auto voxels = fit_to_count(p, target, shape);
            if (voxels.empty() || !occupancy.free(voxels)) continue;
            if (!paired) {
                paint(voxels, organ.id);
                placed = true;
                break;
            }
            // The first organ of a pair always sits on the low-width side.
            if (p.center[2] > 0.5 * static_cast<double>(shape[2] - 1)) {
                p = mirrored(p, shape);
                voxels = fit_to_count(p, target, shape);
                if (voxels.empty() || !occupancy.free(voxels)) continue;
            }
            const PhantomOrgan& partner = spec.organs[k + 1];
            ShapeParams m = mirrored(p, shape);
            auto mvoxels = fit_to_count(m, partner.target_fraction * total, shape);
            if (mvoxels.empty() || !occupancy.free(mvoxels) || touching(voxels, mvoxels, shape))
                continue;
            paint(voxels, organ.id);
            paint(mvoxels, partner.id);
            placed = true;
        }
        if (!placed) throw place_failure(organ);
        if (paired) ++k;
    }

    std::vector<double> means(static_cast<size_t>(spec.num_classes() + 1), spec.background_mean);
    for (const auto& o : spec.organs) means[static_cast<size_t>(o.id)] = o.intensity_mean;
    sample.volume = Volume::zeros(shape, spec.spacing);
    for (size_t i = 0; i < sample.volume.data.size(); ++i) {
        const double v = means[sample.labels.data[i]] + spec.noise_sigma * noise_rng.normal();
        sample.volume.data[i] = static_cast<float>(v);
    }

    const auto counts = organ_voxel_counts(sample.labels);
    for (int id = 1; id <= spec.num_classes(); ++id) {
        OrganPlacement pl;
        pl.id = id;
        pl.voxel_count = counts[static_cast<size_t>(id)];
        if (auto c = organ_centroid(sample.labels, id)) pl.center = *c;
        sample.organs.push_back(pl);
    }
    return sample;
}

std::vector<OrganSpec> organ_statistics(const std::vector<std::vector<int64_t>>& counts,
                                        const std::vector<std::string>& names,
                                        double small_threshold, double* background_mean) {
    if (counts.empty()) throw std::invalid_argument("organ_statistics: no samples");
    const size_t classes = counts.front().size();
    std::vector<double> mean(classes, 0.0);
    for (const auto& row : counts) {
        if (row.size() != classes) throw std::invalid_argument("organ_statistics: ragged counts");
        for (size_t c = 0; c < classes; ++c) mean[c] += static_cast<double>(row[c]);
    }
    for (auto& m : mean) m /= static_cast<double>(counts.size());

    std::map<int, double> organ_means;
    for (size_t c = 1; c < classes; ++c) organ_means[static_cast<int>(c)] = mean[c];
    const auto small = classify_small_organs(organ_means, small_threshold);

    std::vector<double> floored(classes);
    for (size_t c = 0; c < classes; ++c) floored[c] = std::max(mean[c], 1.0);
    const auto alphas = compute_alphas(floored);

    std::vector<OrganSpec> organs;
    for (size_t c = 1; c < classes; ++c) {
        OrganSpec o;
        o.id = static_cast<int>(c);
        o.name = c - 1 < names.size() ? names[c - 1] : "organ_" + std::to_string(c);
        o.mean_voxel_count = mean[c];
        o.is_small = small.contains(o.id);
        o.mean_diameter = equivalent_diameter(floored[c]);
        o.alpha = alphas[c];
        organs.push_back(o);
    }
    if (background_mean) *background_mean = mean[0];
    return organs;
}

Manifest generate_dataset(const PhantomSpec& spec, int n, const fs::path& out_dir,
                          double small_threshold) {
    if (n < 1) throw std::invalid_argument("generate_dataset: n must be >= 1");
    spec.validate();
    fs::create_directories(out_dir);

    Manifest m;
    m.spec = spec;
    m.directory = out_dir;
    m.small_organ_threshold = small_threshold;
    std::vector<std::vector<int64_t>> all_counts;
    for (int i = 0; i < n; ++i) {
        PhantomSpec s = spec;
        s.seed = spec.seed + static_cast<uint64_t>(i);
        const PhantomSample sample = generate_phantom(s);
        char stem[32];
        std::snprintf(stem, sizeof(stem), "case_%03d", i);
        ManifestEntry e;
        e.index = i;
        e.seed = s.seed;
        e.image = std::string(stem) + "_image.hdr";
        e.labels = std::string(stem) + "_labels.hdr";
        e.counts = organ_voxel_counts(sample.labels);
        save_volume(sample.volume, out_dir / e.image);
        save_labels(sample.labels, out_dir / e.labels);
        all_counts.push_back(e.counts);
        m.samples.push_back(std::move(e));
    }
    std::vector<std::string> names;
    std::vector<PhantomOrgan> sorted = spec.organs;
    std::sort(sorted.begin(), sorted.end(), [](auto& a, auto& b) { return a.id < b.id; });
    for (const auto& o : sorted) names.push_back(o.name);
    m.organs = organ_statistics(all_counts, names, small_threshold, &m.background_mean_count);
    save_manifest(m, out_dir / "manifest.json");
    return m;
}

void save_manifest(const Manifest& m, const fs::path& path) {
    json samples = json::array();
    for (const auto& e : m.samples)
        samples.push_back({{"index", e.index},
                           {"seed", e.seed},
                           {"image", e.image},
                           {"labels", e.labels},
                           {"counts", e.counts}});
    json j = {{"version", 1},
              {"spec", m.spec},
              {"small_organ_threshold", m.small_organ_threshold},
              {"background_mean_count", m.background_mean_count},
              {"organs", m.organs},
              {"samples", samples}};
    const fs::path tmp = fs::path(path).concat(".tmp");
    {
        std::ofstream out(tmp);
        if (!out) throw std::runtime_error("cannot write manifest " + path.string());
        out << j.dump(2) << '\n';
        if (!out) throw std::runtime_error("failed writing manifest " + path.string());
    }
    fs::rename(tmp, path);
}

Manifest load_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("missing manifest " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError("malformed manifest " + path.string() + ": " + e.what());
    }
    Manifest m;
    m.directory = fs::absolute(path).parent_path();
    try {
        if (j.at("version").get<int>() != 1) throw DataError("unsupported manifest version");
        m.spec = j.at("spec").get<PhantomSpec>();
        m.small_organ_threshold = j.at("small_organ_threshold").get<double>();
        m.background_mean_count = j.at("background_mean_count").get<double>();
        m.organs = j.at("organs").get<std::vector<OrganSpec>>();
        for (const auto& js : j.at("samples")) {
            ManifestEntry e;
            e.index = js.at("index").get<int>();
            e.seed = js.at("seed").get<uint64_t>();
            e.image = js.at("image").get<std::string>();
            e.labels = js.at("labels").get<std::string>();
            e.counts = js.at("counts").get<std::vector<int64_t>>();
            m.samples.push_back(std::move(e));
        }
    } catch (const json::exception& e) {
        throw DataError("malformed manifest " + path.string() + ": " + e.what());
    }
    if (m.samples.empty()) throw DataError("manifest lists no samples: " + path.string());
    return m;
}

}  // namespace focusnet
