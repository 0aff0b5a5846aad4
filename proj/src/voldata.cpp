#include "focusnet/voldata.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>

#include <json.hpp>

namespace focusnet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;

void check_geometry(const Shape3& shape, const Spacing3& spacing) {
    for (int a = 0; a < 3; ++a) {
        if (shape[a] <= 0) throw DataError("shape components must be positive");
        if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
            throw DataError("spacing components must be positive and finite");
    }
}

template <typename T>
void write_le(std::ofstream& out, const std::vector<T>& values) {
    if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
        out.write(reinterpret_cast<const char*>(values.data()),
                  static_cast<std::streamsize>(values.size() * sizeof(T)));
    } else {
        for (T v : values) {
            auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(v);
            std::reverse(bytes.begin(), bytes.end());
            out.write(bytes.data(), sizeof(T));
        }
    }
}

template <typename T>
std::vector<T> read_le(const fs::path& path, int64_t count) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open payload " + path.string());
    in.seekg(0, std::ios::end);
    const auto bytes = static_cast<int64_t>(in.tellg());
    if (bytes != count * static_cast<int64_t>(sizeof(T))) {
        throw DataError("shape/byte-count mismatch in " + path.string() + ": header implies " +
                        std::to_string(count * sizeof(T)) + " bytes, payload has " +
                        std::to_string(bytes));
    }
    in.seekg(0);
    std::vector<T> values(static_cast<size_t>(count));
    in.read(reinterpret_cast<char*>(values.data()), bytes);
    if (!in) throw DataError("short read from " + path.string());
    if constexpr (std::endian::native != std::endian::little && sizeof(T) > 1) {
        for (auto& v : values) {
            auto b = std::bit_cast<std::array<char, sizeof(T)>>(v);
            std::reverse(b.begin(), b.end());
            v = std::bit_cast<T>(b);
        }
    }
    return values;
}

struct Header {
    std::string kind;
    std::string dtype;
    Shape3 shape{};
    Spacing3 spacing{};
    int num_classes = 0;
};

void write_header(const fs::path& path, const Header& h) {
    json j;
    j["version"] = kFormatVersion;
    j["kind"] = h.kind;
    j["dtype"] = h.dtype;
    j["shape"] = h.shape;
    j["spacing_mm"] = h.spacing;
    j["num_classes"] = h.num_classes;
    j["endianness"] = "little";
    j["data_file"] = payload_path(path).filename().string();
    std::ofstream out(header_path(path));
    if (!out) throw DataError("cannot write header " + header_path(path).string());
    out << j.dump(2) << '\n';
    if (!out) throw DataError("failed writing header " + header_path(path).string());
}

Header read_header(const fs::path& path, const std::string& expected_kind) {
    const auto hp = header_path(path);
    std::ifstream in(hp);
    if (!in) throw DataError("missing header file " + hp.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError("malformed header " + hp.string() + ": " + e.what());
    }
    Header h;
    try {
        if (j.at("version").get<int>() != kFormatVersion)
            throw DataError("unsupported header version in " + hp.string());
        if (j.at("endianness").get<std::string>() != "little")
            throw DataError("unsupported endianness in " + hp.string());
        h.kind = j.at("kind").get<std::string>();
        h.dtype = j.at("dtype").get<std::string>();
        h.shape = j.at("shape").get<Shape3>();
        h.spacing = j.at("spacing_mm").get<Spacing3>();
        h.num_classes = j.at("num_classes").get<int>();
    } catch (const json::exception& e) {
        throw DataError("malformed header " + hp.string() + ": " + e.what());
    }
    if (h.kind != expected_kind)
        throw DataError("header " + hp.string() + " describes a " + h.kind + ", expected " +
                        expected_kind);
    check_geometry(h.shape, h.spacing);
    return h;
}

void ensure_parent(const fs::path& p) {
    const auto parent = fs::absolute(p).parent_path();
    if (!fs::is_directory(parent))
        throw DataError("output directory does not exist: " + parent.string());
}

}  // namespace

Volume Volume::zeros(const Shape3& shape, const Spacing3& spacing) {
    check_geometry(shape, spacing);
    return Volume{shape, spacing, std::vector<float>(static_cast<size_t>(voxel_count(shape)), 0.0f)};
}

void Volume::validate() const {
    check_geometry(shape, spacing);
    if (static_cast<int64_t>(data.size()) != voxel_count(shape))
        throw DataError("volume data size does not match its shape");
    for (float v : data)
        if (!std::isfinite(v)) throw DataError("volume holds a non-finite intensity");
}

LabelMap LabelMap::zeros(const Shape3& shape, const Spacing3& spacing, int num_classes) {
    check_geometry(shape, spacing);
    if (num_classes < 1) throw DataError("num_classes must be positive");
    return LabelMap{shape, spacing, num_classes,
                    std::vector<uint16_t>(static_cast<size_t>(voxel_count(shape)), 0)};
}

void LabelMap::validate() const {
    check_geometry(shape, spacing);
    if (num_classes < 1 || num_classes > 65535) throw DataError("num_classes out of range");
    if (static_cast<int64_t>(data.size()) != voxel_count(shape))
        throw DataError("label data size does not match its shape");
    for (uint16_t v : data)
        if (v > num_classes)
            throw DataError("label value " + std::to_string(v) + " exceeds num_classes " +
                            std::to_string(num_classes));
}

void ProbabilityGrid::validate(double tolerance) const {
    check_geometry(shape, spacing);
    const int64_t n = voxel_count(shape);
    if (channels < 1 || static_cast<int64_t>(data.size()) != channels * n)
        throw DataError("probability grid size does not match channels x shape");
    for (int64_t i = 0; i < n; ++i) {
        double sum = 0.0;
        for (int64_t c = 0; c < channels; ++c) {
            const float v = at(c, i);
            if (!std::isfinite(v) || v < 0.0f) throw DataError("invalid probability value");
            sum += v;
        }
        if (std::abs(sum - 1.0) > tolerance) throw DataError("probabilities do not sum to 1");
    }
}

fs::path header_path(const fs::path& path) {
    fs::path p = path;
    return p.replace_extension(".hdr");
}

fs::path payload_path(const fs::path& path) {
    fs::path p = path;
    return p.replace_extension(".raw");
}

void save_volume(const Volume& v, const fs::path& path) {
    v.validate();
    ensure_parent(path);
    write_header(path, {"volume", "float32", v.shape, v.spacing, 0});
    std::ofstream out(payload_path(path), std::ios::binary);
    if (!out) throw DataError("cannot write payload " + payload_path(path).string());
    write_le(out, v.data);
    if (!out) throw DataError("failed writing payload " + payload_path(path).string());
}

Volume load_volume(const fs::path& path) {
    const Header h = read_header(path, "volume");
    if (h.dtype != "float32") throw DataError("volume dtype must be float32, got " + h.dtype);
    Volume v{h.shape, h.spacing, read_le<float>(payload_path(path), voxel_count(h.shape))};
    v.validate();
    return v;
}

void save_labels(const LabelMap& lm, const fs::path& path) {
    lm.validate();
    ensure_parent(path);
    write_header(path, {"labels", "uint16", lm.shape, lm.spacing, lm.num_classes});
    std::ofstream out(payload_path(path), std::ios::binary);
    if (!out) throw DataError("cannot write payload " + payload_path(path).string());
    write_le(out, lm.data);
    if (!out) throw DataError("failed writing payload " + payload_path(path).string());
}

LabelMap load_labels(const fs::path& path) {
    const Header h = read_header(path, "labels");
    if (h.dtype != "uint16") throw DataError("label dtype must be uint16, got " + h.dtype);
    LabelMap lm{h.shape, h.spacing, h.num_classes,
                read_le<uint16_t>(payload_path(path), voxel_count(h.shape))};
    lm.validate();
    return lm;
}

ProbabilityGrid one_hot(const LabelMap& lm) {
    const int64_t n = voxel_count(lm.shape);
    ProbabilityGrid p{lm.num_classes + 1, lm.shape, lm.spacing,
                      std::vector<float>(static_cast<size_t>((lm.num_classes + 1) * n), 0.0f)};
    for (int64_t i = 0; i < n; ++i) p.at(lm.data[i], i) = 1.0f;
    return p;
}

LabelMap argmax_labels(const ProbabilityGrid& p) {
    LabelMap lm = LabelMap::zeros(p.shape, p.spacing, static_cast<int>(p.channels - 1));
    const int64_t n = voxel_count(p.shape);
    for (int64_t i = 0; i < n; ++i) {
        int64_t best = 0;
        float best_v = p.at(0, i);
        for (int64_t c = 1; c < p.channels; ++c) {
            if (p.at(c, i) > best_v) {  // strict: ties keep the lower index
                best = c;
                best_v = p.at(c, i);
            }
        }
        lm.data[i] = static_cast<uint16_t>(best);
    }
    return lm;
}

std::vector<int64_t> organ_voxel_counts(const LabelMap& lm) {
    std::vector<int64_t> counts(static_cast<size_t>(lm.num_classes + 1), 0);
    for (uint16_t v : lm.data) ++counts.at(v);
    return counts;
}

std::set<int> classify_small_organs(const std::map<int, double>& mean_counts, double threshold) {
    std::set<int> small;
    for (const auto& [cls, mean] : mean_counts) {
        if (mean < threshold) small.insert(cls);
        if (mean <= 0.0)
            std::cerr << "warning: class " << cls
                      << " never appears in the statistics; treating it as small\n";
    }
    return small;
}

std::optional<Point3> organ_centroid(const LabelMap& lm, int cls) {
    double sz = 0.0, sy = 0.0, sx = 0.0;
    int64_t count = 0;
    for (int64_t z = 0; z < lm.shape[0]; ++z)
        for (int64_t y = 0; y < lm.shape[1]; ++y)
            for (int64_t x = 0; x < lm.shape[2]; ++x)
                if (lm.at(z, y, x) == cls) {
                    sz += static_cast<double>(z);
                    sy += static_cast<double>(y);
                    sx += static_cast<double>(x);
                    ++count;
                }
    if (count == 0) return std::nullopt;
    const auto n = static_cast<double>(count);
    return Point3{sz / n, sy / n, sx / n};
}

double equivalent_diameter(double mean_voxel_count) {
    if (!(mean_voxel_count > 0.0))
        throw std::invalid_argument("equivalent_diameter needs a positive voxel count");
    return 2.0 * std::cbrt(3.0 * mean_voxel_count / (4.0 * std::numbers::pi));
}

}  // namespace focusnet
