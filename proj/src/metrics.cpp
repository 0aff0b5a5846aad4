#include "focusnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace focusnet {

int64_t Mask::count() const {
    int64_t n = 0;
    for (uint8_t v : data) n += v != 0;
    return n;
}

Mask mask_of(const LabelMap& lm, int cls) {
    Mask m{lm.shape, std::vector<uint8_t>(lm.data.size(), 0)};
    for (size_t i = 0; i < lm.data.size(); ++i) m.data[i] = lm.data[i] == cls ? 1 : 0;
    return m;
}

std::optional<double> dsc(const Mask& pred, const Mask& gt) {
    if (pred.shape != gt.shape) throw std::invalid_argument("dsc: shape mismatch");
    int64_t a = 0, b = 0, both = 0;
    for (size_t i = 0; i < pred.data.size(); ++i) {
        const bool p = pred.data[i] != 0, g = gt.data[i] != 0;
        a += p;
        b += g;
        both += p && g;
    }
    if (a + b == 0) return std::nullopt;
    return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

std::vector<Index3> surface_voxels(const Mask& m) {
    static constexpr int64_t kOffsets[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0},
                                               {0, 1, 0},  {0, 0, -1}, {0, 0, 1}};
    std::vector<Index3> out;
    const auto& s = m.shape;
    for (int64_t z = 0; z < s[0]; ++z)
        for (int64_t y = 0; y < s[1]; ++y)
            for (int64_t x = 0; x < s[2]; ++x) {
                if (!m.at(z, y, x)) continue;
                for (const auto& o : kOffsets) {
                    const int64_t nz = z + o[0], ny = y + o[1], nx = x + o[2];
                    if (nz < 0 || ny < 0 || nx < 0 || nz >= s[0] || ny >= s[1] || nx >= s[2] ||
                        !m.at(nz, ny, nx)) {
                        out.push_back({z, y, x});
                        break;
                    }
                }
            }
    return out;
}

double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw std::invalid_argument("percentile of an empty set");
    std::sort(values.begin(), values.end());
    const double rank = q / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<size_t>(std::floor(rank));
    const auto hi = static_cast<size_t>(std::ceil(rank));
    return values[lo] + (rank - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Lower envelope of parabolas w (p - q)^2 + f(q) (Felzenszwalb & Huttenlocher), skipping
// infinite samples. `stride` walks one grid line inside a flat buffer.
void distance_1d(double* f, int64_t n, int64_t stride, double w, std::vector<int64_t>& v,
                 std::vector<double>& z, std::vector<double>& tmp) {
    int64_t k = -1;
    for (int64_t q = 0; q < n; ++q) {
        const double fq = f[q * stride];
        if (fq == kInf) continue;
        double s = 0.0;
        while (k >= 0) {
            const int64_t vk = v[static_cast<size_t>(k)];
            const double fv = f[vk * stride];
            s = ((fq + w * static_cast<double>(q * q)) - (fv + w * static_cast<double>(vk * vk))) /
                (2.0 * w * static_cast<double>(q - vk));
            if (s <= z[static_cast<size_t>(k)]) --k;
            else break;
        }
        if (k < 0) {
            k = 0;
            v[0] = q;
            z[0] = -kInf;
        } else {
            ++k;
            v[static_cast<size_t>(k)] = q;
            z[static_cast<size_t>(k)] = s;
        }
        z[static_cast<size_t>(k) + 1] = kInf;
    }
    if (k < 0) return;
    int64_t j = 0;
    for (int64_t q = 0; q < n; ++q) {
        while (z[static_cast<size_t>(j) + 1] < static_cast<double>(q)) ++j;
        const int64_t vj = v[static_cast<size_t>(j)];
        const double d = static_cast<double>(q - vj);
        tmp[static_cast<size_t>(q)] = w * d * d + f[vj * stride];
    }
    for (int64_t q = 0; q < n; ++q) f[q * stride] = tmp[static_cast<size_t>(q)];
}

// Squared Euclidean distance (mm^2) from each voxel of `box` to the nearest seed.
std::vector<double> squared_distance_map(const std::vector<uint8_t>& seeds, const Shape3& box,
                                         const Spacing3& spacing) {
    std::vector<double> f(seeds.size());
    for (size_t i = 0; i < seeds.size(); ++i) f[i] = seeds[i] ? 0.0 : kInf;
    const int64_t longest = std::max({box[0], box[1], box[2]});
    std::vector<int64_t> v(static_cast<size_t>(longest));
    std::vector<double> z(static_cast<size_t>(longest) + 1), tmp(static_cast<size_t>(longest));
    const int64_t sx = 1, sy = box[2], sz = box[1] * box[2];
    for (int64_t y = 0; y < box[1]; ++y)
        for (int64_t x = 0; x < box[2]; ++x)
            distance_1d(&f[static_cast<size_t>(y * sy + x * sx)], box[0], sz,
                        spacing[0] * spacing[0], v, z, tmp);
    for (int64_t zz = 0; zz < box[0]; ++zz)
        for (int64_t x = 0; x < box[2]; ++x)
            distance_1d(&f[static_cast<size_t>(zz * sz + x * sx)], box[1], sy,
                        spacing[1] * spacing[1], v, z, tmp);
    for (int64_t zz = 0; zz < box[0]; ++zz)
        for (int64_t y = 0; y < box[1]; ++y)
            distance_1d(&f[static_cast<size_t>(zz * sz + y * sy)], box[2], sx,
                        spacing[2] * spacing[2], v, z, tmp);
    return f;
}

// Distances from each `from` voxel to the nearest `to` voxel, evaluated in the box
// [lo, lo + box) which must contain both sets.
std::vector<double> directed_distances(const std::vector<Index3>& from,
                                       const std::vector<Index3>& to, const Index3& lo,
                                       const Shape3& box, const Spacing3& spacing) {
    std::vector<uint8_t> seeds(static_cast<size_t>(voxel_count(box)), 0);
    for (const auto& p : to)
        seeds[static_cast<size_t>(linear_index(box, p[0] - lo[0], p[1] - lo[1], p[2] - lo[2]))] = 1;
    const auto d2 = squared_distance_map(seeds, box, spacing);
    std::vector<double> out;
    out.reserve(from.size());
    for (const auto& p : from)
        out.push_back(std::sqrt(
            d2[static_cast<size_t>(linear_index(box, p[0] - lo[0], p[1] - lo[1], p[2] - lo[2]))]));
    return out;
}

}  // namespace

std::optional<double> hd95(const Mask& pred, const Mask& gt, const Spacing3& spacing) {
    if (pred.shape != gt.shape) throw std::invalid_argument("hd95: shape mismatch");
    const auto sa = surface_voxels(pred);
    const auto sb = surface_voxels(gt);
    if (sa.empty() || sb.empty()) return std::nullopt;

    Index3 lo{std::numeric_limits<int64_t>::max(), std::numeric_limits<int64_t>::max(),
              std::numeric_limits<int64_t>::max()};
    Index3 hi{-1, -1, -1};
    for (const auto* set : {&sa, &sb})
        for (const auto& p : *set)
            for (int a = 0; a < 3; ++a) {
                lo[a] = std::min(lo[a], p[a]);
                hi[a] = std::max(hi[a], p[a]);
            }
    const Shape3 box{hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1};
    const double ab = percentile(directed_distances(sa, sb, lo, box, spacing), 95.0);
    const double ba = percentile(directed_distances(sb, sa, lo, box, spacing), 95.0);
    return std::max(ab, ba);
}

std::vector<OrganReport> evaluate_case(const LabelMap& pred, const LabelMap& gt,
                                       const std::vector<OrganSpec>& organs,
                                       const std::string& case_id) {
    if (!pred.same_geometry(gt)) throw std::invalid_argument("evaluate_case: geometry mismatch");
    std::vector<OrganReport> out;
    for (const auto& o : organs) {
        const Mask p = mask_of(pred, o.id);
        const Mask g = mask_of(gt, o.id);
        OrganReport r;
        r.organ_id = o.id;
        r.case_id = case_id;
        r.dsc = dsc(p, g);
        r.hd95 = hd95(p, g, gt.spacing);
        r.gt_voxels = g.count();
        r.pred_voxels = p.count();
        out.push_back(std::move(r));
    }
    return out;
}

namespace {

void mean_std(const std::vector<double>& v, double& mean, double& sd) {
    mean = sd = 0.0;
    if (v.empty()) return;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    if (v.size() < 2) return;
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
}

std::string fmt(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(6) << v;
    return os.str();
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : "NA"; }

std::optional<double> parse_opt(const std::string& s) {
    if (s == "NA") return std::nullopt;
    size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("bad number '" + s + "'");
    return v;
}

}  // namespace

std::vector<AggregateRow> aggregate(const std::vector<OrganReport>& reports,
                                    const std::vector<OrganSpec>& organs) {
    std::vector<AggregateRow> rows;
    for (const auto& o : organs) {
        AggregateRow row;
        row.organ_id = o.id;
        row.name = o.name;
        row.is_small = o.is_small;
        std::vector<double> d, h;
        for (const auto& r : reports) {
            if (r.organ_id != o.id) continue;
            ++row.cases;
            if (r.dsc) d.push_back(*r.dsc);
            else ++row.dsc_skipped;
            if (r.hd95) h.push_back(*r.hd95);
            else ++row.hd95_skipped;
        }
        row.dsc_count = static_cast<int>(d.size());
        row.hd95_count = static_cast<int>(h.size());
        mean_std(d, row.dsc_mean, row.dsc_std);
        mean_std(h, row.hd95_mean, row.hd95_std);
        rows.push_back(std::move(row));
    }
    return rows;
}

std::optional<double> group_mean_dsc(const std::vector<AggregateRow>& rows, bool small) {
    double sum = 0.0;
    int n = 0;
    for (const auto& r : rows)
        if (r.is_small == small && r.dsc_count > 0) {
            sum += r.dsc_mean;
            ++n;
        }
    if (n == 0) return std::nullopt;
    return sum / n;
}

void write_case_table(std::ostream& out, const std::vector<OrganReport>& reports) {
    out << "organ,case,dsc,hd95,gt_voxels,pred_voxels\n";
    for (const auto& r : reports)
        out << r.organ_id << ',' << r.case_id << ',' << fmt(r.dsc) << ',' << fmt(r.hd95) << ','
            << r.gt_voxels << ',' << r.pred_voxels << '\n';
}

std::vector<OrganReport> read_case_table(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != "organ,case,dsc,hd95,gt_voxels,pred_voxels")
        throw std::invalid_argument("report: missing or unexpected header row");
    std::vector<OrganReport> out;
    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cols.push_back(cell);
        if (cols.size() != 6)
            throw std::invalid_argument("report row " + std::to_string(row) + ": expected 6 columns");
        try {
            OrganReport r;
            r.organ_id = std::stoi(cols[0]);
            r.case_id = cols[1];
            r.dsc = parse_opt(cols[2]);
            r.hd95 = parse_opt(cols[3]);
            r.gt_voxels = std::stoll(cols[4]);
            r.pred_voxels = std::stoll(cols[5]);
            out.push_back(std::move(r));
        } catch (const std::exception& e) {
            throw std::invalid_argument("report row " + std::to_string(row) + ": " + e.what());
        }
    }
    return out;
}

void write_aggregate_table(std::ostream& out, const std::vector<AggregateRow>& rows) {
    out << "organ,name,is_small,cases,dsc_n,dsc_skipped,dsc_mean,dsc_std,hd95_n,hd95_skipped,"
           "hd95_mean,hd95_std\n";
    for (const auto& r : rows)
        out << r.organ_id << ',' << r.name << ',' << (r.is_small ? 1 : 0) << ',' << r.cases << ','
            << r.dsc_count << ',' << r.dsc_skipped << ',' << fmt(r.dsc_mean) << ','
            << fmt(r.dsc_std) << ',' << r.hd95_count << ',' << r.hd95_skipped << ','
            << fmt(r.hd95_mean) << ',' << fmt(r.hd95_std) << '\n';
}

}  // namespace focusnet
