#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "focusnet/voldata.hpp"

namespace focusnet {

/// Binary voxel mask (0/1) over a grid.
struct Mask {
    Shape3 shape{0, 0, 0};
    std::vector<uint8_t> data;

    bool at(int64_t z, int64_t y, int64_t x) const { return data[linear_index(shape, z, y, x)] != 0; }
    int64_t count() const;
};

Mask mask_of(const LabelMap& lm, int cls);

/// 2|A n B| / (|A| + |B|); nullopt when both masks are empty.
std::optional<double> dsc(const Mask& pred, const Mask& gt);

/// Foreground voxels with a 6-connected background or out-of-bounds neighbour, in
/// raster order.
std::vector<Index3> surface_voxels(const Mask& m);

/// Linear-interpolation percentile (q in [0,100]) of unsorted values.
double percentile(std::vector<double> values, double q);

/// Symmetric 95th-percentile surface distance in mm; nullopt when either mask is empty.
std::optional<double> hd95(const Mask& pred, const Mask& gt, const Spacing3& spacing);

struct OrganReport {
    int organ_id = 0;
    std::string case_id;
    std::optional<double> dsc;
    std::optional<double> hd95;
    int64_t gt_voxels = 0;
    int64_t pred_voxels = 0;
};

std::vector<OrganReport> evaluate_case(const LabelMap& pred, const LabelMap& gt,
                                       const std::vector<OrganSpec>& organs,
                                       const std::string& case_id);

struct AggregateRow {
    int organ_id = 0;
    std::string name;
    bool is_small = false;
    int cases = 0;
    int dsc_count = 0;     // defined entries entering the statistics
    int dsc_skipped = 0;
    double dsc_mean = 0.0;
    double dsc_std = 0.0;  // sample standard deviation; 0 for fewer than two entries
    int hd95_count = 0;
    int hd95_skipped = 0;
    double hd95_mean = 0.0;
    double hd95_std = 0.0;
};

/// Per-organ mean and standard deviation over cases, skipping undefined entries.
std::vector<AggregateRow> aggregate(const std::vector<OrganReport>& reports,
                                    const std::vector<OrganSpec>& organs);

/// Mean of per-organ mean DSC over organs of the given size group with at least one
/// defined entry; nullopt when there are none.
std::optional<double> group_mean_dsc(const std::vector<AggregateRow>& rows, bool small);

// Delimited tables. Per-case columns: organ,case,dsc,hd95,gt_voxels,pred_voxels.
// Undefined values are written as NA; reals use fixed notation with 6 decimals.
void write_case_table(std::ostream& out, const std::vector<OrganReport>& reports);
std::vector<OrganReport> read_case_table(std::istream& in);
void write_aggregate_table(std::ostream& out, const std::vector<AggregateRow>& rows);

}  // namespace focusnet
