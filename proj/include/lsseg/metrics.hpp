#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lsseg/volume.hpp"

namespace lsseg {

/// Per-case scores. rvd is signed; distances are in millimetres.
struct CaseReport {
    double dice = 0.0;
    double voe = 0.0;
    double rvd = 0.0;
    double assd_mm = 0.0;
    double mssd_mm = 0.0;

    friend bool operator==(const CaseReport&, const CaseReport&) = default;
};

// Masks: any non-zero voxel is foreground. Both masks must share a grid.
double dice(const Volume& pred, const Volume& ref);
double voe(const Volume& pred, const Volume& ref);
double rvd(const Volume& pred, const Volume& ref);

/// Foreground voxels with at least one background 6-neighbour; outside the
/// grid counts as background. Returned as a 0/1 label volume.
Volume surface_voxels(const Volume& mask);

/// Symmetric surface distances between the two masks using voxel-centre
/// Euclidean distance scaled by `spacing`.
struct SurfaceDistances {
    double assd_mm = 0.0;
    double mssd_mm = 0.0;
};
SurfaceDistances surface_distances(const Volume& pred, const Volume& ref, const Spacing3& spacing);
double assd(const Volume& pred, const Volume& ref, const Spacing3& spacing);
double mssd(const Volume& pred, const Volume& ref, const Spacing3& spacing);

/// All five metrics. Undefined values (empty reference for rvd, an empty
/// mask for surface distances) throw DataError unless `undefined_as_nan`.
CaseReport evaluate_case(const Volume& pred, const Volume& ref, const Spacing3& spacing,
                         bool undefined_as_nan = false);

/// Per-metric arithmetic mean; NaN entries are skipped (a metric that is NaN
/// in every report stays NaN). Throws UsageError for an empty list.
CaseReport aggregate(const std::vector<CaseReport>& reports);

struct ReportRow {
    std::string name;
    CaseReport report;
};

/// CSV text: header `case,dice,voe,rvd,assd_mm,mssd_mm`, one row per case,
/// then a `mean` row; values printed with 6 significant digits.
std::string format_report_csv(const std::vector<ReportRow>& rows);
void write_report_csv(const std::vector<ReportRow>& rows, const std::filesystem::path& path);

/// Parses CSV text produced by format_report_csv (mean row included).
std::vector<ReportRow> parse_report_csv(const std::string& text);

}  // namespace lsseg
