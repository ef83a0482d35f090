#include "lsseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace lsseg {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_grid(const Volume& a, const Volume& b) {
    if (!a.same_grid(b))
        throw UsageError("metric masks are on different grids: " + std::to_string(a.dims().x) + "x" +
                         std::to_string(a.dims().y) + "x" + std::to_string(a.dims().z) + " vs " +
                         std::to_string(b.dims().x) + "x" + std::to_string(b.dims().y) + "x" +
                         std::to_string(b.dims().z));
}

struct Counts {
    std::size_t p = 0;
    std::size_t r = 0;
    std::size_t both = 0;
};

Counts count(const Volume& pred, const Volume& ref) {
    check_grid(pred, ref);
    Counts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool a = pred[i] != 0.0f;
        const bool b = ref[i] != 0.0f;
        c.p += a;
        c.r += b;
        c.both += a && b;
    }
    return c;
}

double dice_of(const Counts& c) {
    if (c.p + c.r == 0) return 1.0;
    return 2.0 * static_cast<double>(c.both) / static_cast<double>(c.p + c.r);
}

double voe_of(const Counts& c) {
    const std::size_t uni = c.p + c.r - c.both;
    if (uni == 0) return 0.0;
    return 1.0 - static_cast<double>(c.both) / static_cast<double>(uni);
}

// 1-D squared distance transform along a strided line (lower envelope of
// parabolas). Entries equal to +inf are not feature points.
void edt_1d(double* f, std::size_t n, std::size_t stride, double step, std::vector<double>& val,
            std::vector<int>& v, std::vector<double>& z) {
    val.resize(n);
    v.resize(n);
    z.resize(n + 1);
    for (std::size_t i = 0; i < n; ++i) val[i] = f[i * stride];
    int k = -1;
    auto pos = [step](int q) { return q * step; };
    for (int q = 0; q < static_cast<int>(n); ++q) {
        if (val[q] == kInf) continue;
        const double fq = val[q] + pos(q) * pos(q);
        while (k >= 0) {
            const int p = v[k];
            const double s = (fq - (val[p] + pos(p) * pos(p))) / (2.0 * (pos(q) - pos(p)));
            if (s <= z[k]) {
                --k;
            } else {
                ++k;
                v[k] = q;
                z[k] = s;
                break;
            }
        }
        if (k < 0) {
            k = 0;
            v[0] = q;
            z[0] = -kInf;
        }
        z[k + 1] = kInf;
    }
    if (k < 0) return;  // no feature points on this line
    int j = 0;
    for (int q = 0; q < static_cast<int>(n); ++q) {
        while (z[j + 1] < pos(q)) ++j;
        // integer offset first: an exact zero at the feature point itself,
        // even where the compiler fuses multiply and subtract
        const double d = static_cast<double>(q - v[j]) * step;
        f[q * stride] = val[v[j]] + d * d;
    }
}

// Squared distance (mm^2) from every voxel of the grid to the nearest feature.
std::vector<double> squared_edt(const std::vector<std::uint8_t>& feature, const Dims3& d, const Spacing3& s) {
    std::vector<double> f(feature.size());
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = feature[i] ? 0.0 : kInf;
    std::vector<double> val;
    std::vector<int> v;
    std::vector<double> z;
    const std::size_t nx = d.x, ny = d.y, nz = d.z;
    for (std::size_t k = 0; k < nz; ++k)
        for (std::size_t j = 0; j < ny; ++j) edt_1d(f.data() + (k * ny + j) * nx, nx, 1, s.x, val, v, z);
    for (std::size_t k = 0; k < nz; ++k)
        for (std::size_t i = 0; i < nx; ++i) edt_1d(f.data() + k * ny * nx + i, ny, nx, s.y, val, v, z);
    for (std::size_t j = 0; j < ny; ++j)
        for (std::size_t i = 0; i < nx; ++i) edt_1d(f.data() + j * nx + i, nz, nx * ny, s.z, val, v, z);
    return f;
}

// Surface of a byte mask on a (sub)grid; outside counts as background.
std::vector<std::uint8_t> surface_of(const std::vector<std::uint8_t>& m, const Dims3& d) {
    std::vector<std::uint8_t> out(m.size(), 0);
    auto at = [&](int x, int y, int z) -> bool {
        if (x < 0 || y < 0 || z < 0 || x >= d.x || y >= d.y || z >= d.z) return false;
        return m[(static_cast<std::size_t>(z) * d.y + y) * d.x + x] != 0;
    };
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x) {
                const std::size_t i = (static_cast<std::size_t>(z) * d.y + y) * d.x + x;
                if (!m[i]) continue;
                out[i] = !at(x - 1, y, z) || !at(x + 1, y, z) || !at(x, y - 1, z) || !at(x, y + 1, z) ||
                         !at(x, y, z - 1) || !at(x, y, z + 1);
            }
    return out;
}

std::string format_value(double v) {
    if (std::isnan(v)) return "nan";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

}  // namespace

double dice(const Volume& pred, const Volume& ref) { return dice_of(count(pred, ref)); }

double voe(const Volume& pred, const Volume& ref) { return voe_of(count(pred, ref)); }

double rvd(const Volume& pred, const Volume& ref) {
    const Counts c = count(pred, ref);
    if (c.r == 0) throw DataError("relative volume difference is undefined for an empty reference");
    return (static_cast<double>(c.p) - static_cast<double>(c.r)) / static_cast<double>(c.r);
}

Volume surface_voxels(const Volume& mask) {
    std::vector<std::uint8_t> m(mask.size());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = mask[i] != 0.0f;
    const auto s = surface_of(m, mask.dims());
    Volume out(mask.dims(), mask.spacing(), VolumeKind::Labels, ScalarType::U8);
    for (std::size_t i = 0; i < s.size(); ++i) out[i] = s[i];
    return out;
}

SurfaceDistances surface_distances(const Volume& pred, const Volume& ref, const Spacing3& spacing) {
    check_grid(pred, ref);
    if (!(spacing.x > 0 && spacing.y > 0 && spacing.z > 0)) throw ConfigError("spacing must be positive");
    // Work on the bounding box of both masks: every feature point lies inside it.
    const Dims3& d = pred.dims();
    int x0 = d.x, y0 = d.y, z0 = d.z, x1 = -1, y1 = -1, z1 = -1;
    bool any_p = false, any_r = false;
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x) {
                const std::size_t i = pred.index(x, y, z);
                const bool a = pred[i] != 0.0f, b = ref[i] != 0.0f;
                any_p |= a;
                any_r |= b;
                if (!a && !b) continue;
                x0 = std::min(x0, x);
                x1 = std::max(x1, x);
                y0 = std::min(y0, y);
                y1 = std::max(y1, y);
                z0 = std::min(z0, z);
                z1 = std::max(z1, z);
            }
    if (!any_p || !any_r) throw DataError("undefined surface distance: " + std::string(!any_p ? "prediction" : "reference") +
                                          " mask is empty");

    const Dims3 bd{x1 - x0 + 1, y1 - y0 + 1, z1 - z0 + 1};
    std::vector<std::uint8_t> a(bd.count()), b(bd.count());
    for (int z = 0; z < bd.z; ++z)
        for (int y = 0; y < bd.y; ++y)
            for (int x = 0; x < bd.x; ++x) {
                const std::size_t src = pred.index(x + x0, y + y0, z + z0);
                const std::size_t dst = (static_cast<std::size_t>(z) * bd.y + y) * bd.x + x;
                a[dst] = pred[src] != 0.0f;
                b[dst] = ref[src] != 0.0f;
            }
    // Voxels just outside the box are background in both masks, and the grid
    // border is background too, so the sub-grid surface equals the full one.
    const auto sa = surface_of(a, bd);
    const auto sb = surface_of(b, bd);
    const auto da = squared_edt(sa, bd, spacing);
    const auto db = squared_edt(sb, bd, spacing);

    double sum = 0.0;
    double mx = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < sa.size(); ++i) {
        if (sa[i]) {
            const double dist = std::sqrt(db[i]);
            sum += dist;
            mx = std::max(mx, dist);
            ++n;
        }
        if (sb[i]) {
            const double dist = std::sqrt(da[i]);
            sum += dist;
            mx = std::max(mx, dist);
            ++n;
        }
    }
    return {sum / static_cast<double>(n), mx};
}

double assd(const Volume& pred, const Volume& ref, const Spacing3& spacing) {
    return surface_distances(pred, ref, spacing).assd_mm;
}

double mssd(const Volume& pred, const Volume& ref, const Spacing3& spacing) {
    return surface_distances(pred, ref, spacing).mssd_mm;
}

CaseReport evaluate_case(const Volume& pred, const Volume& ref, const Spacing3& spacing, bool undefined_as_nan) {
    const Counts c = count(pred, ref);
    CaseReport r;
    r.dice = dice_of(c);
    r.voe = voe_of(c);
    if (c.r == 0) {
        if (!undefined_as_nan) throw DataError("relative volume difference is undefined for an empty reference");
        r.rvd = kNaN;
    } else {
        r.rvd = (static_cast<double>(c.p) - static_cast<double>(c.r)) / static_cast<double>(c.r);
    }
    if (c.p == 0 || c.r == 0) {
        if (!undefined_as_nan)
            throw DataError(std::string("undefined surface distance: ") + (c.p == 0 ? "prediction" : "reference") +
                            " mask is empty");
        r.assd_mm = r.mssd_mm = kNaN;
    } else {
        const auto sd = surface_distances(pred, ref, spacing);
        r.assd_mm = sd.assd_mm;
        r.mssd_mm = sd.mssd_mm;
    }
    return r;
}

CaseReport aggregate(const std::vector<CaseReport>& reports) {
    if (reports.empty()) throw UsageError("aggregate needs at least one report");
    auto mean = [&](double CaseReport::*m) {
        double s = 0.0;
        std::size_t n = 0;
        for (const auto& r : reports)
            if (!std::isnan(r.*m)) {
                s += r.*m;
                ++n;
            }
        return n == 0 ? kNaN : s / static_cast<double>(n);
    };
    return {mean(&CaseReport::dice), mean(&CaseReport::voe), mean(&CaseReport::rvd), mean(&CaseReport::assd_mm),
            mean(&CaseReport::mssd_mm)};
}

std::string format_report_csv(const std::vector<ReportRow>& rows) {
    std::string out = "case,dice,voe,rvd,assd_mm,mssd_mm\n";
    auto line = [&](const std::string& name, const CaseReport& r) {
        if (name.find_first_of(",\n\"") != std::string::npos)
            throw UsageError("case name '" + name + "' cannot be written to CSV");
        out += name + "," + format_value(r.dice) + "," + format_value(r.voe) + "," + format_value(r.rvd) + "," +
               format_value(r.assd_mm) + "," + format_value(r.mssd_mm) + "\n";
    };
    std::vector<CaseReport> reports;
    for (const auto& row : rows) {
        line(row.name, row.report);
        reports.push_back(row.report);
    }
    if (!reports.empty()) line("mean", aggregate(reports));
    return out;
}

void write_report_csv(const std::vector<ReportRow>& rows, const std::filesystem::path& path) {
    const std::string text = format_report_csv(rows);
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << text;
    if (!out) throw IoError("failed writing " + path.string());
}

std::vector<ReportRow> parse_report_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "case,dice,voe,rvd,assd_mm,mssd_mm")
        throw FormatError("report CSV: missing or unexpected header");
    std::vector<ReportRow> rows;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (cells.size() != 6)
            throw FormatError("report CSV line " + std::to_string(lineno) + ": expected 6 fields, got " +
                              std::to_string(cells.size()));
        double v[5];
        for (int k = 0; k < 5; ++k) {
            const std::string& c = cells[k + 1];
            if (c == "nan") {
                v[k] = kNaN;
                continue;
            }
            std::size_t used = 0;
            try {
                v[k] = std::stod(c, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != c.size() || c.empty())
                throw FormatError("report CSV line " + std::to_string(lineno) + ": bad number '" + c + "'");
        }
        rows.push_back({cells[0], CaseReport{v[0], v[1], v[2], v[3], v[4]}});
    }
    return rows;
}

}  // namespace lsseg
