#include "twinforge/beam_tasks.hpp"

#include "twinforge/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace twinforge {

BeamCodebook BeamCodebook::uniform(int beams, double width)
{
    if (beams < 2)
        throw std::invalid_argument("codebook: at least two beams are required");
    BeamCodebook cb;
    cb.centers.resize(beams);
    const double spacing = 2.0 * std::numbers::pi / beams;
    for (int b = 0; b < beams; ++b)
        cb.centers[b] = wrap_angle(spacing * b);
    cb.width = width > 0.0 ? width : 0.5 * spacing;
    return cb;
}

void BeamCodebook::validate() const
{
    if (centers.size() < 2)
        throw std::invalid_argument("codebook: at least two beams are required");
    if (!(width > 0.0))
        throw std::invalid_argument("codebook: beam width must be positive");
}

double BeamCodebook::gain(int beam, double angle) const
{
    if (beam < 0 || beam >= size())
        throw std::out_of_range("codebook: beam index " + std::to_string(beam) + " out of range");
    const double d = wrap_angle(angle - centers[beam]);
    return std::exp(-d * d / (2.0 * width * width));
}

double beam_capacity(const std::vector<PathSolution>& paths, const MaterialParams& materials,
                     const BeamCodebook& codebook, int beam, double snr)
{
    if (!(snr >= 0.0))
        throw std::invalid_argument("beam_capacity: snr must be nonnegative");
    double power = 0.0;
    for (const PathSolution& p : paths) {
        const double g = p.gain(materials);
        power += g * g * codebook.gain(beam, p.aod);
    }
    return std::log2(1.0 + snr * power);
}

std::vector<CkmSample> build_ckm_dataset(const Scene& scene, const MaterialParams& materials,
                                         const std::vector<Point>& grid, const BeamCodebook& codebook, double snr,
                                         int max_order)
{
    if (grid.empty())
        throw std::invalid_argument("build_ckm_dataset: empty grid");
    codebook.validate();
    scene.validate();
    check_materials(materials, scene.material_count());
    std::vector<CkmSample> out;
    out.reserve(grid.size());
    for (const Point& rx : grid) {
        CkmSample s;
        s.location = rx;
        s.capacity = Eigen::VectorXd::Zero(codebook.size());
        const auto paths = trace_paths(scene, rx, max_order);
        for (int b = 0; b < codebook.size(); ++b)
            s.capacity[b] = beam_capacity(paths, materials, codebook, b, snr);
        // Capacities equal up to rounding count as ties.
        const double top = s.capacity.maxCoeff();
        for (int b = 0; b < codebook.size(); ++b)
            if (s.capacity[b] >= top - 1e-12 * top) {
                s.best_beam = b;
                break;
            }
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<AodSample> build_aod_dataset(const Scene& scene, const MaterialParams& materials,
                                         const std::vector<Point>& grid, int max_order)
{
    if (grid.empty())
        throw std::invalid_argument("build_aod_dataset: empty grid");
    scene.validate();
    check_materials(materials, scene.material_count());
    std::vector<AodSample> out;
    for (const Point& rx : grid) {
        const auto paths = trace_paths(scene, rx, max_order);
        if (paths.empty())
            continue;
        AodSample s;
        s.location = rx;
        double best = -1.0;
        for (const PathSolution& p : paths) {
            const double g = std::abs(p.gain(materials));
            if (g > best) {
                best = g;
                s.aod = p.aod;
            }
            if (p.order() == 0)
                s.los = true;
        }
        out.push_back(s);
    }
    return out;
}

double pointing_error(double predicted, double truth)
{
    return std::abs(wrap_angle(predicted - truth)) * 180.0 / std::numbers::pi;
}

double evaluate_beam_model(const std::function<int(const Point&)>& predictor, const std::vector<CkmSample>& test)
{
    if (test.empty())
        throw std::invalid_argument("evaluate_beam_model: empty test set");
    double sum = 0.0;
    for (const CkmSample& s : test) {
        const int b = predictor(s.location);
        if (b < 0 || b >= s.capacity.size())
            throw std::out_of_range("evaluate_beam_model: predicted beam " + std::to_string(b) + " out of range");
        sum += s.capacity[b];
    }
    return sum / static_cast<double>(test.size());
}

void write_ckm_csv(std::ostream& out, const std::vector<CkmSample>& data)
{
    const Eigen::Index beams = data.empty() ? 0 : data.front().capacity.size();
    out << "x,y,best_beam";
    for (Eigen::Index b = 0; b < beams; ++b)
        out << ",cap_" << b;
    out << "\n" << std::setprecision(17);
    for (const CkmSample& s : data) {
        if (s.capacity.size() != beams)
            throw std::invalid_argument("write_ckm_csv: samples with differing beam counts");
        out << s.location.x() << "," << s.location.y() << "," << s.best_beam;
        for (Eigen::Index b = 0; b < beams; ++b)
            out << "," << s.capacity[b];
        out << "\n";
    }
}

namespace {

std::vector<double> numeric_row(std::string line, int line_no, const char* what)
{
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream is(line);
    std::vector<double> v;
    double x = 0.0;
    while (is >> x)
        v.push_back(x);
    if (!is.eof())
        throw std::invalid_argument(std::string(what) + " line " + std::to_string(line_no) + ": malformed row");
    return v;
}

} // namespace

std::vector<CkmSample> read_ckm_csv(std::istream& in)
{
    std::vector<CkmSample> out;
    std::string line;
    int line_no = 0;
    std::size_t width = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line.rfind("x,", 0) == 0)
            continue;
        const auto v = numeric_row(line, line_no, "ckm csv");
        if (v.size() < 5 || (width != 0 && v.size() != width))
            throw std::invalid_argument("ckm csv line " + std::to_string(line_no) + ": wrong number of fields");
        width = v.size();
        CkmSample s;
        s.location = Point(v[0], v[1]);
        s.best_beam = static_cast<int>(v[2]);
        s.capacity = Eigen::Map<const Eigen::VectorXd>(v.data() + 3, static_cast<Eigen::Index>(v.size() - 3));
        if (s.best_beam < 0 || s.best_beam >= s.capacity.size())
            throw std::invalid_argument("ckm csv line " + std::to_string(line_no) + ": best_beam out of range");
        out.push_back(std::move(s));
    }
    return out;
}

void write_aod_csv(std::ostream& out, const std::vector<AodSample>& data)
{
    out << "x,y,aod_rad,los_flag\n" << std::setprecision(17);
    for (const AodSample& s : data)
        out << s.location.x() << "," << s.location.y() << "," << s.aod << "," << (s.los ? 1 : 0) << "\n";
}

std::vector<AodSample> read_aod_csv(std::istream& in)
{
    std::vector<AodSample> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line.rfind("x,", 0) == 0)
            continue;
        const auto v = numeric_row(line, line_no, "aod csv");
        if (v.size() != 4 || (v[3] != 0.0 && v[3] != 1.0))
            throw std::invalid_argument("aod csv line " + std::to_string(line_no) + ": expected x,y,aod_rad,los_flag");
        out.push_back({Point(v[0], v[1]), v[2], v[3] == 1.0});
    }
    return out;
}

} // namespace twinforge
