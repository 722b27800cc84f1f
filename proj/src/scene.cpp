#include "twinforge/scene.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace twinforge {

namespace {

constexpr double kParamEps = 1e-12;

std::string point_str(const Point& p)
{
    std::ostringstream os;
    os << "(" << p.x() << ", " << p.y() << ")";
    return os.str();
}

double side_of(const Wall& wall, const Point& p)
{
    const Point d = wall.b - wall.a;
    return cross2<double>(d, p - wall.a) / d.norm();
}

bool leg_blocked(const Scene& scene, const Point& from, const Point& to, int skip_a, int skip_b)
{
    for (int w = 0; w < static_cast<int>(scene.walls.size()); ++w) {
        if (w == skip_a || w == skip_b)
            continue;
        const Wall& wall = scene.walls[w];
        if (segments_intersect<double>(from, to, wall.a, wall.b, kParamEps))
            return true;
    }
    return false;
}

// Builds the path for one wall sequence, or returns false when the sequence
// has no valid unblocked specular realization.
bool realize_sequence(const Scene& scene, const Point& rx, const std::vector<int>& sequence, PathSolution& out)
{
    const int order = static_cast<int>(sequence.size());
    std::vector<Point> images(order + 1);
    images[0] = scene.tx;
    for (int i = 0; i < order; ++i) {
        const Wall& wall = scene.walls[sequence[i]];
        images[i + 1] = reflect_across_line<double>(images[i], wall.a, wall.b);
    }

    std::vector<Point> vertices(order + 2);
    vertices.front() = scene.tx;
    vertices.back() = rx;
    Point target = rx;
    for (int i = order; i >= 1; --i) {
        const Wall& wall = scene.walls[sequence[i - 1]];
        const auto hit = line_crossing<double>(images[i], target, wall.a, wall.b);
        if (!hit)
            return false;
        const auto [t, s] = *hit;
        if (t <= kParamEps || t >= 1 - kParamEps || s <= kParamEps || s >= 1 - kParamEps)
            return false;
        target = images[i] + t * (target - images[i]);
        vertices[i] = target;
    }

    for (int i = 1; i <= order; ++i) {
        const Wall& wall = scene.walls[sequence[i - 1]];
        const double before = side_of(wall, vertices[i - 1]);
        const double after = side_of(wall, vertices[i + 1]);
        const double tol = 1e-12 * std::max(1.0, wall.length());
        if (std::abs(before) <= tol || std::abs(after) <= tol || (before > 0) != (after > 0))
            return false;
    }

    for (int leg = 0; leg <= order; ++leg) {
        if ((vertices[leg + 1] - vertices[leg]).norm() <= 0.0)
            return false;
        const int skip_a = leg >= 1 ? sequence[leg - 1] : -1;
        const int skip_b = leg < order ? sequence[leg] : -1;
        if (leg_blocked(scene, vertices[leg], vertices[leg + 1], skip_a, skip_b))
            return false;
    }

    out.interaction_walls = sequence;
    out.interaction_materials.clear();
    out.bounces_per_material.assign(scene.material_count(), 0);
    for (int w : sequence) {
        const int m = scene.walls[w].material;
        out.interaction_materials.push_back(m);
        ++out.bounces_per_material[m];
    }
    out.vertices = std::move(vertices);
    out.length = (images.back() - rx).norm();
    out.delay = out.length / kSpeedOfLight;
    out.aod = direction_angle<double>(scene.tx, out.vertices[1]);
    out.aoa = direction_angle<double>(rx, out.vertices[order]);
    out.base_gain = 1.0 / out.length;
    return true;
}

void enumerate(const Scene& scene, const Point& rx, int max_order, std::vector<int>& sequence,
               std::vector<PathSolution>& paths)
{
    PathSolution path;
    if (realize_sequence(scene, rx, sequence, path))
        paths.push_back(std::move(path));
    if (static_cast<int>(sequence.size()) == max_order)
        return;
    for (int w = 0; w < static_cast<int>(scene.walls.size()); ++w) {
        if (!sequence.empty() && sequence.back() == w)
            continue;
        sequence.push_back(w);
        enumerate(scene, rx, max_order, sequence, paths);
        sequence.pop_back();
    }
}

} // namespace

int Scene::material_count() const
{
    int count = 0;
    for (const Wall& w : walls)
        count = std::max(count, w.material + 1);
    return count;
}

void Scene::validate() const
{
    if (!(carrier_hz > 0.0))
        throw std::invalid_argument("scene: carrier frequency must be positive");
    for (std::size_t i = 0; i < walls.size(); ++i) {
        const Wall& w = walls[i];
        if (!(w.length() > 0.0))
            throw std::invalid_argument("scene: wall " + std::to_string(i) + " has zero length");
        if (w.material < 0)
            throw std::invalid_argument("scene: wall " + std::to_string(i) + " has a negative material index");
        if (point_segment_distance<double>(tx, w.a, w.b) <= 1e-12 * std::max(1.0, w.length()))
            throw std::invalid_argument("scene: transmitter " + point_str(tx) + " lies on wall " +
                                        std::to_string(i));
    }
}

double PathSolution::gain(const MaterialParams& materials) const
{
    double g = base_gain;
    for (int m : interaction_materials)
        g *= materials[m];
    return g;
}

double PathSolution::gain_derivative(const MaterialParams& materials, int material) const
{
    if (material >= static_cast<int>(bounces_per_material.size()))
        return 0.0;
    const int n = bounces_per_material[material];
    if (n == 0)
        return 0.0;
    double d = base_gain * n * std::pow(materials[material], n - 1);
    for (int m : interaction_materials)
        if (m != material)
            d *= materials[m];
    return d;
}

void check_materials(const MaterialParams& materials, int required_count)
{
    if (materials.size() < required_count)
        throw std::invalid_argument("materials: expected at least " + std::to_string(required_count) +
                                    " entries, got " + std::to_string(materials.size()));
    for (Eigen::Index i = 0; i < materials.size(); ++i)
        if (!(materials[i] >= 0.0 && materials[i] <= 1.0))
            throw std::invalid_argument("materials: entry " + std::to_string(i) + " outside [0, 1]");
}

std::vector<PathSolution> trace_paths(const Scene& scene, const Point& rx, int max_order)
{
    scene.validate();
    if (max_order < 0 || max_order > kMaxReflectionOrder)
        throw std::invalid_argument("trace_paths: max_order must be in [0, " +
                                    std::to_string(kMaxReflectionOrder) + "]");
    if ((rx - scene.tx).norm() <= 0.0)
        throw std::invalid_argument("trace_paths: receiver coincides with transmitter");

    std::vector<PathSolution> paths;
    std::vector<int> sequence;
    enumerate(scene, rx, max_order, sequence, paths);
    std::sort(paths.begin(), paths.end(), [](const PathSolution& l, const PathSolution& r) {
        if (l.order() != r.order())
            return l.order() < r.order();
        if (l.length != r.length)
            return l.length < r.length;
        return l.interaction_walls < r.interaction_walls;
    });
    return paths;
}

Scene perturb_geometry(const Scene& scene, int wall_index, double displacement)
{
    if (wall_index < 0 || wall_index >= static_cast<int>(scene.walls.size()))
        throw std::out_of_range("perturb_geometry: wall index " + std::to_string(wall_index) + " out of range");
    Scene out = scene;
    Wall& w = out.walls[wall_index];
    const Point shift = displacement * right_normal<double>(w.a, w.b);
    w.a += shift;
    w.b += shift;
    return out;
}

Scene parse_scene(std::istream& in)
{
    Scene scene;
    bool have_tx = false;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos)
            line.erase(hash);
        std::istringstream is(line);
        std::string key;
        if (!(is >> key))
            continue;
        auto fail = [&](const std::string& why) {
            throw std::invalid_argument("scene line " + std::to_string(line_no) + ": " + why);
        };
        if (key == "wall") {
            Wall w;
            if (!(is >> w.a.x() >> w.a.y() >> w.b.x() >> w.b.y() >> w.material))
                fail("expected 'wall x1 y1 x2 y2 material_id'");
            scene.walls.push_back(w);
        } else if (key == "tx") {
            if (!(is >> scene.tx.x() >> scene.tx.y()))
                fail("expected 'tx x y'");
            have_tx = true;
        } else if (key == "rx") {
            Point p;
            if (!(is >> p.x() >> p.y()))
                fail("expected 'rx x y'");
            scene.rx_grid.push_back(p);
        } else if (key == "carrier") {
            if (!(is >> scene.carrier_hz))
                fail("expected 'carrier <Hz>'");
        } else {
            fail("unknown record '" + key + "'");
        }
        std::string extra;
        if (is >> extra)
            fail("trailing token '" + extra + "'");
    }
    if (!have_tx)
        throw std::invalid_argument("scene: missing 'tx' record");
    scene.validate();
    return scene;
}

Scene load_scene(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot open scene file '" + path + "'");
    return parse_scene(in);
}

void write_scene(std::ostream& out, const Scene& scene)
{
    out << std::setprecision(17);
    out << "carrier " << scene.carrier_hz << "\n";
    out << "tx " << scene.tx.x() << " " << scene.tx.y() << "\n";
    for (const Wall& w : scene.walls)
        out << "wall " << w.a.x() << " " << w.a.y() << " " << w.b.x() << " " << w.b.y() << " " << w.material
            << "\n";
    for (const Point& p : scene.rx_grid)
        out << "rx " << p.x() << " " << p.y() << "\n";
}

} // namespace twinforge
