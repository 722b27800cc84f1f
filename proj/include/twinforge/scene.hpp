#pragma once

#include "twinforge/geometry.hpp"

#include <Eigen/Dense>

#include <iosfwd>
#include <string>
#include <vector>

namespace twinforge {

inline constexpr double kSpeedOfLight = 299792458.0;
inline constexpr int kMaxReflectionOrder = 3;

/// Per-material reflection-coefficient magnitudes, each in [0, 1].
using MaterialParams = Eigen::VectorXd;

struct Wall {
    Point a;
    Point b;
    int material = 0;

    double length() const { return (b - a).norm(); }
};

/// 2D polygonal propagation environment.
struct Scene {
    std::vector<Wall> walls;
    Point tx = Point::Zero();
    std::vector<Point> rx_grid;
    double carrier_hz = 3.5e9;

    double wavelength() const { return kSpeedOfLight / carrier_hz; }

    /// One more than the largest material index referenced by any wall.
    int material_count() const;

    /// Throws std::invalid_argument on zero-length walls, negative material
    /// indices, a non-positive carrier, or a transmitter lying on a wall.
    void validate() const;
};

/// One specular propagation path from the transmitter to a receiver.
struct PathSolution {
    std::vector<int> interaction_walls;     // empty for line-of-sight
    std::vector<int> interaction_materials; // material index per bounce
    std::vector<Point> vertices;            // tx, reflection points..., rx
    double length = 0.0;
    double delay = 0.0;
    double aod = 0.0;
    double aoa = 0.0;
    double base_gain = 0.0;
    std::vector<int> bounces_per_material;

    int order() const { return static_cast<int>(interaction_walls.size()); }

    /// Amplitude gain: base gain times the product of the bounce coefficients.
    double gain(const MaterialParams& materials) const;

    /// d gain / d r_m.
    double gain_derivative(const MaterialParams& materials, int material) const;
};

void check_materials(const MaterialParams& materials, int required_count);

/// All unblocked specular paths up to `max_order` reflections, found with the
/// image method and sorted by (order, length, wall sequence).
std::vector<PathSolution> trace_paths(const Scene& scene, const Point& rx, int max_order);

/// Copy of `scene` with wall `wall_index` translated by `displacement` meters
/// along the right-hand normal of its directed segment a -> b.
Scene perturb_geometry(const Scene& scene, int wall_index, double displacement);

// Line-oriented scene format:
//   wall x1 y1 x2 y2 material_id
//   tx x y
//   rx x y
//   carrier <Hz>
// '#' starts a comment.
Scene parse_scene(std::istream& in);
Scene load_scene(const std::string& path);
void write_scene(std::ostream& out, const Scene& scene);

} // namespace twinforge
