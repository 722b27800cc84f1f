#include "twinforge/channel.hpp"
#include "twinforge/rng.hpp"
#include "twinforge/scene.hpp"

#include <doctest.h>

#include <algorithm>
#include <numbers>
#include <sstream>

using namespace twinforge;

namespace {

Scene wall_at_x5()
{
    Scene s;
    s.tx = Point(0, 0);
    s.walls.push_back({Point(5, -10), Point(5, 10), 0});
    return s;
}

Scene random_scene(Rng& rng, int walls)
{
    Scene s;
    s.tx = Point(0, 0);
    while (static_cast<int>(s.walls.size()) < walls) {
        const Point a(-20 + 40 * uniform01(rng), -20 + 40 * uniform01(rng));
        const Point b(-20 + 40 * uniform01(rng), -20 + 40 * uniform01(rng));
        if ((b - a).norm() < 2 || point_segment_distance<double>(s.tx, a, b) < 0.5)
            continue;
        s.walls.push_back({a, b, static_cast<int>(s.walls.size()) % 2});
    }
    return s;
}

Point random_rx(Rng& rng, const Scene& s)
{
    while (true) {
        const Point p(-20 + 40 * uniform01(rng), -20 + 40 * uniform01(rng));
        bool clear = p.norm() > 1.0;
        for (const Wall& w : s.walls)
            clear = clear && point_segment_distance<double>(p, w.a, w.b) > 0.1;
        if (clear)
            return p;
    }
}

} // namespace

TEST_CASE("free-space line of sight")
{
    Scene s;
    s.tx = Point(0, 0);
    const auto paths = trace_paths(s, Point(3, 0), 1);
    REQUIRE(paths.size() == 1);
    CHECK(paths[0].order() == 0);
    CHECK(paths[0].length == doctest::Approx(3.0).epsilon(1e-15));
    CHECK(paths[0].delay == doctest::Approx(3.0 / kSpeedOfLight).epsilon(1e-15));
    CHECK(paths[0].delay == doctest::Approx(10.007e-9).epsilon(1e-4));
    CHECK(paths[0].aod == 0.0);
    CHECK(paths[0].base_gain == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("single wall reflection follows the image point")
{
    const auto paths = trace_paths(wall_at_x5(), Point(3, 0), 1);
    REQUIRE(paths.size() == 2);
    CHECK(paths[0].length == doctest::Approx(3.0));
    CHECK(paths[1].length == doctest::Approx(7.0));
    REQUIRE(paths[1].vertices.size() == 3);
    CHECK((paths[1].vertices[1] - Point(5, 0)).norm() < 1e-12);
    CHECK(paths[1].interaction_walls == std::vector<int>{0});
    CHECK(paths[1].aod == doctest::Approx(0.0));
    CHECK(std::abs(paths[1].aoa) == doctest::Approx(0.0));
}

TEST_CASE("blocked line of sight at order zero")
{
    Scene s;
    s.tx = Point(0, 0);
    s.walls.push_back({Point(1.5, -1), Point(1.5, 1), 0});
    CHECK(trace_paths(s, Point(3, 0), 0).empty());
}

TEST_CASE("degenerate inputs are rejected")
{
    Scene s;
    s.tx = Point(0, 0);
    s.walls.push_back({Point(-1, 0), Point(1, 0), 0});
    CHECK_THROWS_AS(trace_paths(s, Point(3, 3), 1), std::invalid_argument);
    CHECK_THROWS_AS(trace_paths(wall_at_x5(), Point(0, 0), 1), std::invalid_argument);
    CHECK_THROWS_AS(trace_paths(wall_at_x5(), Point(3, 0), 4), std::invalid_argument);
    Scene z = wall_at_x5();
    z.walls.push_back({Point(1, 1), Point(1, 1), 0});
    CHECK_THROWS(z.validate());
}

TEST_CASE("endpoint contact counts as blocked")
{
    Scene s;
    s.tx = Point(0, 0);
    s.walls.push_back({Point(1.5, 0), Point(1.5, 2), 0});
    CHECK(trace_paths(s, Point(3, 0), 0).empty());
}

TEST_CASE("perturb_geometry moves one wall along its right normal")
{
    const Scene s = wall_at_x5();
    const Scene same = perturb_geometry(s, 0, 0.0);
    CHECK(same.walls[0].a == s.walls[0].a);
    CHECK(same.walls[0].b == s.walls[0].b);
    for (double d : {0.01, 0.3, 1.0}) {
        const auto paths = trace_paths(perturb_geometry(s, 0, d), Point(3, 0), 1);
        REQUIRE(paths.size() == 2);
        CHECK(paths[1].length == doctest::Approx(7.0 + 2.0 * d).epsilon(1e-12));
    }
    CHECK_THROWS(perturb_geometry(s, 3, 0.1));
}

TEST_CASE("quarter-wavelength shift flips the reflected phase at the carrier")
{
    const Scene s = wall_at_x5();
    const double lambda = s.wavelength();
    const MaterialParams r = MaterialParams::Constant(1, 1.0);
    auto reflected_only = [&](const Scene& sc) {
        auto paths = trace_paths(sc, Point(3, 0), 1);
        paths.erase(paths.begin());
        return synthesize_cfr(paths, r, sc.carrier_hz, 1, 1e6).values[0];
    };
    const auto h0 = reflected_only(s);
    const auto h1 = reflected_only(perturb_geometry(s, 0, lambda / 4));
    CHECK(std::abs(wrap_angle(std::arg(h1) - std::arg(h0))) == doctest::Approx(std::numbers::pi).epsilon(1e-6));
}

TEST_CASE("unfolded lengths and the reflection law hold on random scenes")
{
    Rng rng = substream(11, "scenes");
    int reflected = 0;
    for (int trial = 0; trial < 60; ++trial) {
        const Scene s = random_scene(rng, 1 + trial % 3);
        const Point rx = random_rx(rng, s);
        for (const PathSolution& p : trace_paths(s, rx, 3)) {
            double unfolded = 0.0;
            for (std::size_t v = 1; v < p.vertices.size(); ++v)
                unfolded += (p.vertices[v] - p.vertices[v - 1]).norm();
            CHECK(std::abs(unfolded - p.length) <= 1e-9 * p.length);
            CHECK(p.length >= (rx - s.tx).norm() - 1e-12);
            CHECK(p.delay == doctest::Approx(p.length / kSpeedOfLight).epsilon(1e-15));
            CHECK(p.aod > -std::numbers::pi);
            CHECK(p.aod <= std::numbers::pi);
            for (int k = 0; k < p.order(); ++k) {
                const Wall& w = s.walls[p.interaction_walls[k]];
                const Point n = right_normal<double>(w.a, w.b);
                const Point in = (p.vertices[k + 1] - p.vertices[k]).normalized();
                const Point out = (p.vertices[k + 2] - p.vertices[k + 1]).normalized();
                CHECK((out - (in - 2.0 * in.dot(n) * n)).norm() < 1e-9);
                ++reflected;
            }
        }
    }
    CHECK(reflected > 20);
}

TEST_CASE("first-order paths match a brute-force shortest-detour search")
{
    // Fermat: a specular point is a stationary point of |tx - q| + |q - rx|
    // along the wall; for a straight wall it is the unique interior minimum.
    Rng rng = substream(5, "fermat");
    for (int trial = 0; trial < 40; ++trial) {
        const Scene s = random_scene(rng, 1);
        const Point rx = random_rx(rng, s);
        const Wall& w = s.walls[0];
        const int n = 200000;
        double best = 1e300;
        int best_i = 0;
        for (int i = 0; i <= n; ++i) {
            const Point q = w.a + (w.b - w.a) * (static_cast<double>(i) / n);
            const double len = (q - s.tx).norm() + (rx - q).norm();
            if (len < best) {
                best = len;
                best_i = i;
            }
        }
        const bool same_side = cross2<double>(w.b - w.a, s.tx - w.a) * cross2<double>(w.b - w.a, rx - w.a) > 0;
        const bool interior = best_i > 2 && best_i < n - 2;
        const auto paths = trace_paths(s, rx, 1);
        const auto it = std::find_if(paths.begin(), paths.end(), [](const PathSolution& p) { return p.order() == 1; });
        if (same_side && interior) {
            REQUIRE(it != paths.end());
            CHECK(it->length == doctest::Approx(best).epsilon(1e-6));
        } else {
            CHECK(it == paths.end());
        }
    }
}

TEST_CASE("reciprocity: swapping tx and rx keeps lengths and gains")
{
    Rng rng = substream(3, "recip");
    const MaterialParams r = (MaterialParams(2) << 0.7, 0.4).finished();
    for (int trial = 0; trial < 30; ++trial) {
        Scene s = random_scene(rng, 3);
        const Point rx = random_rx(rng, s);
        auto collect = [&](const Scene& sc, const Point& to) {
            std::vector<std::pair<double, double>> out;
            for (const auto& p : trace_paths(sc, to, 3))
                out.emplace_back(p.length, p.gain(r));
            std::sort(out.begin(), out.end());
            return out;
        };
        const auto forward = collect(s, rx);
        Scene swapped = s;
        swapped.tx = rx;
        const auto backward = collect(swapped, s.tx);
        REQUIRE(forward.size() == backward.size());
        for (std::size_t i = 0; i < forward.size(); ++i) {
            CHECK(forward[i].first == doctest::Approx(backward[i].first).epsilon(1e-9));
            CHECK(forward[i].second == doctest::Approx(backward[i].second).epsilon(1e-9));
        }
    }
}

TEST_CASE("path gain is monotone in each material coefficient")
{
    Scene s = wall_at_x5();
    s.walls.push_back({Point(-5, -10), Point(-5, 10), 1});
    const auto paths = trace_paths(s, Point(3, 1), 2);
    for (const auto& p : paths)
        for (int m = 0; m < 2; ++m) {
            double last = -1.0;
            for (double v = 0.0; v <= 1.0; v += 0.1) {
                MaterialParams r = MaterialParams::Constant(2, 0.5);
                r[m] = v;
                const double g = std::abs(p.gain(r));
                CHECK(g >= last);
                last = g;
            }
        }
}

TEST_CASE("scene text round-trips")
{
    std::istringstream in("# street\ncarrier 2.4e9\ntx 1 2\nwall 0 0 10 0 1  # facade\nwall 0 5 10 5 0\nrx 3 4\n");
    const Scene s = parse_scene(in);
    CHECK(s.carrier_hz == 2.4e9);
    CHECK(s.tx == Point(1, 2));
    REQUIRE(s.walls.size() == 2);
    CHECK(s.walls[0].material == 1);
    REQUIRE(s.rx_grid.size() == 1);
    CHECK(s.material_count() == 2);
    std::ostringstream out;
    write_scene(out, s);
    std::istringstream back(out.str());
    const Scene t = parse_scene(back);
    CHECK(t.walls.size() == 2);
    CHECK(t.walls[1].b == s.walls[1].b);
    CHECK(t.tx == s.tx);

    std::istringstream bad("tx 0 0\nwall 0 0 1\n");
    CHECK_THROWS_WITH_AS(parse_scene(bad), doctest::Contains("line 2"), std::invalid_argument);
}
