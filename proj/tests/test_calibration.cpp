#include "twinforge/calibration.hpp"
#include "twinforge/rng.hpp"

#include <doctest.h>

#include <numbers>
#include <sstream>

using namespace twinforge;

namespace {

// Two parallel walls of different materials around the transmitter.
Scene corridor()
{
    Scene s;
    s.tx = Point(0, 0);
    s.walls.push_back({Point(-30, 4), Point(60, 4), 0});
    s.walls.push_back({Point(60, -5), Point(-30, -5), 1});
    return s;
}

std::vector<Point> corridor_points(int n, std::uint64_t seed)
{
    Rng rng = substream(seed, "points");
    std::vector<Point> out;
    for (int i = 0; i < n; ++i)
        out.emplace_back(10 + 40 * uniform01(rng), -4 + 7 * uniform01(rng));
    return out;
}

Scene single_wall()
{
    Scene s;
    s.tx = Point(0, 0);
    s.walls.push_back({Point(5, -10), Point(5, 10), 0});
    return s;
}

std::vector<PathSolution> reflected_only(const Scene& s, const Point& rx)
{
    auto paths = trace_paths(s, rx, 1);
    paths.erase(paths.begin());
    return paths;
}

} // namespace

TEST_CASE("oblivious calibration recovers the materials of a matching twin")
{
    Scene s = single_wall();
    const MaterialParams truth = MaterialParams::Constant(1, 0.6);
    const auto meas = simulate_measurements(s, truth, {Point(3, 0), Point(2, 1), Point(1, -2)}, 16, 20e6, 1);
    const GradientOptions opts{suggest_step(CalibrationMethod::Oblivious, s, meas, MaterialParams::Ones(1), 1), 2000,
                               0.0, 1};
    const auto report = calibrate_oblivious(s, meas, MaterialParams::Constant(1, 0.3), opts);
    CHECK(std::abs(report.fitted[0] - 0.6) < 1e-3);
}

TEST_CASE("calibration fixed points and zero iterations")
{
    const Scene s = corridor();
    const MaterialParams r = (MaterialParams(2) << 0.4, 0.7).finished();
    const auto meas = simulate_measurements(s, r, corridor_points(6, 1), 16, 20e6, 2);
    const GradientOptions opts{0.1, 50, 1e-14, 2};

    const auto at_truth = calibrate_oblivious(s, meas, r, opts);
    CHECK(at_truth.fitted.isApprox(r, 1e-15));
    CHECK(at_truth.objective_trace.front() < 1e-20);

    GradientOptions none = opts;
    none.max_iters = 0;
    const MaterialParams init = MaterialParams::Constant(2, 0.2);
    const auto skipped = calibrate_oblivious(s, meas, init, none);
    CHECK(skipped.fitted == init);
    CHECK(skipped.objective_trace.size() == 1);

    EmOptions em{0, 3, 10, 0.1, 1e-14, 2};
    const auto em_skipped = calibrate_phase_aware_em(s, meas, init, em);
    CHECK(em_skipped.fitted == init);
    CHECK(em_skipped.objective_trace.front() == doctest::Approx(skipped.objective_trace.front()));
}

TEST_CASE("calibration errors")
{
    Scene s = single_wall();
    MeasurementSet meas = simulate_measurements(s, MaterialParams::Constant(1, 0.5), {Point(3, 0)}, 8, 20e6, 1);
    Scene blocked = s;
    blocked.walls.push_back({Point(1, -1), Point(1, 1), 0});
    blocked.walls.push_back({Point(-1, -3), Point(4, -3), 0});
    blocked.walls.push_back({Point(-1, 3), Point(4, 3), 0});
    blocked.walls.push_back({Point(-1, -3), Point(-1, 3), 0});
    CHECK_THROWS_WITH(calibrate_oblivious(blocked, meas, MaterialParams::Constant(1, 0.5), GradientOptions{0.1, 5, 0, 0}),
                      doctest::Contains("(3, 0)"));
    CHECK_THROWS(calibrate_oblivious(s, meas, MaterialParams::Constant(1, 0.5), GradientOptions{0.0, 5, 0, 1}));
    CHECK_THROWS(calibrate_oblivious(s, MeasurementSet{}, MaterialParams::Constant(1, 0.5), GradientOptions{}));
}

TEST_CASE("fitted parameters stay in the unit interval")
{
    const Scene s = corridor();
    const auto meas = simulate_measurements(s, MaterialParams::Constant(2, 1.0), corridor_points(5, 2), 16, 20e6, 2);
    for (double step : {0.5, 5.0, 50.0}) {
        const GradientOptions g{step, 40, 0.0, 2};
        for (const auto& rep : {calibrate_oblivious(s, meas, MaterialParams::Constant(2, 0.9), g),
                                calibrate_uniform_phase(s, meas, MaterialParams::Constant(2, 0.9), g),
                                calibrate_phase_aware_em(s, meas, MaterialParams::Constant(2, 0.9),
                                                         EmOptions{10, 2, 4, step, 0.0, 2})})
            CHECK((rep.fitted.array() >= 0.0).all());
        CHECK((calibrate_oblivious(s, meas, MaterialParams::Constant(2, 0.9), g).fitted.array() <= 1.0).all());
    }
    const auto zero = simulate_measurements(s, MaterialParams::Zero(2), corridor_points(5, 2), 16, 20e6, 2);
    const auto rep = calibrate_oblivious(s, zero, MaterialParams::Constant(2, 0.1), GradientOptions{50.0, 20, 0.0, 2});
    CHECK((rep.fitted.array() >= 0.0).all());
    CHECK((rep.fitted.array() <= 1.0).all());
}

TEST_CASE("uniform-phase calibration ignores path phases")
{
    // A short blocker removes LoS; only the reflection off the y = 4 wall remains.
    Scene s;
    s.tx = Point(0, 0);
    s.walls.push_back({Point(-20, 4), Point(30, 4), 0});
    s.walls.push_back({Point(5, -1), Point(5, 1), 1});
    const Point rx(10, 0);
    const auto paths = trace_paths(s, rx, 1);
    REQUIRE(paths.size() == 1);
    MeasurementSet meas;
    Eigen::VectorXd offset(1);
    offset << 2.1;
    const MaterialParams truth = (MaterialParams(2) << 0.5, 0.5).finished();
    meas.entries.push_back({rx, synthesize_cfr(paths, truth, s.carrier_hz, 32, 20e6, offset)});
    const double step = suggest_step(CalibrationMethod::UniformPhase, s, meas, MaterialParams::Ones(2), 1);
    const auto rep = calibrate_uniform_phase(s, meas, MaterialParams::Constant(2, 0.2), {step, 3000, 0.0, 1});
    CHECK(rep.fitted[0] == doctest::Approx(0.5).epsilon(1e-3));
}

TEST_CASE("uniform-phase calibration separates paths in distinct delay bins")
{
    Scene s;
    s.tx = Point(0, 0);
    s.walls.push_back({Point(-30, 4), Point(60, 4), 0});
    s.walls.push_back({Point(60, -12), Point(-30, -12), 1});
    const MaterialParams truth = (MaterialParams(2) << 0.3, 0.8).finished();
    const std::vector<Point> pts{Point(15, 0), Point(12, 1), Point(18, -1)};
    const auto meas = simulate_measurements(s, truth, pts, 256, 400e6, 1);
    const double step = suggest_step(CalibrationMethod::UniformPhase, s, meas, MaterialParams::Ones(2), 1);
    const auto rep = calibrate_uniform_phase(s, meas, MaterialParams::Constant(2, 0.5), {step, 20000, 0.0, 1});
    CHECK(std::abs(rep.fitted[0] - 0.3) < 1e-2);
    CHECK(std::abs(rep.fitted[1] - 0.8) < 1e-2);
    CHECK(rep.identifiable);
}

TEST_CASE("equal-delay paths are reported as not identifiable")
{
    // Receiver on the corridor axis between two walls of different materials
    // at equal distance: both single-bounce paths share one delay.
    Scene s;
    s.tx = Point(0, 0);
    s.walls.push_back({Point(-30, 4), Point(60, 4), 0});
    s.walls.push_back({Point(60, -4), Point(-30, -4), 1});
    const auto meas = simulate_measurements(s, (MaterialParams(2) << 0.3, 0.8).finished(), {Point(20, 0)}, 16, 5e6, 1);
    const auto rep = calibrate_uniform_phase(s, meas, MaterialParams::Constant(2, 0.5), {0.1, 50, 0.0, 1});
    CHECK_FALSE(rep.identifiable);
    REQUIRE_FALSE(rep.notes.empty());
    CHECK(rep.notes[0].find("non-identifiable") != std::string::npos);
}

TEST_CASE("phase estimation examples")
{
    const Scene s = single_wall();
    const MaterialParams r = MaterialParams::Constant(1, 0.7);
    const auto paths = reflected_only(s, Point(3, 0));
    for (double phi : {-3.0, -0.5, 0.0, 1.25, 3.1}) {
        Eigen::VectorXd off(1);
        off << phi;
        const auto meas = synthesize_cfr(paths, r, s.carrier_hz, 16, 20e6, off);
        const auto est = estimate_phase_errors(paths, r, meas, 1);
        CHECK(std::abs(wrap_angle(est.phases[0] - phi)) < 1e-9);
    }
    const auto both = trace_paths(s, Point(3, 0), 1);
    const auto clean = synthesize_cfr(both, r, s.carrier_hz, 16, 20e6);
    const auto zero = estimate_phase_errors(both, r, clean, 3);
    CHECK(zero.phases.cwiseAbs().maxCoeff() < 1e-9);

    const auto dead = estimate_phase_errors(paths, MaterialParams::Zero(1), clean, 2);
    CHECK(dead.zero_gain[0]);
    CHECK(dead.phases[0] == 0.0);
}

TEST_CASE("single-path phase estimate is the global minimiser of the residual")
{
    Rng rng = substream(8, "estep");
    const Scene s = single_wall();
    const auto paths = reflected_only(s, Point(3, 0));
    const MaterialParams r = MaterialParams::Constant(1, 0.9);
    const Eigen::VectorXd f = subcarrier_frequencies(s.carrier_hz, 8, 50e6);
    const Eigen::MatrixXcd basis = path_basis(paths, f);
    for (int trial = 0; trial < 20; ++trial) {
        ChannelResponse meas;
        meas.frequencies = f;
        meas.bandwidth = 50e6;
        meas.values = Eigen::VectorXcd(f.size());
        for (Eigen::Index k = 0; k < f.size(); ++k)
            meas.values[k] = {uniform01(rng) - 0.5, uniform01(rng) - 0.5};
        const double g = paths[0].gain(r);
        auto residual = [&](double phi) { return (meas.values - std::polar(g, phi) * basis.col(0)).squaredNorm(); };
        const double est = estimate_phase_errors(paths, r, meas, 1).phases[0];
        double best = 1e300;
        for (int i = 0; i < 10000; ++i)
            best = std::min(best, residual(-std::numbers::pi + 2 * std::numbers::pi * i / 10000.0));
        CHECK(residual(est) <= best + 1e-6);
    }
}

TEST_CASE("orthogonal path signatures are recovered in one sweep")
{
    // Delays 0 and 1/B over K subcarriers spaced B/K apart: the two columns
    // of the basis are orthogonal.
    const int k = 16;
    const double bw = 16e6;
    PathSolution a, b;
    a.base_gain = 0.8;
    a.delay = 0.0;
    b.base_gain = 0.5;
    b.delay = 1.0 / bw;
    const std::vector<PathSolution> paths{a, b};
    const Eigen::VectorXd f = subcarrier_frequencies(1e9, k, bw);
    const Eigen::MatrixXcd basis = path_basis(paths, f);
    REQUIRE(std::abs(basis.col(0).dot(basis.col(1))) < 1e-9);

    const double phi1 = 0.7, phi2 = -2.2;
    ChannelResponse meas;
    meas.frequencies = f;
    meas.bandwidth = bw;
    meas.values = std::polar(0.8, phi1) * basis.col(0) + std::polar(0.5, phi2) * basis.col(1);
    const auto est = estimate_phase_errors(paths, MaterialParams(0), meas, 1);

    // Grid oracle over both phases.
    double best = 1e300, b1 = 0, b2 = 0;
    for (int i = 0; i < 400; ++i)
        for (int j = 0; j < 400; ++j) {
            const double p1 = -std::numbers::pi + 2 * std::numbers::pi * i / 400.0;
            const double p2 = -std::numbers::pi + 2 * std::numbers::pi * j / 400.0;
            const double r =
                (meas.values - std::polar(0.8, p1) * basis.col(0) - std::polar(0.5, p2) * basis.col(1)).squaredNorm();
            if (r < best) {
                best = r;
                b1 = p1;
                b2 = p2;
            }
        }
    CHECK(std::abs(wrap_angle(est.phases[0] - b1)) < 2 * std::numbers::pi / 400);
    CHECK(std::abs(wrap_angle(est.phases[1] - b2)) < 2 * std::numbers::pi / 400);
    CHECK(std::abs(wrap_angle(est.phases[0] - phi1)) < 1e-9);
    CHECK(std::abs(wrap_angle(est.phases[1] - phi2)) < 1e-9);
}

TEST_CASE("EM without mismatch matches the oblivious fit")
{
    const Scene s = corridor();
    const MaterialParams truth = (MaterialParams(2) << 0.45, 0.75).finished();
    const auto meas = simulate_measurements(s, truth, corridor_points(8, 4), 16, 20e6, 2);
    const double step = suggest_step(CalibrationMethod::Oblivious, s, meas, MaterialParams::Ones(2), 2);
    const MaterialParams init = MaterialParams::Constant(2, 0.2);
    const auto obl = calibrate_oblivious(s, meas, init, {step, 3000, 0.0, 2});
    REQUIRE((obl.fitted - truth).cwiseAbs().maxCoeff() < 1e-3);
    // At the oblivious optimum the E-step finds no phase error, so EM stays put.
    const auto em = calibrate_phase_aware_em(s, meas, obl.fitted, {300, 3, 10, step, 0.0, 2});
    CHECK((obl.fitted - em.fitted).cwiseAbs().maxCoeff() < 1e-3);
    for (const auto& phi : em.phase_estimates)
        CHECK(phi.cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("EM objective trace never increases and EM beats the oblivious fit under mismatch")
{
    Scene truth = corridor();
    const double lambda = truth.wavelength();
    const Scene displaced = perturb_geometry(truth, 0, lambda / 8);
    const MaterialParams r = (MaterialParams(2) << 0.5, 0.8).finished();
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto train = simulate_measurements(displaced, r, corridor_points(20, seed), 32, 80e6, 2);
        const auto held = simulate_measurements(displaced, r, corridor_points(20, seed + 100), 32, 320e6, 2);
        const double step = suggest_step(CalibrationMethod::Oblivious, truth, train, MaterialParams::Ones(2), 2);
        const MaterialParams init = MaterialParams::Constant(2, 0.2);
        const auto em = calibrate_phase_aware_em(truth, train, init, {100, 3, 10, step, 0.0, 2});
        for (std::size_t i = 1; i < em.objective_trace.size(); ++i)
            CHECK(em.objective_trace[i] <= em.objective_trace[i - 1] + 1e-10);
        CHECK((em.fitted.array() >= 0.0).all());
        CHECK((em.fitted.array() <= 1.0).all());
        const auto obl = calibrate_oblivious(truth, train, init, {step, 1000, 0.0, 2});
        CHECK(relative_power_error(truth, em.fitted, held) < relative_power_error(truth, obl.fitted, held));
    }
}

TEST_CASE("relative power error arithmetic")
{
    const Scene s = single_wall();
    const MaterialParams r = MaterialParams::Constant(1, 0.5);
    const std::vector<Point> pts{Point(3, 0), Point(2, 2)};
    MeasurementSet meas = simulate_measurements(s, r, pts, 8, 10e6, 1);
    CHECK(relative_power_error(s, r, meas, 1) == doctest::Approx(0.0).scale(1.0));

    MeasurementSet half = meas;
    for (auto& e : half.entries)
        e.response.values /= std::sqrt(2.0);
    CHECK(relative_power_error(s, r, half, 1) == doctest::Approx(1.0));

    MeasurementSet mixed = meas;
    mixed.entries[1].response.values /= std::sqrt(2.0);
    CHECK(relative_power_error(s, r, mixed, 1) == doctest::Approx(0.5));

    MeasurementSet dead = meas;
    dead.entries[0].response.values.setZero();
    CHECK_THROWS(relative_power_error(s, r, dead, 1));
}

TEST_CASE("measurement csv round-trips")
{
    const Scene s = corridor();
    const auto meas = simulate_measurements(s, MaterialParams::Constant(2, 0.5), corridor_points(3, 9), 4, 10e6, 2);
    std::ostringstream out;
    write_measurements_csv(out, meas);
    CHECK(out.str().rfind("rx_x,rx_y,subcarrier_hz,re,im\n", 0) == 0);
    std::istringstream in(out.str());
    const auto back = read_measurements_csv(in);
    REQUIRE(back.entries.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(back.entries[i].rx == meas.entries[i].rx);
        CHECK(back.entries[i].response.values == meas.entries[i].response.values);
        CHECK(back.entries[i].response.bandwidth == doctest::Approx(10e6));
    }
    std::istringstream bad("rx_x,rx_y,subcarrier_hz,re,im\n1,2,3\n");
    CHECK_THROWS_WITH(read_measurements_csv(bad), doctest::Contains("line 2"));
}
