#include "twinforge/calibration.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <istream>
#include <map>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace twinforge {

namespace {

using Complex = std::complex<double>;

// Twin paths and their unit-gain basis for one measurement.
struct TracedEntry {
    std::vector<PathSolution> paths;
    Eigen::MatrixXcd basis; // K x P, zero phase offsets
    Eigen::MatrixXd leakage; // K x P, delay-tap power of each unit path
    Eigen::VectorXd pdp;     // K, measured delay-tap power
};

// Unitary-up-to-scale inverse DFT: tap b = (1/K) sum_k x_k exp(j 2 pi k b / K).
Eigen::MatrixXcd inverse_dft(Eigen::Index n)
{
    Eigen::MatrixXcd f(n, n);
    const double two_pi = 2.0 * std::numbers::pi;
    for (Eigen::Index b = 0; b < n; ++b)
        for (Eigen::Index k = 0; k < n; ++k)
            f(b, k) = std::polar(1.0 / static_cast<double>(n), two_pi * static_cast<double>((k * b) % n) / n);
    return f;
}

std::string point_str(const Point& p)
{
    std::ostringstream os;
    os << "(" << p.x() << ", " << p.y() << ")";
    return os.str();
}

std::vector<TracedEntry> trace_entries(const Scene& scene, const MeasurementSet& measurements, int max_order,
                                       bool with_pdp)
{
    measurements.validate();
    std::vector<TracedEntry> out;
    out.reserve(measurements.entries.size());
    Eigen::MatrixXcd idft;
    if (with_pdp)
        idft = inverse_dft(measurements.entries.front().response.size());
    for (const Measurement& m : measurements.entries) {
        TracedEntry e;
        e.paths = trace_paths(scene, m.rx, max_order);
        if (e.paths.empty())
            throw std::invalid_argument("calibration: twin scene yields no paths at measurement point " +
                                        point_str(m.rx));
        e.basis = path_basis(e.paths, m.response.frequencies);
        if (with_pdp) {
            e.leakage = (idft * e.basis).cwiseAbs2();
            e.pdp = (idft * m.response.values).cwiseAbs2();
        }
        out.push_back(std::move(e));
    }
    return out;
}

MaterialParams clamp_unit(const MaterialParams& r)
{
    return r.cwiseMax(0.0).cwiseMin(1.0);
}

struct ObjectiveValue {
    double value = 0.0;
    Eigen::VectorXd gradient;
};

using Objective = std::function<ObjectiveValue(const MaterialParams&)>;

// Projected fixed-step descent. A step that does not lower the objective is
// rejected and ends the run. Appends every accepted objective to `trace`.
struct DescentResult {
    MaterialParams r;
    double value = 0.0;
    int steps = 0;
};

DescentResult projected_descent(const Objective& objective, MaterialParams r, double start_value, double step,
                                int max_steps, double tol, std::vector<double>& trace)
{
    DescentResult out{std::move(r), start_value, 0};
    ObjectiveValue current = objective(out.r);
    for (int it = 0; it < max_steps; ++it) {
        out.steps = it + 1;
        const MaterialParams candidate = clamp_unit(out.r - step * current.gradient);
        ObjectiveValue next = objective(candidate);
        const double improvement = current.value - next.value;
        if (improvement > 0.0) {
            out.r = candidate;
            current = std::move(next);
            trace.push_back(current.value);
        }
        if (!(improvement >= tol))
            break;
    }
    out.value = current.value;
    return out;
}

ObjectiveValue coherent_objective(const std::vector<TracedEntry>& entries, const MeasurementSet& measurements,
                                  const MaterialParams& r, const std::vector<Eigen::VectorXd>* phases)
{
    ObjectiveValue out{0.0, Eigen::VectorXd::Zero(r.size())};
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const TracedEntry& e = entries[i];
        const Eigen::VectorXd g = path_gains(e.paths, r);
        Eigen::VectorXcd weights = g.cast<Complex>();
        if (phases)
            for (Eigen::Index p = 0; p < weights.size(); ++p)
                weights[p] *= std::polar(1.0, (*phases)[i][p]);
        const Eigen::VectorXcd residual = measurements.entries[i].response.values - e.basis * weights;
        out.value += residual.squaredNorm();
        Eigen::VectorXcd corr = e.basis.adjoint() * residual;
        Eigen::VectorXd dgain(g.size());
        for (Eigen::Index p = 0; p < g.size(); ++p) {
            const Complex rot = phases ? std::polar(1.0, (*phases)[i][p]) : Complex(1.0);
            dgain[p] = -2.0 * std::real(std::conj(rot) * corr[p]);
        }
        out.gradient += path_gain_jacobian(e.paths, r).transpose() * dgain;
    }
    return out;
}

ObjectiveValue pdp_objective(const std::vector<TracedEntry>& entries, const MaterialParams& r)
{
    ObjectiveValue out{0.0, Eigen::VectorXd::Zero(r.size())};
    for (const TracedEntry& e : entries) {
        const Eigen::VectorXd g = path_gains(e.paths, r);
        const Eigen::VectorXd residual = e.pdp - e.leakage * g.cwiseAbs2();
        out.value += residual.squaredNorm();
        const Eigen::VectorXd dgain = -4.0 * g.cwiseProduct(e.leakage.transpose() * residual);
        out.gradient += path_gain_jacobian(e.paths, r).transpose() * dgain;
    }
    return out;
}

// Sensitivity of the model output to each material, stacked over entries.
Eigen::MatrixXd gauss_newton(CalibrationMethod method, const std::vector<TracedEntry>& entries,
                             const MaterialParams& r, const std::vector<Eigen::VectorXd>* phases)
{
    Eigen::MatrixXd gn = Eigen::MatrixXd::Zero(r.size(), r.size());
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const TracedEntry& e = entries[i];
        const Eigen::MatrixXd jac = path_gain_jacobian(e.paths, r);
        if (method == CalibrationMethod::UniformPhase) {
            const Eigen::VectorXd g = path_gains(e.paths, r);
            const Eigen::MatrixXd a = e.leakage * (2.0 * g).asDiagonal() * jac;
            gn += a.transpose() * a;
        } else {
            Eigen::MatrixXcd b = e.basis;
            if (phases)
                for (Eigen::Index p = 0; p < b.cols(); ++p)
                    b.col(p) *= std::polar(1.0, (*phases)[i][p]);
            const Eigen::MatrixXcd a = b * jac.cast<Complex>();
            gn += (a.adjoint() * a).real();
        }
    }
    return 2.0 * gn;
}

void assess_identifiability(CalibrationMethod method, const std::vector<TracedEntry>& entries,
                            CalibrationReport& report, const std::vector<Eigen::VectorXd>* phases)
{
    const Eigen::MatrixXd gn = gauss_newton(method, entries, report.fitted, phases);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gn);
    const Eigen::VectorXd ev = solver.eigenvalues();
    const double largest = ev.cwiseAbs().maxCoeff();
    for (Eigen::Index j = 0; j < ev.size(); ++j) {
        if (ev[j] > 1e-9 * largest && largest > 0.0)
            continue;
        report.identifiable = false;
        std::ostringstream os;
        os << std::setprecision(3) << "non-identifiable material direction [";
        const Eigen::VectorXd v = solver.eigenvectors().col(j);
        for (Eigen::Index m = 0; m < v.size(); ++m)
            os << (m ? ", " : "") << v[m];
        os << "]: only combinations orthogonal to it are determined by the data";
        report.notes.push_back(os.str());
    }
}

void check_init(const Scene& scene, const MaterialParams& init)
{
    check_materials(init, scene.material_count());
}

} // namespace

void MeasurementSet::validate() const
{
    if (entries.empty())
        throw std::invalid_argument("measurement set is empty");
    const Eigen::VectorXd& f0 = entries.front().response.frequencies;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const ChannelResponse& r = entries[i].response;
        if (r.values.size() != r.frequencies.size() || r.frequencies.size() != f0.size() ||
            !r.frequencies.isApprox(f0, 1e-15) || r.frequencies.size() == 0)
            throw std::invalid_argument("measurement " + std::to_string(i) +
                                        " does not share the common subcarrier grid");
    }
}

const char* method_name(CalibrationMethod method)
{
    switch (method) {
    case CalibrationMethod::Oblivious:
        return "oblivious";
    case CalibrationMethod::UniformPhase:
        return "uniform_phase";
    case CalibrationMethod::PhaseAwareEm:
        return "phase_aware_em";
    }
    return "?";
}

MeasurementSet simulate_measurements(const Scene& scene, const MaterialParams& materials,
                                     const std::vector<Point>& points, int n_subcarriers, double bandwidth_hz,
                                     int max_order)
{
    check_materials(materials, scene.material_count());
    const Eigen::VectorXd freqs = subcarrier_frequencies(scene.carrier_hz, n_subcarriers, bandwidth_hz);
    MeasurementSet out;
    for (const Point& p : points)
        out.entries.push_back({p, synthesize_cfr_at(trace_paths(scene, p, max_order), materials, freqs, bandwidth_hz)});
    return out;
}

CalibrationReport calibrate_oblivious(const Scene& scene, const MeasurementSet& measurements,
                                      const MaterialParams& init, const GradientOptions& opts)
{
    if (!(opts.step > 0.0))
        throw std::invalid_argument("calibrate_oblivious: step must be positive");
    check_init(scene, init);
    const auto entries = trace_entries(scene, measurements, opts.max_order, false);
    const Objective objective = [&](const MaterialParams& r) {
        return coherent_objective(entries, measurements, r, nullptr);
    };

    CalibrationReport report;
    const double start = objective(init).value;
    report.objective_trace.push_back(start);
    const DescentResult fit =
        projected_descent(objective, init, start, opts.step, opts.max_iters, opts.tol, report.objective_trace);
    report.fitted = fit.r;
    report.iterations_used = fit.steps;
    assess_identifiability(CalibrationMethod::Oblivious, entries, report, nullptr);
    return report;
}

CalibrationReport calibrate_uniform_phase(const Scene& scene, const MeasurementSet& measurements,
                                          const MaterialParams& init, const GradientOptions& opts)
{
    if (!(opts.step > 0.0))
        throw std::invalid_argument("calibrate_uniform_phase: step must be positive");
    check_init(scene, init);
    const auto entries = trace_entries(scene, measurements, opts.max_order, true);
    const Objective objective = [&](const MaterialParams& r) { return pdp_objective(entries, r); };

    CalibrationReport report;
    const double start = objective(init).value;
    report.objective_trace.push_back(start);
    const DescentResult fit =
        projected_descent(objective, init, start, opts.step, opts.max_iters, opts.tol, report.objective_trace);
    report.fitted = fit.r;
    report.iterations_used = fit.steps;
    assess_identifiability(CalibrationMethod::UniformPhase, entries, report, nullptr);
    return report;
}

PhaseEstimate estimate_phase_errors(const std::vector<PathSolution>& paths, const MaterialParams& materials,
                                    const ChannelResponse& measurement, int sweeps,
                                    const std::optional<Eigen::VectorXd>& initial)
{
    if (paths.empty())
        throw std::invalid_argument("estimate_phase_errors: no paths");
    if (sweeps < 1)
        throw std::invalid_argument("estimate_phase_errors: sweeps must be positive");
    const Eigen::Index n = static_cast<Eigen::Index>(paths.size());
    PhaseEstimate out;
    out.phases = initial ? *initial : Eigen::VectorXd::Zero(n);
    if (out.phases.size() != n)
        throw std::invalid_argument("estimate_phase_errors: initial phases have the wrong length");
    out.zero_gain.assign(n, false);

    const Eigen::MatrixXcd basis = path_basis(paths, measurement.frequencies);
    const Eigen::VectorXd g = path_gains(paths, materials);
    Eigen::MatrixXcd contrib = basis * g.cast<Complex>().asDiagonal();
    for (Eigen::Index p = 0; p < n; ++p) {
        if (g[p] == 0.0) {
            out.zero_gain[p] = true;
            out.phases[p] = 0.0;
        }
    }

    Eigen::VectorXcd residual = measurement.values;
    for (Eigen::Index p = 0; p < n; ++p)
        residual -= std::polar(1.0, out.phases[p]) * contrib.col(p);

    for (int sweep = 0; sweep < sweeps; ++sweep) {
        for (Eigen::Index p = 0; p < n; ++p) {
            if (out.zero_gain[p])
                continue;
            const Eigen::VectorXcd partial = residual + std::polar(1.0, out.phases[p]) * contrib.col(p);
            const Complex inner = contrib.col(p).dot(partial); // h_p^H r_p
            if (std::abs(inner) == 0.0)
                continue;
            out.phases[p] = std::arg(inner);
            residual = partial - std::polar(1.0, out.phases[p]) * contrib.col(p);
        }
    }
    for (Eigen::Index p = 0; p < n; ++p)
        out.phases[p] = wrap_angle(out.phases[p]);
    return out;
}

CalibrationReport calibrate_phase_aware_em(const Scene& scene, const MeasurementSet& measurements,
                                           const MaterialParams& init, const EmOptions& opts)
{
    if (!(opts.step > 0.0))
        throw std::invalid_argument("calibrate_phase_aware_em: step must be positive");
    if (opts.e_sweeps < 1)
        throw std::invalid_argument("calibrate_phase_aware_em: e_sweeps must be positive");
    check_init(scene, init);
    const auto entries = trace_entries(scene, measurements, opts.max_order, false);

    std::vector<Eigen::VectorXd> phases;
    for (const TracedEntry& e : entries)
        phases.push_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(e.paths.size())));

    const Objective objective = [&](const MaterialParams& r) {
        return coherent_objective(entries, measurements, r, &phases);
    };

    CalibrationReport report;
    MaterialParams r = init;
    double value = objective(r).value;
    report.objective_trace.push_back(value);

    for (int it = 0; it < opts.em_iters; ++it) {
        const double before = value;
        for (std::size_t i = 0; i < entries.size(); ++i)
            phases[i] = estimate_phase_errors(entries[i].paths, r, measurements.entries[i].response, opts.e_sweeps,
                                              phases[i])
                            .phases;
        value = objective(r).value;
        report.objective_trace.push_back(value);

        std::vector<double> m_trace;
        const DescentResult m = projected_descent(objective, r, value, opts.step, opts.m_steps, 0.0, m_trace);
        r = m.r;
        value = m.value;
        report.objective_trace.push_back(value);
        report.iterations_used = it + 1;
        if (before - value < opts.tol)
            break;
    }
    report.fitted = r;
    report.phase_estimates = phases;
    assess_identifiability(CalibrationMethod::PhaseAwareEm, entries, report, &phases);
    return report;
}

double relative_power_error(const Scene& scene, const MaterialParams& materials, const MeasurementSet& heldout,
                            int max_order)
{
    heldout.validate();
    check_materials(materials, scene.material_count());
    double total = 0.0;
    for (const Measurement& m : heldout.entries) {
        const double measured = received_power(m.response);
        if (!(measured > 0.0))
            throw std::invalid_argument("relative_power_error: measured power is zero at " + point_str(m.rx));
        const auto paths = trace_paths(scene, m.rx, max_order);
        const double predicted =
            received_power(synthesize_cfr_at(paths, materials, m.response.frequencies, m.response.bandwidth));
        total += std::abs(measured - predicted) / measured;
    }
    return total / static_cast<double>(heldout.entries.size());
}

double suggest_step(CalibrationMethod method, const Scene& scene, const MeasurementSet& measurements,
                    const MaterialParams& at, int max_order, double fraction)
{
    check_init(scene, at);
    const auto entries =
        trace_entries(scene, measurements, max_order, method == CalibrationMethod::UniformPhase);
    const Eigen::MatrixXd gn = gauss_newton(method, entries, at, nullptr);
    const double curvature = gn.norm();
    if (!(curvature > 0.0))
        throw std::invalid_argument("suggest_step: objective is flat in every material");
    return fraction / curvature;
}

MeasurementSet read_measurements_csv(std::istream& in)
{
    struct Row {
        Point rx;
        double f;
        Complex v;
    };
    std::vector<std::vector<Row>> groups;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line.rfind("rx_x", 0) == 0)
            continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream is(line);
        Row row;
        double re = 0.0, im = 0.0;
        if (!(is >> row.rx.x() >> row.rx.y() >> row.f >> re >> im))
            throw std::invalid_argument("measurement csv line " + std::to_string(line_no) + ": malformed row");
        row.v = {re, im};
        if (groups.empty() || groups.back().front().rx != row.rx)
            groups.emplace_back();
        groups.back().push_back(row);
    }
    MeasurementSet out;
    for (const auto& g : groups) {
        Measurement m;
        m.rx = g.front().rx;
        m.response.frequencies.resize(static_cast<Eigen::Index>(g.size()));
        m.response.values.resize(static_cast<Eigen::Index>(g.size()));
        for (std::size_t k = 0; k < g.size(); ++k) {
            m.response.frequencies[k] = g[k].f;
            m.response.values[k] = g[k].v;
        }
        const double spacing = g.size() > 1 ? (g.back().f - g.front().f) / (g.size() - 1) : 0.0;
        m.response.bandwidth = spacing * g.size();
        out.entries.push_back(std::move(m));
    }
    out.validate();
    return out;
}

void write_measurements_csv(std::ostream& out, const MeasurementSet& set)
{
    out << "rx_x,rx_y,subcarrier_hz,re,im\n" << std::setprecision(17);
    for (const Measurement& m : set.entries)
        for (Eigen::Index k = 0; k < m.response.size(); ++k)
            out << m.rx.x() << "," << m.rx.y() << "," << m.response.frequencies[k] << ","
                << m.response.values[k].real() << "," << m.response.values[k].imag() << "\n";
}

} // namespace twinforge
