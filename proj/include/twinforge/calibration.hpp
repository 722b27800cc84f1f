#pragma once

#include "twinforge/channel.hpp"
#include "twinforge/scene.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace twinforge {

struct Measurement {
    Point rx;
    ChannelResponse response;
};

/// Channel measurements sharing one subcarrier grid.
struct MeasurementSet {
    std::vector<Measurement> entries;

    void validate() const;
};

struct CalibrationReport {
    MaterialParams fitted;
    std::vector<double> objective_trace;
    /// Per measurement, per twin path (phase-aware EM only).
    std::vector<Eigen::VectorXd> phase_estimates;
    int iterations_used = 0;
    /// False when the fitted objective is flat along some material direction.
    bool identifiable = true;
    std::vector<std::string> notes;
};

struct GradientOptions {
    double step = 0.1;
    int max_iters = 500;
    double tol = 1e-14;
    int max_order = 2;
};

struct EmOptions {
    int em_iters = 50;
    int e_sweeps = 3;
    int m_steps = 10;
    double step = 0.1;
    double tol = 1e-14;
    int max_order = 2;
};

/// Noise-free measurements of `scene` with `materials` at every point.
MeasurementSet simulate_measurements(const Scene& scene, const MaterialParams& materials,
                                     const std::vector<Point>& points, int n_subcarriers, double bandwidth_hz,
                                     int max_order);

CalibrationReport calibrate_oblivious(const Scene& scene, const MeasurementSet& measurements,
                                      const MaterialParams& init, const GradientOptions& opts);

CalibrationReport calibrate_uniform_phase(const Scene& scene, const MeasurementSet& measurements,
                                          const MaterialParams& init, const GradientOptions& opts);

struct PhaseEstimate {
    Eigen::VectorXd phases;
    /// Paths whose gain is zero; their phase is fixed at 0.
    std::vector<bool> zero_gain;
};

/// Coordinate ascent over per-path phase offsets that minimises
/// || H_meas - sum_p exp(j phi_p) H_p ||. Starts from `initial` when given,
/// otherwise from zero.
PhaseEstimate estimate_phase_errors(const std::vector<PathSolution>& paths, const MaterialParams& materials,
                                    const ChannelResponse& measurement, int sweeps,
                                    const std::optional<Eigen::VectorXd>& initial = std::nullopt);

CalibrationReport calibrate_phase_aware_em(const Scene& scene, const MeasurementSet& measurements,
                                           const MaterialParams& init, const EmOptions& opts);

/// Mean over held-out points of |P_meas - P_pred| / P_meas.
double relative_power_error(const Scene& scene, const MaterialParams& materials, const MeasurementSet& heldout,
                            int max_order = 2);

enum class CalibrationMethod { Oblivious, UniformPhase, PhaseAwareEm };

const char* method_name(CalibrationMethod method);

/// `fraction` over a Gauss-Newton curvature bound of the method's objective,
/// evaluated at `at` (all-ones materials give the most conservative value).
double suggest_step(CalibrationMethod method, const Scene& scene, const MeasurementSet& measurements,
                    const MaterialParams& at, int max_order, double fraction = 0.5);

// CSV columns rx_x,rx_y,subcarrier_hz,re,im; one row per subcarrier. Rows
// of one point must be contiguous; the bandwidth is subcarrier spacing times
// subcarrier count.
MeasurementSet read_measurements_csv(std::istream& in);
void write_measurements_csv(std::ostream& out, const MeasurementSet& set);

} // namespace twinforge
