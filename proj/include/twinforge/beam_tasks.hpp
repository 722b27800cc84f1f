#pragma once

#include "twinforge/scene.hpp"

#include <Eigen/Dense>

#include <functional>
#include <iosfwd>
#include <vector>

namespace twinforge {

/// Beams centred at 2*pi*b/B (wrapped into (-pi, pi]) with a Gaussian gain
/// pattern in the wrapped angular distance.
struct BeamCodebook {
    Eigen::VectorXd centers;
    double width = 0.0;

    /// Width defaults to half the spacing between neighbouring beams.
    static BeamCodebook uniform(int beams, double width = 0.0);

    int size() const { return static_cast<int>(centers.size()); }
    double gain(int beam, double angle) const;
    void validate() const;
};

/// log2(1 + snr * sum_p g_p^2 G(beam, aod_p)).
double beam_capacity(const std::vector<PathSolution>& paths, const MaterialParams& materials,
                     const BeamCodebook& codebook, int beam, double snr);

struct CkmSample {
    Point location;
    int best_beam = 0;
    Eigen::VectorXd capacity; // per beam, bps/Hz
};

struct AodSample {
    Point location;
    double aod = 0.0;
    bool los = false;
};

/// Best beam ties go to the lowest index; locations without paths keep
/// all-zero capacities and beam 0.
std::vector<CkmSample> build_ckm_dataset(const Scene& scene, const MaterialParams& materials,
                                         const std::vector<Point>& grid, const BeamCodebook& codebook, double snr,
                                         int max_order = 2);

/// Departure angle of the strongest path; locations without paths are
/// skipped.
std::vector<AodSample> build_aod_dataset(const Scene& scene, const MaterialParams& materials,
                                         const std::vector<Point>& grid, int max_order = 2);

/// Wrapped absolute angle difference in degrees, in [0, 180].
double pointing_error(double predicted, double truth);

/// Mean over `test` of the capacity of the predicted beam.
double evaluate_beam_model(const std::function<int(const Point&)>& predictor, const std::vector<CkmSample>& test);

// CSV: x,y,best_beam,cap_0,...,cap_{B-1}
void write_ckm_csv(std::ostream& out, const std::vector<CkmSample>& data);
std::vector<CkmSample> read_ckm_csv(std::istream& in);
// CSV: x,y,aod_rad,los_flag
void write_aod_csv(std::ostream& out, const std::vector<AodSample>& data);
std::vector<AodSample> read_aod_csv(std::istream& in);

} // namespace twinforge
