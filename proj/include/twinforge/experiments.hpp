#pragma once

#include "twinforge/bayes_env.hpp"
#include "twinforge/beam_tasks.hpp"
#include "twinforge/calibration.hpp"
#include "twinforge/config.hpp"
#include "twinforge/ppi.hpp"
#include "twinforge/scene.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <memory>
#include <string>
#include <vector>

namespace twinforge {

enum class ExperimentKind { CalibSweep, BayesMa, PpiBeam, CppiAod };

const std::vector<std::string>& experiment_names();
const char* experiment_name(ExperimentKind kind);

/// A parsed run configuration. Relative paths in it resolve against the
/// directory of the config file.
struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::CalibSweep;
    std::uint64_t seed = 0;
    Config raw;
    std::string base_dir = ".";

    /// Throws ConfigError on unknown names, missing keys or missing files.
    static ExperimentConfig from_config(const Config& cfg, const std::string& base_dir);
    static ExperimentConfig load(const std::string& path);

    std::string resolve(const std::string& path) const;
};

struct ResultTable {
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;

    void write_csv(std::ostream& out) const;
};

/// Shortest decimal text that reads back to the same double.
std::string format_number(double value);

// calib-sweep: one wall of the true scene displaced along its normal; the
// twin keeps the nominal geometry.
struct CalibSweepParams {
    Scene truth;
    Scene twin;
    MaterialParams materials;
    std::vector<double> bandwidths;
    double eval_bandwidth = 320e6;
    int subcarriers = 64;
    int train_points = 40;
    int test_points = 30;
    int replicates = 20;
    double init_offset = 0.3;
    std::array<double, 4> region{40, 100, -9, 9}; // x0, x1, y0, y1
    int max_order = 2;
    int gd_iters = 3000;
    int em_iters = 300;
    int m_steps = 10;
    int e_sweeps = 3;
};
CalibSweepParams calib_sweep_params(const ExperimentConfig& cfg);
inline constexpr std::array<CalibrationMethod, 3> kCalibMethods{
    CalibrationMethod::Oblivious, CalibrationMethod::UniformPhase, CalibrationMethod::PhaseAwareEm};
struct CalibCell {
    /// Held-out relative power error per method in kCalibMethods order.
    std::array<double, 3> errors{};
    std::array<CalibrationReport, 3> reports;
};
CalibCell calib_sweep_cell(const CalibSweepParams& p, std::size_t bandwidth_index, std::uint64_t seed);

// bayes-ma
struct BayesMaParams {
    MacModel model;
    DtPosterior prior = DtPosterior::default_grid();
    std::vector<int> log_slots{20, 2000};
    double log_transmit_prob = 0.05;
    int replicates = 50;
    RlOptions rl;
    int eval_episodes = 200;
    int eval_slots = 100;
};
BayesMaParams bayes_ma_params(const ExperimentConfig& cfg);
struct BayesMaCell {
    double true_kappa = 0.0;
    double map_kappa = 0.0;
    double bayesian = 0.0;
    double frequentist = 0.0;
};
BayesMaCell bayes_ma_cell(const BayesMaParams& p, int log_slots, std::uint64_t seed);

/// Linear-model features over 2D locations: Gaussian bumps on a square grid
/// inset from the region, a constant, and bearing harmonics around `origin`.
struct LocationFeatures {
    int per_axis = 7;
    double inset = 4.0;
    int harmonics = 4;
    /// Whitening against the synthetic sites; 0 disables it.
    double whiten_eps = 0.0;
};

// ppi-beam: best-beam classification from location (channel knowledge map).
struct PpiBeamParams {
    Scene truth;
    Scene twin;
    /// Twin walls whose existence is uncertain; the cross-fitting calibrator
    /// may drop them.
    std::vector<int> uncertain_walls;
    MaterialParams materials;
    MaterialParams twin_materials;
    /// Reflection coefficients the calibrator searches over, per material.
    std::vector<double> calibration_levels{0.1, 0.3, 0.5, 0.7, 0.9};
    int beams = 8;
    double snr = 1e6;
    int sites = 10000;
    std::vector<double> fractions{0.01, 0.03, 0.10};
    int folds = 4;
    int replicates = 20;
    std::array<double, 4> region{-49, 49, -49, 49};
    double test_step = 2.5;
    LocationFeatures features{22, 4.0, 4, 0.0};
    double ridge = 1e-4;
    FitOptions fit{4.0, 150, 1e-6};
    int max_order = 2;
};
PpiBeamParams ppi_beam_params(const ExperimentConfig& cfg);

/// Per-beam capacities of one site as a function of the materials.
struct BeamTable {
    std::vector<double> base_gain;
    std::vector<Eigen::VectorXi> bounces; // per path, per material
    Eigen::MatrixXd pattern;             // paths x beams
    Eigen::VectorXd capacities(const MaterialParams& materials, double snr) const;
};
/// Lowest index within a relative 1e-12 of the maximum.
int best_beam(const Eigen::VectorXd& capacities);

/// Everything a ppi-beam replicate needs that does not depend on the
/// replicate: traced sites, labels, test set, features.
struct PpiBeamSetup {
    PpiBeamParams params;
    std::vector<Point> sites;
    std::vector<int> true_beam;
    std::vector<int> twin_beam;
    /// Per candidate geometry (twin, twin without the uncertain walls).
    std::array<std::vector<BeamTable>, 2> tables;
    LabeledDataset synth;
    PseudoLabeler twin_labeler;
    Calibrator calibrator;
    std::optional<LossSpec> loss;
    std::vector<CkmSample> test;
    Eigen::MatrixXd test_inputs;
    double oracle_capacity = 0.0;
    double p_erm_capacity = 0.0;

    int site_index(const Eigen::VectorXd& input) const;
    /// Real samples: a seeded random subset of the sites with true labels.
    LabeledDataset real_subset(std::size_t n, std::uint64_t seed) const;
    double test_capacity(const Eigen::VectorXd& theta) const;
    Eigen::VectorXd train(const TermSet& terms) const;

    std::map<std::pair<double, double>, int> index;
};
std::shared_ptr<const PpiBeamSetup> make_ppi_beam_setup(const PpiBeamParams& p, std::uint64_t seed);
inline constexpr std::array<const char*, 4> kBeamMethods{"erm", "p_erm", "ppi", "cross_ppi"};
/// Mean test capacity per method in kBeamMethods order.
std::array<double, 4> ppi_beam_cell(const PpiBeamSetup& setup, std::size_t fraction_index, std::uint64_t seed);

// cppi-aod: departure-angle regression from location, context = LoS flag.
struct CppiAodParams {
    Scene truth;
    Scene twin;
    MaterialParams materials;
    MaterialParams twin_materials;
    int sites = 6000;
    int real_samples = 1500;
    /// Real samples are drawn with LoS sites this many times as likely as
    /// NLoS sites.
    double los_preference = 8.0;
    int replicates = 20;
    std::array<double, 4> region{-49, 49, -49, 49};
    double test_step = 2.5;
    LocationFeatures features{11, 4.0, 4, 1e-6};
    double ridge = 1e-4;
    FitOptions fit{0.2, 300, 1e-7};
    int max_order = 2;
};
CppiAodParams cppi_aod_params(const ExperimentConfig& cfg);

struct CppiAodSetup {
    CppiAodParams params;
    std::vector<Point> sites;
    std::vector<double> true_aod;
    std::vector<double> twin_aod;
    std::vector<bool> los;
    LabeledDataset synth; // context 1 = LoS
    PseudoLabeler twin_labeler;
    std::optional<LossSpec> loss;
    std::vector<AodSample> test;
    Eigen::MatrixXd test_inputs;
    std::vector<double> p_erm_errors;

    int site_index(const Eigen::VectorXd& input) const;
    /// LoS-preferential draw without replacement.
    LabeledDataset real_subset(std::uint64_t seed) const;
    /// Pointing error in degrees per test cell.
    std::vector<double> test_errors(const Eigen::VectorXd& theta) const;
    Eigen::VectorXd train(const TermSet& terms) const;

    std::map<std::pair<double, double>, int> index;
};
std::shared_ptr<const CppiAodSetup> make_cppi_aod_setup(const CppiAodParams& p, std::uint64_t seed);
inline constexpr std::array<const char*, 4> kAodMethods{"erm", "p_erm", "ppi", "cppi"};
/// errors[method][test cell], degrees, kAodMethods order.
using AodErrors = std::array<std::vector<double>, 4>;
AodErrors cppi_aod_cell(const CppiAodSetup& setup, std::uint64_t seed);

/// Replicate seed i of a run seed.
std::uint64_t replicate_seed(std::uint64_t run_seed, int replicate);

/// Runs the configured experiment with up to `jobs` worker threads. Output
/// does not depend on `jobs`.
ResultTable run_experiment(const ExperimentConfig& cfg, int jobs = 1);

} // namespace twinforge
