#include "twinforge/experiments.hpp"

#include "twinforge/rng.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <filesystem>
#include <numeric>
#include <ostream>
#include <set>
#include <thread>

namespace twinforge {

namespace {

const std::vector<std::string> kNames{"calib-sweep", "bayes-ma", "ppi-beam", "cppi-aod"};

const std::set<std::string> kRootKeys{"experiment", "seed"};

const std::set<std::string>& section_keys(ExperimentKind kind)
{
    static const std::set<std::string> calib{
        "scene",        "materials",   "displaced_wall", "displacement_wavelengths",
        "bandwidths_hz", "eval_bandwidth_hz", "subcarriers", "train_points",
        "test_points",  "replicates",  "init_offset",    "region",
        "max_order",    "gd_iters",    "em_iters",       "m_steps",
        "e_sweeps"};
    static const std::set<std::string> bayes{
        "n_devices", "arrival_prob",  "buffer_cap",  "kappa_grid",  "log_slots",
        "log_transmit_prob", "replicates", "episodes", "slots_per_episode", "lr",
        "epsilon",   "discount",      "temperature", "eval_episodes", "eval_slots"};
    static const std::set<std::string> beam{
        "truth_scene", "twin_scene", "uncertain_walls", "materials", "twin_materials",
        "calibration_levels", "beams", "snr", "sites", "real_fractions", "folds", "replicates",
        "region", "test_step", "rbf_per_axis", "rbf_inset", "harmonics", "whiten_eps", "ridge",
        "fit_step", "fit_iters", "fit_tol", "max_order"};
    static const std::set<std::string> aod{
        "truth_scene", "twin_scene", "materials", "twin_materials", "sites", "real_samples",
        "los_preference", "replicates", "region", "test_step", "rbf_per_axis", "rbf_inset",
        "harmonics", "whiten_eps", "ridge", "fit_step", "fit_iters", "fit_tol", "max_order"};
    switch (kind) {
    case ExperimentKind::CalibSweep:
        return calib;
    case ExperimentKind::BayesMa:
        return bayes;
    case ExperimentKind::PpiBeam:
        return beam;
    case ExperimentKind::CppiAod:
        break;
    }
    return aod;
}

// Typed accessors for the experiment's own section.
class Reader {
public:
    explicit Reader(const ExperimentConfig& cfg) : cfg_(cfg), section_(experiment_name(cfg.kind)) {}

    double real(const std::string& key, double fallback) const
    {
        return cfg_.raw.get_double_or(section_, key, fallback);
    }

    double positive(const std::string& key, double fallback) const
    {
        const double v = real(key, fallback);
        if (!(v > 0.0))
            fail(key, "must be positive");
        return v;
    }

    double unit(const std::string& key, double fallback) const
    {
        const double v = real(key, fallback);
        if (!(v >= 0.0 && v <= 1.0))
            fail(key, "must lie in [0, 1]");
        return v;
    }

    int integer(const std::string& key, long long fallback, long long lo, long long hi = 1LL << 30) const
    {
        const long long v = cfg_.raw.get_int_or(section_, key, fallback);
        if (v < lo || v > hi)
            fail(key, "must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
        return static_cast<int>(v);
    }

    std::vector<double> list(const std::string& key, const std::vector<double>& fallback) const
    {
        return cfg_.raw.get_list_or(section_, key, fallback);
    }

    std::vector<int> int_list(const std::string& key, const std::vector<int>& fallback, int lo) const
    {
        if (!cfg_.raw.has(section_, key))
            return fallback;
        std::vector<int> out;
        for (double v : cfg_.raw.get_list(section_, key)) {
            if (v != std::floor(v) || v < lo || v > 1e9)
                fail(key, "must hold integers >= " + std::to_string(lo));
            out.push_back(static_cast<int>(v));
        }
        return out;
    }

    MaterialParams materials(const std::string& key, const std::vector<double>& fallback) const
    {
        const std::vector<double> v = fallback.empty() ? cfg_.raw.get_list(section_, key) : list(key, fallback);
        for (double r : v)
            if (!(r >= 0.0 && r <= 1.0))
                fail(key, "reflection coefficients must lie in [0, 1]");
        return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    }

    std::array<double, 4> region(const std::array<double, 4>& fallback) const
    {
        const std::vector<double> v = list("region", {fallback.begin(), fallback.end()});
        if (v.size() != 4 || !(v[0] < v[1]) || !(v[2] < v[3]))
            fail("region", "must be x0, x1, y0, y1 with x0 < x1 and y0 < y1");
        return {v[0], v[1], v[2], v[3]};
    }

    Scene scene(const std::string& key) const
    {
        const std::string path = cfg_.resolve(cfg_.raw.get(section_, key));
        try {
            Scene s = load_scene(path);
            s.validate();
            return s;
        } catch (const std::exception& e) {
            throw ConfigError("config: [" + section_ + "] " + key + ": " + e.what());
        }
    }

    LocationFeatures features(const LocationFeatures& fallback) const
    {
        LocationFeatures f;
        f.per_axis = integer("rbf_per_axis", fallback.per_axis, 2, 64);
        f.inset = real("rbf_inset", fallback.inset);
        f.harmonics = integer("harmonics", fallback.harmonics, 0, 32);
        f.whiten_eps = real("whiten_eps", fallback.whiten_eps);
        if (!(f.whiten_eps >= 0.0))
            fail("whiten_eps", "must be nonnegative");
        return f;
    }

    FitOptions fit(const FitOptions& fallback) const
    {
        FitOptions f;
        f.step = positive("fit_step", fallback.step);
        f.max_iters = integer("fit_iters", fallback.max_iters, 0);
        f.tol = real("fit_tol", fallback.tol);
        if (!(f.tol >= 0.0))
            fail("fit_tol", "must be nonnegative");
        return f;
    }

    [[noreturn]] void fail(const std::string& key, const std::string& what) const
    {
        throw ConfigError("config: [" + section_ + "] " + key + " " + what);
    }

private:
    const ExperimentConfig& cfg_;
    std::string section_;
};

std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::uint64_t derived_seed(std::uint64_t seed, std::string_view name)
{
    Rng rng = substream(seed, name);
    return rng();
}

Point uniform_point(Rng& rng, const std::array<double, 4>& r)
{
    const double x = r[0] + (r[1] - r[0]) * uniform01(rng);
    const double y = r[2] + (r[3] - r[2]) * uniform01(rng);
    return Point(x, y);
}

std::vector<Point> cell_grid(const std::array<double, 4>& r, double step)
{
    std::vector<Point> out;
    for (double x = r[0] + step / 2; x < r[1]; x += step)
        for (double y = r[2] + step / 2; y < r[3]; y += step)
            out.emplace_back(x, y);
    return out;
}

FeatureMap location_feature_map(const LocationFeatures& f, const std::array<double, 4>& region, const Point& origin,
                                const Eigen::MatrixXd& reference, int* count)
{
    const double x0 = region[0] + f.inset, x1 = region[1] - f.inset;
    const double y0 = region[2] + f.inset, y1 = region[3] - f.inset;
    if (!(x0 < x1) || !(y0 < y1))
        throw ConfigError("config: rbf_inset leaves no room for the feature grid");
    const int n = f.per_axis;
    Eigen::MatrixXd centers(n * n, 2);
    const double sx = (x1 - x0) / (n - 1), sy = (y1 - y0) / (n - 1);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            centers.row(i * n + j) << x0 + sx * i, y0 + sy * j;
    FeatureMap map = with_bearing_harmonics(rbf_features(centers, sx), origin, f.harmonics);
    if (f.whiten_eps > 0.0)
        map = whitened_features(std::move(map), reference, f.whiten_eps);
    *count = n * n + 1 + 2 * f.harmonics;
    return map;
}

Eigen::MatrixXd stack_points(const std::vector<Point>& points)
{
    Eigen::MatrixXd out(static_cast<Eigen::Index>(points.size()), 2);
    for (std::size_t i = 0; i < points.size(); ++i)
        out.row(static_cast<Eigen::Index>(i)) = points[i].transpose();
    return out;
}

std::map<std::pair<double, double>, int> index_sites(const std::vector<Point>& sites)
{
    std::map<std::pair<double, double>, int> index;
    for (std::size_t i = 0; i < sites.size(); ++i)
        index.emplace(std::pair{sites[i].x(), sites[i].y()}, static_cast<int>(i));
    return index;
}

int lookup(const std::map<std::pair<double, double>, int>& index, const Eigen::VectorXd& input)
{
    if (input.size() != 2)
        throw std::invalid_argument("site lookup: inputs must be 2D locations");
    const auto it = index.find({input[0], input[1]});
    if (it == index.end())
        throw std::out_of_range("site lookup: input is not a traced site");
    return it->second;
}

BeamTable make_beam_table(const std::vector<PathSolution>& paths, const BeamCodebook& cb, int materials)
{
    BeamTable t;
    t.pattern.resize(static_cast<Eigen::Index>(paths.size()), cb.size());
    for (std::size_t p = 0; p < paths.size(); ++p) {
        t.base_gain.push_back(paths[p].base_gain);
        Eigen::VectorXi k = Eigen::VectorXi::Zero(materials);
        for (int m : paths[p].interaction_materials)
            ++k[m];
        t.bounces.push_back(k);
        for (int b = 0; b < cb.size(); ++b)
            t.pattern(static_cast<Eigen::Index>(p), b) = cb.gain(b, paths[p].aod);
    }
    return t;
}

Scene without_walls(const Scene& scene, std::vector<int> walls)
{
    Scene out = scene;
    std::sort(walls.rbegin(), walls.rend());
    for (int w : walls)
        out.walls.erase(out.walls.begin() + w);
    return out;
}

template <class Fn>
void parallel_for(std::size_t n, int jobs, Fn&& fn)
{
    const std::size_t workers = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), 1, std::max<std::size_t>(n, 1));
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(n);
    auto work = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < workers; ++w)
        pool.emplace_back(work);
    work();
    for (auto& t : pool)
        t.join();
    for (const auto& e : errors)
        if (e)
            std::rethrow_exception(e);
}

// Column kinds for ordering rows: numeric, unsigned integer or text.
void sort_rows(ResultTable& table, const std::string& kinds)
{
    auto less = [&](const std::vector<std::string>& a, const std::vector<std::string>& b) {
        for (std::size_t c = 0; c < kinds.size(); ++c) {
            if (a[c] == b[c])
                continue;
            switch (kinds[c]) {
            case 'n':
                return std::stod(a[c]) < std::stod(b[c]);
            case 'u':
                return std::stoull(a[c]) < std::stoull(b[c]);
            default:
                return a[c] < b[c];
            }
        }
        return false;
    };
    std::stable_sort(table.rows.begin(), table.rows.end(), less);
}

double mean(const std::vector<double>& v)
{
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

} // namespace

const std::vector<std::string>& experiment_names()
{
    return kNames;
}

const char* experiment_name(ExperimentKind kind)
{
    return kNames[static_cast<std::size_t>(kind)].c_str();
}

ExperimentConfig ExperimentConfig::from_config(const Config& cfg, const std::string& base_dir)
{
    ExperimentConfig out;
    out.raw = cfg;
    out.base_dir = base_dir.empty() ? "." : base_dir;
    const std::string& name = cfg.get("", "experiment");
    const auto it = std::find(kNames.begin(), kNames.end(), name);
    if (it == kNames.end())
    {
        std::string valid;
        for (const auto& n : kNames)
            valid += (valid.empty() ? "" : ", ") + n;
        throw ConfigError("config: unknown experiment '" + name + "' (valid: " + valid + ")");
    }
    out.kind = static_cast<ExperimentKind>(it - kNames.begin());
    const long long seed = cfg.get_int("", "seed");
    if (seed < 0)
        throw ConfigError("config: seed must be nonnegative");
    out.seed = static_cast<std::uint64_t>(seed);

    for (const Config::Section& s : cfg.sections()) {
        const bool root = s.name.empty();
        if (!root && s.name != name)
            throw ConfigError("config: unexpected section [" + s.name + "] for experiment " + name);
        const auto& allowed = root ? kRootKeys : section_keys(out.kind);
        for (const auto& [key, value] : s.entries)
            if (!allowed.count(key))
                throw ConfigError("config: unknown key " + (root ? key : "[" + s.name + "] " + key));
    }

    switch (out.kind) {
    case ExperimentKind::CalibSweep:
        calib_sweep_params(out);
        break;
    case ExperimentKind::BayesMa:
        bayes_ma_params(out);
        break;
    case ExperimentKind::PpiBeam:
        ppi_beam_params(out);
        break;
    case ExperimentKind::CppiAod:
        cppi_aod_params(out);
        break;
    }
    return out;
}

ExperimentConfig ExperimentConfig::load(const std::string& path)
{
    const Config cfg = Config::load(path);
    const std::string dir = std::filesystem::path(path).parent_path().string();
    return from_config(cfg, dir);
}

std::string ExperimentConfig::resolve(const std::string& path) const
{
    const std::filesystem::path p(path);
    if (p.is_absolute())
        return path;
    return (std::filesystem::path(base_dir) / p).lexically_normal().string();
}

void ResultTable::write_csv(std::ostream& out) const
{
    for (std::size_t c = 0; c < columns.size(); ++c)
        out << (c ? "," : "") << columns[c];
    out << "\n";
    for (const auto& row : rows) {
        for (std::size_t c = 0; c < row.size(); ++c)
            out << (c ? "," : "") << row[c];
        out << "\n";
    }
}

std::string format_number(double value)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, value);
    return std::string(buf, res.ptr);
}

std::uint64_t replicate_seed(std::uint64_t run_seed, int replicate)
{
    return splitmix64(run_seed * 0x100000001B3ULL + static_cast<std::uint64_t>(replicate));
}

// ---- calib-sweep ----

CalibSweepParams calib_sweep_params(const ExperimentConfig& cfg)
{
    const Reader r(cfg);
    CalibSweepParams p;
    p.twin = r.scene("scene");
    p.materials = r.materials("materials", {});
    try {
        check_materials(p.materials, p.twin.material_count());
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config: materials: ") + e.what());
    }
    const int wall = r.integer("displaced_wall", 0, 0, static_cast<long long>(p.twin.walls.size()) - 1);
    const double shift = r.real("displacement_wavelengths", 0.125) * p.twin.wavelength();
    p.truth = perturb_geometry(p.twin, wall, shift);
    p.bandwidths = r.list("bandwidths_hz", {5e6, 20e6, 80e6, 320e6});
    for (double b : p.bandwidths)
        if (!(b > 0.0))
            r.fail("bandwidths_hz", "must be positive");
    p.eval_bandwidth = r.positive("eval_bandwidth_hz", p.eval_bandwidth);
    p.subcarriers = r.integer("subcarriers", p.subcarriers, 2);
    p.train_points = r.integer("train_points", p.train_points, 1);
    p.test_points = r.integer("test_points", p.test_points, 1);
    p.replicates = r.integer("replicates", p.replicates, 1);
    p.init_offset = r.unit("init_offset", p.init_offset);
    p.region = r.region(p.region);
    p.max_order = r.integer("max_order", p.max_order, 0, kMaxReflectionOrder);
    p.gd_iters = r.integer("gd_iters", p.gd_iters, 0);
    p.em_iters = r.integer("em_iters", p.em_iters, 0);
    p.m_steps = r.integer("m_steps", p.m_steps, 1);
    p.e_sweeps = r.integer("e_sweeps", p.e_sweeps, 1);
    return p;
}

CalibCell calib_sweep_cell(const CalibSweepParams& p, std::size_t bandwidth_index, std::uint64_t seed)
{
    const double bw = p.bandwidths.at(bandwidth_index);
    Rng rng = substream(seed, "points");
    auto draw = [&] {
        for (int attempt = 0; attempt < 100000; ++attempt) {
            const Point x = uniform_point(rng, p.region);
            if (trace_paths(p.truth, x, p.max_order).size() >= 2 && trace_paths(p.twin, x, p.max_order).size() >= 2)
                return x;
        }
        throw std::runtime_error("calib-sweep: no point in the region sees two paths");
    };
    std::vector<Point> train, test;
    for (int i = 0; i < p.train_points; ++i)
        train.push_back(draw());
    for (int i = 0; i < p.test_points; ++i)
        test.push_back(draw());
    const MeasurementSet meas = simulate_measurements(p.truth, p.materials, train, p.subcarriers, bw, p.max_order);
    const MeasurementSet held =
        simulate_measurements(p.truth, p.materials, test, p.subcarriers, p.eval_bandwidth, p.max_order);

    const MaterialParams init = (p.materials.array() - p.init_offset).cwiseMax(0.0).cwiseMin(1.0).matrix();
    const MaterialParams ones = MaterialParams::Ones(p.materials.size());
    GradientOptions go;
    go.max_iters = p.gd_iters;
    go.max_order = p.max_order;
    go.tol = 0.0;
    go.step = suggest_step(CalibrationMethod::Oblivious, p.twin, meas, ones, p.max_order);
    GradientOptions gu = go;
    gu.step = suggest_step(CalibrationMethod::UniformPhase, p.twin, meas, ones, p.max_order);
    EmOptions eo;
    eo.em_iters = p.em_iters;
    eo.m_steps = p.m_steps;
    eo.e_sweeps = p.e_sweeps;
    eo.step = go.step;
    eo.max_order = p.max_order;

    CalibCell cell;
    cell.reports[0] = calibrate_oblivious(p.twin, meas, init, go);
    cell.reports[1] = calibrate_uniform_phase(p.twin, meas, init, gu);
    cell.reports[2] = calibrate_phase_aware_em(p.twin, meas, init, eo);
    for (int m = 0; m < 3; ++m)
        cell.errors[m] = relative_power_error(p.twin, cell.reports[m].fitted, held, p.max_order);
    return cell;
}

// ---- bayes-ma ----

BayesMaParams bayes_ma_params(const ExperimentConfig& cfg)
{
    const Reader r(cfg);
    BayesMaParams p;
    p.model.n_devices = r.integer("n_devices", 6, 1, 64);
    p.model.arrival_prob = r.unit("arrival_prob", 0.3);
    p.model.buffer_cap = r.integer("buffer_cap", 4, 1, 1000);
    if (cfg.raw.has(experiment_name(cfg.kind), "kappa_grid")) {
        const std::vector<double> g = r.list("kappa_grid", {});
        for (double k : g)
            if (!(k >= 0.0 && k <= 1.0))
                r.fail("kappa_grid", "values must lie in [0, 1]");
        p.prior = DtPosterior::uniform(Eigen::Map<const Eigen::VectorXd>(g.data(), static_cast<Eigen::Index>(g.size())));
    }
    p.log_slots = r.int_list("log_slots", p.log_slots, 0);
    p.log_transmit_prob = r.unit("log_transmit_prob", p.log_transmit_prob);
    p.replicates = r.integer("replicates", p.replicates, 1);
    p.rl.episodes = r.integer("episodes", 2000, 0);
    p.rl.slots_per_episode = r.integer("slots_per_episode", 50, 1);
    p.rl.lr = r.positive("lr", 0.005);
    p.rl.epsilon = r.unit("epsilon", 0.1);
    p.rl.discount = r.unit("discount", 0.5);
    p.rl.temperature = r.real("temperature", 0.1);
    if (!(p.rl.temperature >= 0.0))
        r.fail("temperature", "must be nonnegative");
    p.eval_episodes = r.integer("eval_episodes", p.eval_episodes, 1);
    p.eval_slots = r.integer("eval_slots", p.eval_slots, 1);
    return p;
}

BayesMaCell bayes_ma_cell(const BayesMaParams& p, int log_slots, std::uint64_t seed)
{
    MacModel truth = p.model;
    {
        Rng rng = substream(seed, "truth");
        const double u = uniform01(rng);
        double acc = 0.0;
        Eigen::Index pick = p.prior.weights.size() - 1;
        for (Eigen::Index i = 0; i < p.prior.weights.size(); ++i) {
            acc += p.prior.weights[i];
            if (u < acc) {
                pick = i;
                break;
            }
        }
        truth.kappa = p.prior.kappa_grid[pick];
    }
    const AccessLog log = simulate_access_log(truth, log_slots, p.log_transmit_prob, seed);
    const DtPosterior post = update_posterior(p.prior, log);
    RlOptions rl = p.rl;
    rl.seed = seed;
    const Policy bayesian = train_policy(post, truth, rl);
    const Policy frequentist = train_policy(post.map_kappa(), truth, rl);
    const std::uint64_t eval_seed = derived_seed(seed, "eval");

    BayesMaCell cell;
    cell.true_kappa = truth.kappa;
    cell.map_kappa = post.map_kappa();
    cell.bayesian = evaluate_policy(bayesian, truth, p.eval_episodes, eval_seed, p.eval_slots).mean;
    cell.frequentist = evaluate_policy(frequentist, truth, p.eval_episodes, eval_seed, p.eval_slots).mean;
    return cell;
}

// ---- ppi-beam ----

Eigen::VectorXd BeamTable::capacities(const MaterialParams& materials, double snr) const
{
    Eigen::VectorXd power = Eigen::VectorXd::Zero(pattern.cols());
    for (std::size_t p = 0; p < base_gain.size(); ++p) {
        double g = base_gain[p];
        for (Eigen::Index m = 0; m < bounces[p].size(); ++m)
            if (bounces[p][m] > 0)
                g *= std::pow(materials[m], bounces[p][m]);
        power += g * g * pattern.row(static_cast<Eigen::Index>(p)).transpose();
    }
    return (1.0 + snr * power.array()).log() / std::log(2.0);
}

int best_beam(const Eigen::VectorXd& capacities)
{
    const double top = capacities.maxCoeff();
    for (Eigen::Index b = 0; b < capacities.size(); ++b)
        if (capacities[b] >= top - 1e-12 * top)
            return static_cast<int>(b);
    return 0;
}

PpiBeamParams ppi_beam_params(const ExperimentConfig& cfg)
{
    const Reader r(cfg);
    PpiBeamParams p;
    p.truth = r.scene("truth_scene");
    p.twin = r.scene("twin_scene");
    p.uncertain_walls = r.int_list("uncertain_walls", {}, 0);
    for (int w : p.uncertain_walls)
        if (w >= static_cast<int>(p.twin.walls.size()))
            r.fail("uncertain_walls", "index " + std::to_string(w) + " is not a twin wall");
    p.materials = r.materials("materials", {});
    p.twin_materials = r.materials("twin_materials", std::vector<double>(p.materials.data(), p.materials.data() + p.materials.size()));
    const int count = std::max(p.truth.material_count(), p.twin.material_count());
    if (p.materials.size() < count || p.twin_materials.size() < count)
        r.fail("materials", "needs " + std::to_string(count) + " coefficients");
    p.calibration_levels = r.list("calibration_levels", p.calibration_levels);
    for (double v : p.calibration_levels)
        if (!(v >= 0.0 && v <= 1.0))
            r.fail("calibration_levels", "values must lie in [0, 1]");
    p.beams = r.integer("beams", p.beams, 2, 256);
    p.snr = r.positive("snr", p.snr);
    p.sites = r.integer("sites", p.sites, 2);
    p.fractions = r.list("real_fractions", p.fractions);
    p.folds = r.integer("folds", p.folds, 2, 100);
    for (double f : p.fractions)
        if (!(f > 0.0 && f <= 1.0) || std::lround(f * p.sites) < p.folds)
            r.fail("real_fractions", "must give at least `folds` real samples and at most all sites");
    p.replicates = r.integer("replicates", p.replicates, 1);
    p.region = r.region(p.region);
    p.test_step = r.positive("test_step", p.test_step);
    p.features = r.features(p.features);
    p.ridge = r.real("ridge", p.ridge);
    if (!(p.ridge >= 0.0))
        r.fail("ridge", "must be nonnegative");
    p.fit = r.fit(p.fit);
    p.max_order = r.integer("max_order", p.max_order, 0, kMaxReflectionOrder);
    return p;
}

int PpiBeamSetup::site_index(const Eigen::VectorXd& input) const
{
    return lookup(index, input);
}

LabeledDataset PpiBeamSetup::real_subset(std::size_t n, std::uint64_t seed) const
{
    if (n > sites.size())
        throw std::invalid_argument("ppi-beam: more real samples than sites");
    std::vector<int> order(sites.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng = substream(seed, "real");
    std::shuffle(order.begin(), order.end(), rng);
    LabeledDataset real;
    for (std::size_t j = 0; j < n; ++j) {
        const int i = order[j];
        real.samples.push_back({Eigen::Vector2d(sites[i]), static_cast<double>(true_beam[i]), std::nullopt,
                                DataSource::Real});
    }
    return real;
}

double PpiBeamSetup::test_capacity(const Eigen::VectorXd& theta) const
{
    const Eigen::VectorXd beam = loss->predict(theta, test_inputs);
    double sum = 0.0;
    for (std::size_t i = 0; i < test.size(); ++i)
        sum += test[i].capacity[static_cast<Eigen::Index>(beam[static_cast<Eigen::Index>(i)])];
    return sum / static_cast<double>(test.size());
}

Eigen::VectorXd PpiBeamSetup::train(const TermSet& terms) const
{
    const Eigen::VectorXd theta0 = Eigen::VectorXd::Zero(loss->parameter_count());
    return fit(make_objective(*loss, terms, params.ridge), theta0, params.fit);
}

std::shared_ptr<const PpiBeamSetup> make_ppi_beam_setup(const PpiBeamParams& p, std::uint64_t seed)
{
    auto s = std::make_shared<PpiBeamSetup>();
    s->params = p;
    const BeamCodebook cb = BeamCodebook::uniform(p.beams);
    const int materials = std::max(p.truth.material_count(), p.twin.material_count());
    check_materials(p.materials, materials);
    check_materials(p.twin_materials, materials);
    const std::array<Scene, 2> geometry{p.twin, without_walls(p.twin, p.uncertain_walls)};

    Rng rng = substream(seed, "sites");
    while (static_cast<int>(s->sites.size()) < p.sites) {
        const Point x = uniform_point(rng, p.region);
        const auto truth_paths = trace_paths(p.truth, x, p.max_order);
        if (truth_paths.empty())
            continue;
        s->sites.push_back(x);
        s->true_beam.push_back(best_beam(make_beam_table(truth_paths, cb, materials).capacities(p.materials, p.snr)));
        for (int g = 0; g < 2; ++g)
            s->tables[g].push_back(make_beam_table(trace_paths(geometry[g], x, p.max_order), cb, materials));
        s->twin_beam.push_back(best_beam(s->tables[0].back().capacities(p.twin_materials, p.snr)));
    }
    s->index = index_sites(s->sites);
    for (const Point& x : s->sites)
        s->synth.samples.push_back({Eigen::Vector2d(x), 0.0, std::nullopt, DataSource::Synth});

    const PpiBeamSetup* self = s.get();
    s->twin_labeler = [self](const Eigen::VectorXd& x) {
        return static_cast<double>(self->twin_beam[self->site_index(x)]);
    };
    // Grid search over geometry candidates and material levels, scored by
    // agreement with the real labels; ties go to the candidate closest to the
    // nominal twin.
    s->calibrator = [self](const LabeledDataset& subset) -> PseudoLabeler {
        const auto& q = self->params;
        const int m_count = static_cast<int>(q.twin_materials.size());
        const int levels = static_cast<int>(q.calibration_levels.size());
        std::vector<int> idx;
        for (const auto& sample : subset.samples)
            idx.push_back(self->site_index(sample.input));
        int best_agree = -1, best_g = 0;
        double best_dist = 0.0;
        MaterialParams best_m = q.twin_materials;
        for (int g = 0; g < 2; ++g) {
            std::vector<int> digit(static_cast<std::size_t>(m_count), 0);
            while (true) {
                MaterialParams m(m_count);
                for (int k = 0; k < m_count; ++k)
                    m[k] = q.calibration_levels[static_cast<std::size_t>(digit[k])];
                int agree = 0;
                for (std::size_t j = 0; j < idx.size(); ++j)
                    agree += best_beam(self->tables[g][idx[j]].capacities(m, q.snr)) ==
                             static_cast<int>(subset.samples[j].label);
                const double dist = (m - q.twin_materials).squaredNorm() + g;
                if (agree > best_agree || (agree == best_agree && dist < best_dist)) {
                    best_agree = agree;
                    best_dist = dist;
                    best_g = g;
                    best_m = m;
                }
                int k = m_count - 1;
                while (k >= 0 && ++digit[k] == levels)
                    digit[k--] = 0;
                if (k < 0)
                    break;
            }
        }
        auto labels = std::make_shared<std::vector<int>>(self->sites.size());
        for (std::size_t i = 0; i < self->sites.size(); ++i)
            (*labels)[i] = best_beam(self->tables[best_g][i].capacities(best_m, q.snr));
        return [self, labels](const Eigen::VectorXd& x) { return static_cast<double>((*labels)[self->site_index(x)]); };
    };

    std::vector<Point> grid;
    for (const Point& x : cell_grid(p.region, p.test_step))
        if (!trace_paths(p.truth, x, p.max_order).empty())
            grid.push_back(x);
    if (grid.empty())
        throw std::runtime_error("ppi-beam: no test cell sees the transmitter");
    s->test = build_ckm_dataset(p.truth, p.materials, grid, cb, p.snr, p.max_order);
    s->test_inputs = stack_points(grid);
    for (const auto& t : s->test)
        s->oracle_capacity += t.capacity.maxCoeff();
    s->oracle_capacity /= static_cast<double>(s->test.size());

    int features = 0;
    FeatureMap map = location_feature_map(p.features, p.region, p.truth.tx, stack_points(s->sites), &features);
    s->loss = LossSpec::cross_entropy(p.beams, features, std::move(map));
    s->p_erm_capacity = s->test_capacity(s->train(pseudo_terms(s->synth, s->twin_labeler)));
    return s;
}

std::array<double, 4> ppi_beam_cell(const PpiBeamSetup& setup, std::size_t fraction_index, std::uint64_t seed)
{
    const auto& p = setup.params;
    const auto n = static_cast<std::size_t>(std::lround(p.fractions.at(fraction_index) * p.sites));
    const LabeledDataset real = setup.real_subset(n, seed);
    const FoldPlan folds = FoldPlan::make(n, p.folds, seed);
    std::array<double, 4> out{};
    out[0] = setup.test_capacity(setup.train(empirical_terms(real)));
    out[1] = setup.p_erm_capacity;
    out[2] = setup.test_capacity(setup.train(ppi_terms(setup.synth, real, setup.twin_labeler)));
    out[3] = setup.test_capacity(
        setup.train(cross_ppi_terms(setup.synth, real, folds, cross_fit(real, folds, setup.calibrator))));
    return out;
}

// ---- cppi-aod ----

CppiAodParams cppi_aod_params(const ExperimentConfig& cfg)
{
    const Reader r(cfg);
    CppiAodParams p;
    p.truth = r.scene("truth_scene");
    p.twin = r.scene("twin_scene");
    p.materials = r.materials("materials", {});
    p.twin_materials = r.materials("twin_materials", std::vector<double>(p.materials.data(), p.materials.data() + p.materials.size()));
    if (p.materials.size() < p.truth.material_count() || p.twin_materials.size() < p.twin.material_count())
        r.fail("materials", "has fewer coefficients than the scenes reference");
    p.sites = r.integer("sites", p.sites, 2);
    p.real_samples = r.integer("real_samples", p.real_samples, 2, p.sites);
    p.los_preference = r.positive("los_preference", p.los_preference);
    p.replicates = r.integer("replicates", p.replicates, 1);
    p.region = r.region(p.region);
    p.test_step = r.positive("test_step", p.test_step);
    p.features = r.features(p.features);
    p.ridge = r.real("ridge", p.ridge);
    if (!(p.ridge >= 0.0))
        r.fail("ridge", "must be nonnegative");
    p.fit = r.fit(p.fit);
    p.max_order = r.integer("max_order", p.max_order, 0, kMaxReflectionOrder);
    return p;
}

int CppiAodSetup::site_index(const Eigen::VectorXd& input) const
{
    return lookup(index, input);
}

LabeledDataset CppiAodSetup::real_subset(std::uint64_t seed) const
{
    // Weighted sampling without replacement through exponential keys.
    Rng rng = substream(seed, "real");
    std::vector<std::pair<double, int>> keys(sites.size());
    for (std::size_t i = 0; i < sites.size(); ++i) {
        const double w = los[i] ? params.los_preference : 1.0;
        keys[i] = {-std::log(uniform01(rng)) / w, static_cast<int>(i)};
    }
    std::sort(keys.begin(), keys.end());
    LabeledDataset real;
    for (int j = 0; j < params.real_samples; ++j) {
        const int i = keys[static_cast<std::size_t>(j)].second;
        real.samples.push_back({Eigen::Vector2d(sites[i]), true_aod[i], los[i] ? 1 : 0, DataSource::Real});
    }
    return real;
}

std::vector<double> CppiAodSetup::test_errors(const Eigen::VectorXd& theta) const
{
    const Eigen::VectorXd angle = loss->predict(theta, test_inputs);
    std::vector<double> out(test.size());
    for (std::size_t i = 0; i < test.size(); ++i)
        out[i] = pointing_error(angle[static_cast<Eigen::Index>(i)], test[i].aod);
    return out;
}

Eigen::VectorXd CppiAodSetup::train(const TermSet& terms) const
{
    const Eigen::VectorXd theta0 = Eigen::VectorXd::Zero(loss->parameter_count());
    return fit(make_objective(*loss, terms, params.ridge), theta0, params.fit);
}

std::shared_ptr<const CppiAodSetup> make_cppi_aod_setup(const CppiAodParams& p, std::uint64_t seed)
{
    auto s = std::make_shared<CppiAodSetup>();
    s->params = p;
    Rng rng = substream(seed, "sites");
    while (static_cast<int>(s->sites.size()) < p.sites) {
        const Point x = uniform_point(rng, p.region);
        const auto truth = build_aod_dataset(p.truth, p.materials, {x}, p.max_order);
        if (truth.empty())
            continue;
        const auto twin = build_aod_dataset(p.twin, p.twin_materials, {x}, p.max_order);
        if (twin.empty())
            continue;
        s->sites.push_back(x);
        s->true_aod.push_back(truth[0].aod);
        s->twin_aod.push_back(twin[0].aod);
        s->los.push_back(truth[0].los);
    }
    s->index = index_sites(s->sites);
    for (std::size_t i = 0; i < s->sites.size(); ++i)
        s->synth.samples.push_back({Eigen::Vector2d(s->sites[i]), 0.0, s->los[i] ? 1 : 0, DataSource::Synth});
    const CppiAodSetup* self = s.get();
    s->twin_labeler = [self](const Eigen::VectorXd& x) { return self->twin_aod[self->site_index(x)]; };

    s->test = build_aod_dataset(p.truth, p.materials, cell_grid(p.region, p.test_step), p.max_order);
    if (s->test.empty())
        throw std::runtime_error("cppi-aod: no test cell sees the transmitter");
    std::vector<Point> cells;
    for (const auto& t : s->test)
        cells.push_back(t.location);
    s->test_inputs = stack_points(cells);

    int features = 0;
    FeatureMap map = location_feature_map(p.features, p.region, p.truth.tx, stack_points(s->sites), &features);
    s->loss = LossSpec::angular(features, std::move(map));
    s->p_erm_errors = s->test_errors(s->train(pseudo_terms(s->synth, s->twin_labeler)));
    return s;
}

AodErrors cppi_aod_cell(const CppiAodSetup& setup, std::uint64_t seed)
{
    const LabeledDataset real = setup.real_subset(seed);
    AodErrors out;
    out[0] = setup.test_errors(setup.train(empirical_terms(real)));
    out[1] = setup.p_erm_errors;
    out[2] = setup.test_errors(setup.train(ppi_terms(setup.synth, real, setup.twin_labeler)));
    out[3] = setup.test_errors(setup.train(cppi_terms(setup.synth, real, setup.twin_labeler, 2)));
    return out;
}

// ---- runner ----

ResultTable run_experiment(const ExperimentConfig& cfg, int jobs)
{
    ResultTable table;
    switch (cfg.kind) {
    case ExperimentKind::CalibSweep: {
        const CalibSweepParams p = calib_sweep_params(cfg);
        const std::size_t nb = p.bandwidths.size(), nr = static_cast<std::size_t>(p.replicates);
        std::vector<std::array<double, 3>> cells(nb * nr);
        parallel_for(cells.size(), jobs, [&](std::size_t t) {
            cells[t] = calib_sweep_cell(p, t / nr, replicate_seed(cfg.seed, static_cast<int>(t % nr))).errors;
        });
        table.columns = {"bandwidth_hz", "method", "rel_power_error"};
        for (std::size_t b = 0; b < nb; ++b)
            for (int m = 0; m < 3; ++m) {
                std::vector<double> v;
                for (std::size_t r = 0; r < nr; ++r)
                    v.push_back(cells[b * nr + r][m]);
                table.rows.push_back({format_number(p.bandwidths[b]), method_name(kCalibMethods[m]), format_number(mean(v))});
            }
        sort_rows(table, "ns");
        break;
    }
    case ExperimentKind::BayesMa: {
        const BayesMaParams p = bayes_ma_params(cfg);
        const std::size_t nl = p.log_slots.size(), nr = static_cast<std::size_t>(p.replicates);
        std::vector<BayesMaCell> cells(nl * nr);
        parallel_for(cells.size(), jobs, [&](std::size_t t) {
            cells[t] = bayes_ma_cell(p, p.log_slots[t / nr], replicate_seed(cfg.seed, static_cast<int>(t % nr)));
        });
        table.columns = {"log_slots", "mode", "seed", "throughput"};
        for (std::size_t t = 0; t < cells.size(); ++t) {
            const std::string slots = std::to_string(p.log_slots[t / nr]);
            const std::string seed = std::to_string(replicate_seed(cfg.seed, static_cast<int>(t % nr)));
            table.rows.push_back({slots, "bayesian", seed, format_number(cells[t].bayesian)});
            table.rows.push_back({slots, "frequentist", seed, format_number(cells[t].frequentist)});
        }
        sort_rows(table, "nsu");
        break;
    }
    case ExperimentKind::PpiBeam: {
        const PpiBeamParams p = ppi_beam_params(cfg);
        const auto setup = make_ppi_beam_setup(p, cfg.seed);
        const std::size_t nf = p.fractions.size(), nr = static_cast<std::size_t>(p.replicates);
        std::vector<std::array<double, 4>> cells(nf * nr);
        parallel_for(cells.size(), jobs, [&](std::size_t t) {
            cells[t] = ppi_beam_cell(*setup, t / nr, replicate_seed(cfg.seed, static_cast<int>(t % nr)));
        });
        table.columns = {"real_fraction", "method", "mean_capacity"};
        for (std::size_t f = 0; f < nf; ++f)
            for (std::size_t m = 0; m < kBeamMethods.size(); ++m) {
                std::vector<double> v;
                for (std::size_t r = 0; r < nr; ++r)
                    v.push_back(cells[f * nr + r][m]);
                table.rows.push_back({format_number(p.fractions[f]), kBeamMethods[m], format_number(mean(v))});
            }
        sort_rows(table, "ns");
        break;
    }
    case ExperimentKind::CppiAod: {
        const CppiAodParams p = cppi_aod_params(cfg);
        const auto setup = make_cppi_aod_setup(p, cfg.seed);
        const std::size_t nr = static_cast<std::size_t>(p.replicates);
        std::vector<AodErrors> cells(nr);
        parallel_for(nr, jobs, [&](std::size_t r) {
            cells[r] = cppi_aod_cell(*setup, replicate_seed(cfg.seed, static_cast<int>(r)));
        });
        table.columns = {"x", "y", "method", "pointing_error_deg"};
        for (std::size_t i = 0; i < setup->test.size(); ++i)
            for (std::size_t m = 0; m < kAodMethods.size(); ++m) {
                std::vector<double> v;
                for (std::size_t r = 0; r < nr; ++r)
                    v.push_back(cells[r][m][i]);
                const Point& x = setup->test[i].location;
                table.rows.push_back({format_number(x.x()), format_number(x.y()), kAodMethods[m], format_number(mean(v))});
            }
        sort_rows(table, "nns");
        break;
    }
    }
    return table;
}

} // namespace twinforge
