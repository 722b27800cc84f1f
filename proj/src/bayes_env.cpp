#include "twinforge/bayes_env.hpp"

#include <boost/math/special_functions/binomial.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace twinforge {

namespace {

constexpr int kTransmit = 0;
constexpr int kWait = 1;

// Index of the first cumulative weight exceeding u.
Eigen::Index inverse_cdf(const Eigen::VectorXd& weights, double u)
{
    double cumulative = 0.0;
    Eigen::Index last_positive = 0;
    for (Eigen::Index i = 0; i < weights.size(); ++i) {
        if (weights[i] <= 0.0)
            continue;
        cumulative += weights[i];
        last_positive = i;
        if (u < cumulative)
            return i;
    }
    return last_positive;
}

class MacChannel {
public:
    explicit MacChannel(const MacModel& model) : model_(model), buffers_(model.n_devices, 0) {}

    void reset() { std::fill(buffers_.begin(), buffers_.end(), 0); }

    const std::vector<int>& buffers() const { return buffers_; }

    /// Runs one slot. Devices with an empty buffer cannot transmit.
    /// Returns (transmissions, deliveries).
    AccessRecord step(const std::vector<int>& actions, double kappa, Rng& rng)
    {
        int m = 0;
        for (int d = 0; d < model_.n_devices; ++d)
            if (actions[d] == kTransmit && buffers_[d] > 0)
                ++m;
        const double success = m <= 1 ? 1.0 : std::pow(1.0 - kappa, m - 1);
        int delivered = 0;
        for (int d = 0; d < model_.n_devices; ++d) {
            if (actions[d] != kTransmit || buffers_[d] == 0)
                continue;
            if (uniform01(rng) < success) {
                --buffers_[d];
                ++delivered;
            }
        }
        for (int d = 0; d < model_.n_devices; ++d)
            if (uniform01(rng) < model_.arrival_prob && buffers_[d] < model_.buffer_cap)
                ++buffers_[d];
        return {m, delivered};
    }

private:
    MacModel model_;
    std::vector<int> buffers_;
};

double transmit_probability(const Eigen::MatrixXd& q, int level, double temperature)
{
    const double gap = q(level, kTransmit) - q(level, kWait);
    if (temperature == 0.0)
        return gap > 0.0 ? 1.0 : gap < 0.0 ? 0.0 : 0.5;
    return 1.0 / (1.0 + std::exp(-gap / temperature));
}

} // namespace

void MacModel::validate() const
{
    if (!(kappa >= 0.0 && kappa < 1.0))
        throw std::invalid_argument("mac model: kappa must lie in [0, 1)");
    if (n_devices < 1)
        throw std::invalid_argument("mac model: n_devices must be positive");
    if (!(arrival_prob >= 0.0 && arrival_prob <= 1.0))
        throw std::invalid_argument("mac model: arrival_prob must lie in [0, 1]");
    if (buffer_cap < 1)
        throw std::invalid_argument("mac model: buffer_cap must be positive");
}

DtPosterior DtPosterior::uniform(const Eigen::VectorXd& grid)
{
    DtPosterior p{grid, Eigen::VectorXd::Constant(grid.size(), 1.0 / static_cast<double>(grid.size()))};
    p.validate();
    return p;
}

DtPosterior DtPosterior::default_grid()
{
    return uniform(Eigen::VectorXd::LinSpaced(10, 0.0, 0.9));
}

void DtPosterior::validate() const
{
    if (kappa_grid.size() == 0 || kappa_grid.size() != weights.size())
        throw std::invalid_argument("posterior: grid and weights must be nonempty and equally long");
    for (Eigen::Index i = 0; i < kappa_grid.size(); ++i) {
        if (!(kappa_grid[i] >= 0.0 && kappa_grid[i] < 1.0))
            throw std::invalid_argument("posterior: grid point outside [0, 1)");
        if (i > 0 && !(kappa_grid[i] > kappa_grid[i - 1]))
            throw std::invalid_argument("posterior: grid must be strictly increasing");
        if (!(weights[i] >= 0.0))
            throw std::invalid_argument("posterior: negative weight");
    }
    if (std::abs(weights.sum() - 1.0) > 1e-12)
        throw std::invalid_argument("posterior: weights do not sum to 1");
}

Eigen::Index DtPosterior::map_index() const
{
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < weights.size(); ++i)
        if (weights[i] > weights[best])
            best = i;
    return best;
}

double DtPosterior::entropy() const
{
    double h = 0.0;
    for (Eigen::Index i = 0; i < weights.size(); ++i)
        if (weights[i] > 0.0)
            h -= weights[i] * std::log(weights[i]);
    return h;
}

Policy Policy::uniform(int buffer_cap)
{
    return constant(buffer_cap, 0.5);
}

Policy Policy::constant(int buffer_cap, double p)
{
    return Policy{Eigen::VectorXd::Constant(buffer_cap + 1, p)};
}

double channel_likelihood(double kappa, int m_tx, int r_rx)
{
    if (r_rx < 0 || m_tx < 0 || r_rx > m_tx)
        throw std::invalid_argument("channel_likelihood: need 0 <= r <= m, got m=" + std::to_string(m_tx) +
                                    " r=" + std::to_string(r_rx));
    const double p = m_tx <= 1 ? 1.0 : std::pow(1.0 - kappa, m_tx - 1);
    const double coeff =
        boost::math::binomial_coefficient<double>(static_cast<unsigned>(m_tx), static_cast<unsigned>(r_rx));
    return coeff * std::pow(p, r_rx) * std::pow(1.0 - p, m_tx - r_rx);
}

DtPosterior update_posterior(const DtPosterior& prior, const AccessLog& log)
{
    prior.validate();
    if (log.empty())
        return prior;
    std::map<std::pair<int, int>, int> counts;
    for (const AccessRecord& rec : log)
        ++counts[{rec.m_tx, rec.r_rx}];

    const Eigen::Index n = prior.weights.size();
    const double neg_inf = -std::numeric_limits<double>::infinity();
    Eigen::VectorXd log_w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double lw = prior.weights[i] > 0.0 ? std::log(prior.weights[i]) : neg_inf;
        for (const auto& [key, count] : counts) {
            if (lw == neg_inf)
                break;
            const double lik = channel_likelihood(prior.kappa_grid[i], key.first, key.second);
            lw = lik > 0.0 ? lw + count * std::log(lik) : neg_inf;
        }
        log_w[i] = lw;
    }
    const double top = log_w.maxCoeff();
    if (top == neg_inf)
        throw std::invalid_argument("update_posterior: the access log has zero likelihood at every grid point");
    DtPosterior post{prior.kappa_grid, Eigen::VectorXd::Zero(n)};
    for (Eigen::Index i = 0; i < n; ++i)
        post.weights[i] = log_w[i] == neg_inf ? 0.0 : std::exp(log_w[i] - top);
    post.weights /= post.weights.sum();
    return post;
}

std::vector<double> sample_models(const DtPosterior& posterior, int n, std::uint64_t rng_seed)
{
    if (n < 0)
        throw std::invalid_argument("sample_models: n must be nonnegative");
    posterior.validate();
    Rng rng = substream(rng_seed, "sample_models");
    std::vector<double> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i)
        out.push_back(posterior.kappa_grid[inverse_cdf(posterior.weights, uniform01(rng))]);
    return out;
}

AccessLog simulate_access_log(const MacModel& model, int slots, double p_transmit, std::uint64_t seed)
{
    model.validate();
    Rng rng = substream(seed, "access_log");
    MacChannel channel(model);
    std::vector<int> actions(model.n_devices);
    AccessLog log;
    log.reserve(slots);
    for (int s = 0; s < slots; ++s) {
        for (int d = 0; d < model.n_devices; ++d)
            actions[d] = uniform01(rng) < p_transmit ? kTransmit : kWait;
        log.push_back(channel.step(actions, model.kappa, rng));
    }
    return log;
}

Policy train_policy(const TrainingSource& source, const MacModel& base, const RlOptions& opts)
{
    base.validate();
    if (opts.episodes < 0 || opts.slots_per_episode < 1 || !(opts.lr > 0.0 && opts.lr <= 1.0) ||
        !(opts.epsilon >= 0.0 && opts.epsilon <= 1.0) || !(opts.discount >= 0.0 && opts.discount < 1.0) || !(opts.temperature >= 0.0))
        throw std::invalid_argument("train_policy: invalid RL options");
    if (opts.episodes == 0)
        return Policy::uniform(base.buffer_cap);

    const DtPosterior* posterior = std::get_if<DtPosterior>(&source);
    if (posterior)
        posterior->validate();
    Rng rl = substream(opts.seed, "rl");
    Rng model_draws = substream(opts.seed, "kappa_draws");

    const int levels = base.buffer_cap + 1;
    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(levels, 2);
    MacChannel channel(base);
    std::vector<int> obs(base.n_devices), actions(base.n_devices);

    for (int ep = 0; ep < opts.episodes; ++ep) {
        const double kappa = posterior ? posterior->kappa_grid[inverse_cdf(posterior->weights, uniform01(model_draws))]
                                       : std::get<double>(source);
        channel.reset();
        for (int slot = 0; slot < opts.slots_per_episode; ++slot) {
            obs = channel.buffers();
            for (int d = 0; d < base.n_devices; ++d) {
                if (obs[d] == 0) {
                    actions[d] = kWait;
                } else if (uniform01(rl) < opts.epsilon) {
                    actions[d] = uniform01(rl) < 0.5 ? kTransmit : kWait;
                } else {
                    actions[d] = uniform01(rl) < transmit_probability(q, obs[d], opts.temperature) ? kTransmit : kWait;
                }
            }
            const AccessRecord outcome = channel.step(actions, kappa, rl);
            const auto& next = channel.buffers();
            for (int d = 0; d < base.n_devices; ++d) {
                const double target = outcome.r_rx + opts.discount * q.row(next[d]).maxCoeff();
                q(obs[d], actions[d]) += opts.lr * (target - q(obs[d], actions[d]));
            }
        }
    }

    Policy policy{Eigen::VectorXd(levels)};
    for (int b = 0; b < levels; ++b)
        policy.p_transmit[b] = transmit_probability(q, b, opts.temperature);
    return policy;
}

Throughput evaluate_policy(const Policy& policy, const MacModel& true_model, int episodes, std::uint64_t seed,
                           int slots_per_episode)
{
    true_model.validate();
    if (episodes < 1 || slots_per_episode < 1)
        throw std::invalid_argument("evaluate_policy: episodes and slots must be positive");
    if (policy.p_transmit.size() != true_model.buffer_cap + 1)
        throw std::invalid_argument("evaluate_policy: policy table does not match the buffer capacity");
    Rng rng = substream(seed, "evaluate");
    MacChannel channel(true_model);
    std::vector<int> actions(true_model.n_devices);
    double sum = 0.0, sum_sq = 0.0;
    for (int ep = 0; ep < episodes; ++ep) {
        channel.reset();
        int delivered = 0;
        for (int slot = 0; slot < slots_per_episode; ++slot) {
            const auto& buffers = channel.buffers();
            for (int d = 0; d < true_model.n_devices; ++d)
                actions[d] = uniform01(rng) < policy.p_transmit[buffers[d]] ? kTransmit : kWait;
            delivered += channel.step(actions, true_model.kappa, rng).r_rx;
        }
        const double rate = static_cast<double>(delivered) / slots_per_episode;
        sum += rate;
        sum_sq += rate * rate;
    }
    Throughput out;
    out.mean = sum / episodes;
    if (episodes > 1) {
        const double var = std::max(0.0, (sum_sq - episodes * out.mean * out.mean) / (episodes - 1));
        out.stderr_ = std::sqrt(var / episodes);
    }
    return out;
}

AccessLog read_access_log_csv(std::istream& in)
{
    AccessLog log;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line.rfind("m_tx", 0) == 0)
            continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream is(line);
        AccessRecord rec;
        if (!(is >> rec.m_tx >> rec.r_rx) || rec.m_tx < 0 || rec.r_rx < 0 || rec.r_rx > rec.m_tx)
            throw std::invalid_argument("access log line " + std::to_string(line_no) + ": expected 0 <= r_rx <= m_tx");
        log.push_back(rec);
    }
    return log;
}

void write_access_log_csv(std::ostream& out, const AccessLog& log)
{
    out << "m_tx,r_rx\n";
    for (const AccessRecord& rec : log)
        out << rec.m_tx << "," << rec.r_rx << "\n";
}

void write_policy_csv(std::ostream& out, const Policy& policy)
{
    out << "buffer_level,p_transmit\n" << std::setprecision(17);
    for (Eigen::Index b = 0; b < policy.p_transmit.size(); ++b)
        out << b << "," << policy.p_transmit[b] << "\n";
}

Policy read_policy_csv(std::istream& in)
{
    std::vector<double> p;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line.rfind("buffer_level", 0) == 0)
            continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream is(line);
        int level = 0;
        double prob = 0.0;
        if (!(is >> level >> prob) || level != static_cast<int>(p.size()) || !(prob >= 0.0 && prob <= 1.0))
            throw std::invalid_argument("policy csv line " + std::to_string(line_no) + ": malformed row");
        p.push_back(prob);
    }
    return Policy{Eigen::Map<const Eigen::VectorXd>(p.data(), static_cast<Eigen::Index>(p.size()))};
}

} // namespace twinforge
