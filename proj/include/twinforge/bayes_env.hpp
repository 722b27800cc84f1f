#pragma once

#include "twinforge/rng.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <variant>
#include <vector>

namespace twinforge {

/// Slotted multiple-access channel. Each of `n_devices` queues receives a
/// packet with probability `arrival_prob` per slot (dropped when the buffer
/// is full). A packet sent alongside m-1 others survives with probability
/// (1 - kappa)^(m-1).
struct MacModel {
    double kappa = 0.0;
    int n_devices = 3;
    double arrival_prob = 0.3;
    int buffer_cap = 4;

    void validate() const;
};

/// Discrete posterior over interference levels.
struct DtPosterior {
    Eigen::VectorXd kappa_grid;
    Eigen::VectorXd weights;

    static DtPosterior uniform(const Eigen::VectorXd& grid);
    /// {0.0, 0.1, ..., 0.9}
    static DtPosterior default_grid();

    void validate() const;
    /// Lowest grid index among the maxima.
    Eigen::Index map_index() const;
    double map_kappa() const { return kappa_grid[map_index()]; }
    /// Shannon entropy in nats.
    double entropy() const;
};

struct AccessRecord {
    int m_tx = 0;
    int r_rx = 0;
};

using AccessLog = std::vector<AccessRecord>;

/// Shared tabular policy: probability of transmitting for each own-buffer
/// occupancy 0..buffer_cap. Waiting has the complementary probability.
struct Policy {
    Eigen::VectorXd p_transmit;

    static Policy uniform(int buffer_cap);
    static Policy constant(int buffer_cap, double p);
};

/// Binomial(m, p) pmf at r with p = (1 - kappa)^(m - 1), p = 1 for m <= 1.
double channel_likelihood(double kappa, int m_tx, int r_rx);

DtPosterior update_posterior(const DtPosterior& prior, const AccessLog& log);

std::vector<double> sample_models(const DtPosterior& posterior, int n, std::uint64_t rng_seed);

/// Rolls the true channel for `slots` slots with every backlogged device
/// transmitting with probability `p_transmit`, recording (m, r) per slot.
AccessLog simulate_access_log(const MacModel& model, int slots, double p_transmit, std::uint64_t seed);

struct RlOptions {
    int episodes = 2000;
    int slots_per_episode = 50;
    double lr = 0.05;
    double epsilon = 0.1;
    double discount = 0.9;
    /// Softmax temperature on Q(transmit) - Q(wait); 0 selects the greedy
    /// policy.
    double temperature = 0.0;
    std::uint64_t seed = 0;
};

/// Bayesian training draws a fresh kappa from the posterior at the start of
/// every episode; frequentist training uses one fixed kappa (the MAP).
using TrainingSource = std::variant<DtPosterior, double>;

/// Shared-table Q-learning over (buffer occupancy, {transmit, wait}) with a
/// team reward of packets delivered per slot. With a positive temperature
/// devices act on, and the result is, the softmax policy; otherwise the greedy
/// one (ties split 50/50). Exploration mixes in uniform actions with
/// probability epsilon. Zero episodes yield the uniform policy.
Policy train_policy(const TrainingSource& source, const MacModel& base, const RlOptions& opts);

struct Throughput {
    double mean = 0.0;
    double stderr_ = 0.0;
};

/// Mean delivered packets per slot over seeded episodes in `true_model`,
/// with the standard error across episodes.
Throughput evaluate_policy(const Policy& policy, const MacModel& true_model, int episodes, std::uint64_t seed,
                           int slots_per_episode = 100);

// CSV: m_tx,r_rx
AccessLog read_access_log_csv(std::istream& in);
void write_access_log_csv(std::ostream& out, const AccessLog& log);
// CSV: buffer_level,p_transmit
void write_policy_csv(std::ostream& out, const Policy& policy);
Policy read_policy_csv(std::istream& in);

} // namespace twinforge
