#include "twinforge/bayes_env.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace twinforge;

namespace {

MacModel busy_channel(double kappa)
{
    MacModel m;
    m.kappa = kappa;
    m.n_devices = 6;
    m.arrival_prob = 0.3;
    m.buffer_cap = 4;
    return m;
}

} // namespace

TEST_CASE("channel likelihood examples")
{
    for (double k : {0.0, 0.3, 0.9})
        CHECK(channel_likelihood(k, 1, 1) == 1.0);
    CHECK(channel_likelihood(0.0, 3, 3) == 1.0);
    CHECK(channel_likelihood(0.5, 2, 1) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(channel_likelihood(0.5, 2, 2) == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(channel_likelihood(0.2, 0, 0) == 1.0);
    CHECK_THROWS(channel_likelihood(0.2, 2, 3));
    CHECK_THROWS(channel_likelihood(0.2, 2, -1));
}

TEST_CASE("channel likelihood rows sum to one")
{
    for (double k = 0.0; k < 1.0; k += 0.05)
        for (int m = 0; m <= 12; ++m) {
            double total = 0.0;
            for (int r = 0; r <= m; ++r)
                total += channel_likelihood(k, m, r);
            CHECK(std::abs(total - 1.0) <= 1e-12);
        }
}

TEST_CASE("posterior update examples")
{
    const DtPosterior prior = DtPosterior::default_grid();
    REQUIRE(prior.kappa_grid.size() == 10);
    CHECK(prior.kappa_grid[3] == doctest::Approx(0.3));

    const DtPosterior same = update_posterior(prior, {});
    CHECK(same.weights == prior.weights);

    const DtPosterior lost = update_posterior(prior, {{2, 1}});
    CHECK(lost.weights[0] == 0.0);
    CHECK(std::abs(lost.weights.sum() - 1.0) <= 1e-12);

    DtPosterior only_zero;
    only_zero.kappa_grid = Eigen::VectorXd::Zero(1);
    only_zero.weights = Eigen::VectorXd::Ones(1);
    CHECK_THROWS(update_posterior(only_zero, {{2, 1}}));
}

TEST_CASE("posterior factorises over concatenated logs")
{
    const MacModel truth = busy_channel(0.4);
    const AccessLog a = simulate_access_log(truth, 40, 0.3, 1);
    const AccessLog b = simulate_access_log(truth, 60, 0.3, 2);
    AccessLog ab = a;
    ab.insert(ab.end(), b.begin(), b.end());
    const DtPosterior prior = DtPosterior::default_grid();
    const DtPosterior joint = update_posterior(prior, ab);
    const DtPosterior seq = update_posterior(update_posterior(prior, a), b);
    CHECK((joint.weights - seq.weights).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(std::abs(joint.weights.sum() - 1.0) <= 1e-12);
    CHECK(std::abs(seq.weights.sum() - 1.0) <= 1e-12);
}

TEST_CASE("posterior concentrates on the true grid point")
{
    const MacModel truth = busy_channel(0.3);
    int hits = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const DtPosterior post = update_posterior(DtPosterior::default_grid(), simulate_access_log(truth, 1000, 0.3, seed));
        CHECK(std::abs(post.weights.sum() - 1.0) <= 1e-12);
        hits += std::abs(post.map_kappa() - 0.3) < 1e-12;
    }
    CHECK(hits >= 95);
}

TEST_CASE("expected posterior entropy shrinks with log length")
{
    const MacModel truth = busy_channel(0.5);
    double last = DtPosterior::default_grid().entropy();
    for (int slots : {5, 20, 80, 320}) {
        double total = 0.0;
        for (std::uint64_t seed = 0; seed < 60; ++seed)
            total += update_posterior(DtPosterior::default_grid(), simulate_access_log(truth, slots, 0.3, 1000 + seed))
                         .entropy();
        const double mean = total / 60;
        CHECK(mean <= last);
        last = mean;
    }
}

TEST_CASE("map index prefers the lowest grid point on ties")
{
    DtPosterior p = DtPosterior::uniform(DtPosterior::default_grid().kappa_grid);
    CHECK(p.map_index() == 0);
    p.weights.setZero();
    p.weights[3] = p.weights[7] = 0.5;
    CHECK(p.map_index() == 3);
}

TEST_CASE("sample_models draws from the weights")
{
    DtPosterior point;
    point.kappa_grid = (Eigen::VectorXd(3) << 0.2, 0.4, 0.6).finished();
    point.weights = (Eigen::VectorXd(3) << 0.0, 1.0, 0.0).finished();
    for (double k : sample_models(point, 500, 3))
        CHECK(k == 0.4);
    CHECK(sample_models(point, 0, 3).empty());

    DtPosterior two;
    two.kappa_grid = (Eigen::VectorXd(2) << 0.1, 0.7).finished();
    two.weights = (Eigen::VectorXd(2) << 0.25, 0.75).finished();
    const auto draws = sample_models(two, 100000, 17);
    const double freq = std::count(draws.begin(), draws.end(), 0.1) / 1e5;
    CHECK(std::abs(freq - 0.25) <= 0.01);
    CHECK(sample_models(two, 1000, 5) == sample_models(two, 1000, 5));
}

TEST_CASE("training examples")
{
    MacModel base = busy_channel(0.0);
    RlOptions opts;
    opts.episodes = 0;
    const Policy untrained = train_policy(0.3, base, opts);
    CHECK(untrained.p_transmit.size() == base.buffer_cap + 1);
    CHECK((untrained.p_transmit.array() == 0.5).all());

    opts.episodes = 200;
    opts.slots_per_episode = 20;
    opts.seed = 9;
    DtPosterior point;
    point.kappa_grid = (Eigen::VectorXd(2) << 0.2, 0.4).finished();
    point.weights = (Eigen::VectorXd(2) << 0.0, 1.0).finished();
    const Policy bayes = train_policy(point, base, opts);
    const Policy freq = train_policy(0.4, base, opts);
    CHECK(bayes.p_transmit == freq.p_transmit);
    opts.temperature = 0.1;
    CHECK(train_policy(point, base, opts).p_transmit == train_policy(0.4, base, opts).p_transmit);

    MacModel alone;
    alone.n_devices = 1;
    alone.arrival_prob = 1.0;
    RlOptions solo;
    solo.episodes = 5000;
    solo.seed = 4;
    const Policy p = train_policy(0.0, alone, solo);
    for (Eigen::Index b = 1; b < p.p_transmit.size(); ++b)
        CHECK(p.p_transmit[b] > 0.99);
}

TEST_CASE("evaluation examples")
{
    MacModel alone;
    alone.n_devices = 1;
    alone.arrival_prob = 0.3;
    CHECK(evaluate_policy(Policy::constant(alone.buffer_cap, 0.0), alone, 10, 1).mean == 0.0);
    const Throughput t = evaluate_policy(Policy::constant(alone.buffer_cap, 1.0), alone, 200, 2, 500);
    CHECK(std::abs(t.mean - 0.3) <= 0.02);
    CHECK(t.stderr_ > 0.0);
    const Throughput again = evaluate_policy(Policy::constant(alone.buffer_cap, 1.0), alone, 200, 2, 500);
    CHECK(again.mean == t.mean);
    CHECK(again.stderr_ == t.stderr_);
}

TEST_CASE("access log and policy csv round-trip")
{
    const AccessLog log = simulate_access_log(busy_channel(0.2), 30, 0.4, 5);
    for (const auto& rec : log) {
        CHECK(rec.r_rx >= 0);
        CHECK(rec.r_rx <= rec.m_tx);
    }
    std::ostringstream out;
    write_access_log_csv(out, log);
    CHECK(out.str().rfind("m_tx,r_rx\n", 0) == 0);
    std::istringstream in(out.str());
    const AccessLog back = read_access_log_csv(in);
    REQUIRE(back.size() == log.size());
    for (std::size_t i = 0; i < log.size(); ++i) {
        CHECK(back[i].m_tx == log[i].m_tx);
        CHECK(back[i].r_rx == log[i].r_rx);
    }
    std::istringstream bad("m_tx,r_rx\n1,2\n");
    CHECK_THROWS_WITH(read_access_log_csv(bad), doctest::Contains("line 2"));

    const Policy p = Policy::constant(3, 0.25);
    std::ostringstream pol;
    write_policy_csv(pol, p);
    CHECK(pol.str().rfind("buffer_level,p_transmit\n", 0) == 0);
    std::istringstream pin(pol.str());
    CHECK(read_policy_csv(pin).p_transmit == p.p_transmit);
}

TEST_CASE("model validation")
{
    CHECK_THROWS(busy_channel(1.0).validate());
    MacModel m = busy_channel(0.1);
    m.arrival_prob = 1.5;
    CHECK_THROWS(m.validate());
    DtPosterior bad = DtPosterior::default_grid();
    bad.weights[0] += 0.1;
    CHECK_THROWS(bad.validate());
}
