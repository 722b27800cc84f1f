#pragma once

// Enumerable toy regression task shared by the estimator tests and the
// acceptance suite. Inputs x in {0, 1, 2}, scalar labels, squared loss on
// affine features.

#include "twinforge/ppi.hpp"

#include <random>
#include <vector>

namespace toy {

struct Atom {
    double x;
    double y;
    double p;
};

// Joint law of (x, y); marginal of x is (1/4, 1/4, 1/2).
inline const std::vector<Atom>& atoms()
{
    static const std::vector<Atom> a{
        {0.0, 1.0, 0.25}, {1.0, -1.0, 0.125}, {1.0, 2.0, 0.125}, {2.0, 0.5, 0.3}, {2.0, 3.0, 0.2},
    };
    return a;
}

inline twinforge::LabeledSample sample(double x, double y, int context = 0,
                                       twinforge::DataSource src = twinforge::DataSource::Real)
{
    twinforge::LabeledSample s;
    s.input = Eigen::VectorXd::Constant(1, x);
    s.label = y;
    s.context = context;
    s.source = src;
    return s;
}

/// Synthetic inputs whose empirical law equals the marginal of x.
inline twinforge::LabeledDataset synth()
{
    twinforge::LabeledDataset d;
    for (double x : {0.0, 1.0, 2.0, 2.0})
        d.samples.push_back(sample(x, 0.0, 0, twinforge::DataSource::Synth));
    return d;
}

/// A twin that is systematically wrong at x = 2.
inline double biased_twin(const Eigen::VectorXd& v)
{
    const double x = v[0];
    return x == 0.0 ? 1.0 : x == 1.0 ? 0.5 : -2.0;
}

inline twinforge::LossSpec loss()
{
    return twinforge::LossSpec::squared(2, twinforge::affine_features());
}

inline Eigen::VectorXd theta()
{
    return (Eigen::VectorXd(2) << 0.7, -0.2).finished();
}

inline double population_loss(const twinforge::LossSpec& l, const Eigen::VectorXd& th)
{
    double total = 0.0;
    for (const Atom& a : atoms())
        total += a.p * l.loss(th, Eigen::VectorXd::Constant(1, a.x), a.y);
    return total;
}

template <typename Rng>
twinforge::LabeledDataset draw(Rng& rng, int n)
{
    std::uniform_real_distribution<double> u(0.0, 1.0);
    twinforge::LabeledDataset d;
    for (int i = 0; i < n; ++i) {
        double v = u(rng);
        std::size_t k = 0;
        while (k + 1 < atoms().size() && v >= atoms()[k].p) {
            v -= atoms()[k].p;
            ++k;
        }
        d.samples.push_back(sample(atoms()[k].x, atoms()[k].y));
    }
    return d;
}

} // namespace toy
