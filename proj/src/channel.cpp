#include "twinforge/channel.hpp"

#include <numbers>
#include <stdexcept>
#include <string>

namespace twinforge {

Eigen::VectorXd subcarrier_frequencies(double carrier_hz, int n_subcarriers, double bandwidth_hz)
{
    if (n_subcarriers < 1)
        throw std::invalid_argument("subcarrier count must be at least 1");
    const double spacing = bandwidth_hz / n_subcarriers;
    const double center = 0.5 * (n_subcarriers - 1);
    Eigen::VectorXd f(n_subcarriers);
    for (int k = 0; k < n_subcarriers; ++k)
        f[k] = carrier_hz + (k - center) * spacing;
    return f;
}

Eigen::MatrixXcd path_basis(const std::vector<PathSolution>& paths, const Eigen::VectorXd& frequencies,
                            const Eigen::VectorXd* phase_offsets)
{
    const Eigen::Index n_paths = static_cast<Eigen::Index>(paths.size());
    if (phase_offsets && phase_offsets->size() != n_paths)
        throw std::invalid_argument("phase offsets: expected " + std::to_string(n_paths) + " entries, got " +
                                    std::to_string(phase_offsets->size()));
    Eigen::MatrixXcd basis(frequencies.size(), n_paths);
    const double two_pi = 2.0 * std::numbers::pi;
    for (Eigen::Index p = 0; p < n_paths; ++p) {
        const double tau = paths[p].delay;
        const double offset = phase_offsets ? (*phase_offsets)[p] : 0.0;
        for (Eigen::Index k = 0; k < frequencies.size(); ++k)
            basis(k, p) = std::polar(1.0, offset - two_pi * frequencies[k] * tau);
    }
    return basis;
}

Eigen::VectorXd path_gains(const std::vector<PathSolution>& paths, const MaterialParams& materials)
{
    Eigen::VectorXd g(paths.size());
    for (std::size_t p = 0; p < paths.size(); ++p)
        g[p] = paths[p].gain(materials);
    return g;
}

Eigen::MatrixXd path_gain_jacobian(const std::vector<PathSolution>& paths, const MaterialParams& materials)
{
    Eigen::MatrixXd jac(paths.size(), materials.size());
    for (std::size_t p = 0; p < paths.size(); ++p)
        for (Eigen::Index m = 0; m < materials.size(); ++m)
            jac(p, m) = paths[p].gain_derivative(materials, static_cast<int>(m));
    return jac;
}

ChannelResponse synthesize_cfr_at(const std::vector<PathSolution>& paths, const MaterialParams& materials,
                                  const Eigen::VectorXd& frequencies, double bandwidth_hz,
                                  const std::optional<Eigen::VectorXd>& phase_offsets)
{
    ChannelResponse cfr;
    cfr.frequencies = frequencies;
    cfr.bandwidth = bandwidth_hz;
    if (paths.empty()) {
        cfr.values = Eigen::VectorXcd::Zero(frequencies.size());
        return cfr;
    }
    const Eigen::MatrixXcd basis = path_basis(paths, frequencies, phase_offsets ? &*phase_offsets : nullptr);
    cfr.values = basis * path_gains(paths, materials).cast<std::complex<double>>();
    return cfr;
}

ChannelResponse synthesize_cfr(const std::vector<PathSolution>& paths, const MaterialParams& materials,
                               double carrier_hz, int n_subcarriers, double bandwidth_hz,
                               const std::optional<Eigen::VectorXd>& phase_offsets)
{
    return synthesize_cfr_at(paths, materials, subcarrier_frequencies(carrier_hz, n_subcarriers, bandwidth_hz),
                             bandwidth_hz, phase_offsets);
}

double received_power(const ChannelResponse& cfr)
{
    if (cfr.values.size() == 0)
        throw std::invalid_argument("received_power: empty channel response");
    return cfr.values.squaredNorm() / static_cast<double>(cfr.values.size());
}

LossGradient material_loss_gradient(const std::vector<PathSolution>& paths, const MaterialParams& materials,
                                    const ChannelResponse& measurement,
                                    const std::optional<Eigen::VectorXd>& phase_offsets)
{
    LossGradient out;
    out.gradient = Eigen::VectorXd::Zero(materials.size());
    if (paths.empty()) {
        out.loss = measurement.values.squaredNorm();
        return out;
    }
    const Eigen::MatrixXcd basis =
        path_basis(paths, measurement.frequencies, phase_offsets ? &*phase_offsets : nullptr);
    const Eigen::VectorXd gains = path_gains(paths, materials);
    const Eigen::VectorXcd residual = measurement.values - basis * gains.cast<std::complex<double>>();
    out.loss = residual.squaredNorm();
    // dL/dg_p = -2 Re(b_p^H e)
    const Eigen::VectorXd dloss_dgain = -2.0 * (basis.adjoint() * residual).real();
    out.gradient = path_gain_jacobian(paths, materials).transpose() * dloss_dgain;
    return out;
}

Eigen::VectorXd material_gradient(const Scene& scene, const Point& rx, const MaterialParams& materials,
                                  const ChannelResponse& measurement,
                                  const std::optional<Eigen::VectorXd>& phase_offsets, int max_order)
{
    check_materials(materials, scene.material_count());
    return material_loss_gradient(trace_paths(scene, rx, max_order), materials, measurement, phase_offsets)
        .gradient;
}

} // namespace twinforge
