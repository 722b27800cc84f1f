#pragma once

#include "twinforge/scene.hpp"

#include <Eigen/Dense>

#include <optional>
#include <vector>

namespace twinforge {

/// Complex frequency response sampled on uniformly spaced subcarriers.
struct ChannelResponse {
    Eigen::VectorXd frequencies;
    Eigen::VectorXcd values;
    double bandwidth = 0.0;

    Eigen::Index size() const { return values.size(); }
};

/// n subcarriers spaced bandwidth / n apart and centered on the carrier.
Eigen::VectorXd subcarrier_frequencies(double carrier_hz, int n_subcarriers, double bandwidth_hz);

/// Unit-gain per-path contributions: column p holds
/// exp(j phase_p) * exp(-j 2 pi f_k delay_p) over the subcarriers f_k.
Eigen::MatrixXcd path_basis(const std::vector<PathSolution>& paths, const Eigen::VectorXd& frequencies,
                            const Eigen::VectorXd* phase_offsets = nullptr);

Eigen::VectorXd path_gains(const std::vector<PathSolution>& paths, const MaterialParams& materials);

/// d gain_p / d r_m, one row per path and one column per material.
Eigen::MatrixXd path_gain_jacobian(const std::vector<PathSolution>& paths, const MaterialParams& materials);

ChannelResponse synthesize_cfr(const std::vector<PathSolution>& paths, const MaterialParams& materials,
                               double carrier_hz, int n_subcarriers, double bandwidth_hz,
                               const std::optional<Eigen::VectorXd>& phase_offsets = std::nullopt);

/// Same synthesis on an existing frequency grid.
ChannelResponse synthesize_cfr_at(const std::vector<PathSolution>& paths, const MaterialParams& materials,
                                  const Eigen::VectorXd& frequencies, double bandwidth_hz,
                                  const std::optional<Eigen::VectorXd>& phase_offsets = std::nullopt);

/// Mean subcarrier power (1/K) sum_k |H(f_k)|^2.
double received_power(const ChannelResponse& cfr);

/// Squared-error loss sum_k |H_meas - H_pred(r)|^2 and its analytic gradient
/// with respect to every material coefficient. Path geometry is held fixed.
struct LossGradient {
    double loss = 0.0;
    Eigen::VectorXd gradient;
};

LossGradient material_loss_gradient(const std::vector<PathSolution>& paths, const MaterialParams& materials,
                                    const ChannelResponse& measurement,
                                    const std::optional<Eigen::VectorXd>& phase_offsets = std::nullopt);

Eigen::VectorXd material_gradient(const Scene& scene, const Point& rx, const MaterialParams& materials,
                                  const ChannelResponse& measurement,
                                  const std::optional<Eigen::VectorXd>& phase_offsets = std::nullopt,
                                  int max_order = 2);

} // namespace twinforge
