#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace twinforge {

enum class DataSource { Real, Synth };

struct LabeledSample {
    Eigen::VectorXd input;
    /// Class index for classification, radians for angle targets.
    double label = 0.0;
    std::optional<int> context;
    DataSource source = DataSource::Real;
};

struct LabeledDataset {
    std::vector<LabeledSample> samples;

    bool empty() const { return samples.empty(); }
    std::size_t size() const { return samples.size(); }
    Eigen::Index dim() const { return samples.empty() ? 0 : samples.front().input.size(); }
    /// Throws on mixed input dimensions, and on emptiness unless allowed.
    void validate(bool allow_empty = false) const;
    LabeledDataset with_source(DataSource source) const;
};

/// The twin-derived predictor used to label inputs.
using PseudoLabeler = std::function<double(const Eigen::VectorXd&)>;
/// Builds a predictor from a subset of the real data.
using Calibrator = std::function<PseudoLabeler(const LabeledDataset&)>;

struct LossValue {
    double value = 0.0;
    Eigen::VectorXd gradient;
};

/// Weighted list of (input, label) pairs. Every estimator below is a
/// weighted sum of per-sample losses over such a list.
struct TermSet {
    std::vector<Eigen::VectorXd> inputs;
    std::vector<double> labels;
    std::vector<double> weights;

    void add(const Eigen::VectorXd& input, double label, double weight);
    void append(const TermSet& other);
    std::size_t size() const { return inputs.size(); }
};

/// Maps stacked inputs (one per row) to stacked feature rows.
using FeatureMap = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>;

/// Identity features with a trailing constant column.
FeatureMap affine_features();
/// Gaussian bumps exp(-|x - c|^2 / (2 width^2)) around each center (rows of
/// `centers`) plus a constant column.
FeatureMap rbf_features(const Eigen::MatrixXd& centers, double width);
/// Appends cos(k a), sin(k a) for k = 1..harmonics, where a is the bearing
/// of a 2D input seen from `origin`.
FeatureMap with_bearing_harmonics(FeatureMap base, const Eigen::Vector2d& origin, int harmonics);
/// base(x) W with W = (C + eps I)^(-1/2), C the second-moment matrix of the
/// base features over `reference` and eps = relative_eps * max eig(C).
FeatureMap whitened_features(FeatureMap base, const Eigen::MatrixXd& reference, double relative_eps = 1e-6);

/// Per-sample loss of a linear model on features. The parameter vector is
/// the column-major flattening of an (outputs x features) matrix.
class LossSpec {
public:
    /// Softmax cross-entropy over `classes` labels 0..classes-1.
    static LossSpec cross_entropy(int classes, int features, FeatureMap map);
    /// Angle targets: the model outputs a 2-vector u and the loss is
    /// |u - (cos y, sin y)|^2, the squared chordal error once u is on the
    /// unit circle. The predicted angle is atan2(u).
    static LossSpec angular(int features, FeatureMap map);
    /// Scalar (u - y)^2.
    static LossSpec squared(int features, FeatureMap map);

    const std::string& name() const { return name_; }
    int outputs() const { return outputs_; }
    int parameter_count() const { return outputs_ * features_; }

    /// Features of the stacked inputs of a term list, computed once.
    struct Prepared {
        Eigen::MatrixXd features;
        Eigen::VectorXd labels;
        Eigen::VectorXd weights;
    };
    Prepared prepare(const TermSet& terms) const;

    /// Weighted sum of per-sample losses and its gradient.
    LossValue evaluate(const Eigen::VectorXd& theta, const Prepared& prepared) const;
    LossValue evaluate(const Eigen::VectorXd& theta, const TermSet& terms) const;
    double loss(const Eigen::VectorXd& theta, const Eigen::VectorXd& input, double label) const;

    /// Predicted label (class index, angle or value) per input.
    double predict(const Eigen::VectorXd& theta, const Eigen::VectorXd& input) const;
    Eigen::VectorXd predict(const Eigen::VectorXd& theta, const Eigen::MatrixXd& inputs) const;

private:
    enum class Kind { CrossEntropy, Angular, Squared };
    LossSpec(Kind kind, std::string name, int outputs, int features, FeatureMap map);
    Eigen::MatrixXd features_of(const Eigen::MatrixXd& inputs) const;

    Kind kind_;
    std::string name_;
    int outputs_;
    int features_;
    FeatureMap map_;
};

/// Assignment of real samples to folds; fold sizes differ by at most one.
struct FoldPlan {
    int folds = 2;
    std::vector<int> assignment;

    /// Shuffled round-robin assignment.
    static FoldPlan make(std::size_t n, int folds, std::uint64_t seed);
    std::vector<std::size_t> sizes() const;
    void validate(std::size_t n) const;
};

// Term lists.
TermSet empirical_terms(const LabeledDataset& data);
TermSet pseudo_terms(const LabeledDataset& data, const PseudoLabeler& f);
TermSet ppi_terms(const LabeledDataset& synth, const LabeledDataset& real, const PseudoLabeler& f);
TermSet cross_ppi_terms(const LabeledDataset& synth, const LabeledDataset& real, const FoldPlan& folds,
                        const std::vector<PseudoLabeler>& fold_predictors);
TermSet cppi_terms(const LabeledDataset& synth, const LabeledDataset& real, const PseudoLabeler& f, int n_contexts);

/// f_k = calibrate(real without fold k), for every fold.
std::vector<PseudoLabeler> cross_fit(const LabeledDataset& real, const FoldPlan& folds, const Calibrator& calibrate);

/// Mean loss with stored labels (ERM on real data).
LossValue empirical_loss(const Eigen::VectorXd& theta, const LabeledDataset& data, const LossSpec& loss);
/// Mean loss with labels replaced by f(input) (P-ERM on synthetic data).
LossValue empirical_loss(const Eigen::VectorXd& theta, const LabeledDataset& data, const PseudoLabeler& f,
                         const LossSpec& loss);
/// Synthetic pseudo-label mean plus the real-data rectifier
/// mean(loss(y) - loss(f(x))).
LossValue ppi_loss(const Eigen::VectorXd& theta, const LabeledDataset& synth, const LabeledDataset& real,
                   const PseudoLabeler& f, const LossSpec& loss);
/// Rectifier of each fold uses the predictor calibrated on the other folds;
/// the synthetic term averages all fold predictors.
LossValue cross_ppi_loss(const Eigen::VectorXd& theta, const LabeledDataset& synth, const LabeledDataset& real,
                         const FoldPlan& folds, const Calibrator& calibrate, const LossSpec& loss);
/// PPI per context, weighted by the real-data context frequencies.
LossValue cppi_loss(const Eigen::VectorXd& theta, const LabeledDataset& synth, const LabeledDataset& real,
                    const PseudoLabeler& f, const LossSpec& loss, int n_contexts);

using LossBuilder = std::function<LossValue(const Eigen::VectorXd&)>;

/// Objective over a fixed term list plus ridge * |theta|^2.
LossBuilder make_objective(const LossSpec& loss, const TermSet& terms, double ridge = 0.0);

struct FitOptions {
    double step = 0.1;
    int max_iters = 500;
    double tol = 1e-8;
};

/// Full-batch gradient descent; stops after max_iters or once the gradient
/// norm drops below tol.
Eigen::VectorXd fit(const LossBuilder& objective, const Eigen::VectorXd& theta0, const FitOptions& opts);

// CSV: source,context,label,x_1,...,x_d
LabeledDataset read_dataset_csv(std::istream& in);
void write_dataset_csv(std::ostream& out, const LabeledDataset& data);

} // namespace twinforge
