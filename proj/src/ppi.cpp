#include "twinforge/ppi.hpp"

#include "twinforge/rng.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <memory>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace twinforge {

void LabeledDataset::validate(bool allow_empty) const
{
    if (samples.empty()) {
        if (!allow_empty)
            throw std::invalid_argument("dataset is empty");
        return;
    }
    const Eigen::Index d = dim();
    for (std::size_t i = 0; i < samples.size(); ++i)
        if (samples[i].input.size() != d)
            throw std::invalid_argument("dataset sample " + std::to_string(i) + " has input dimension " +
                                        std::to_string(samples[i].input.size()) + ", expected " + std::to_string(d));
}

LabeledDataset LabeledDataset::with_source(DataSource source) const
{
    LabeledDataset out;
    for (const auto& s : samples)
        if (s.source == source)
            out.samples.push_back(s);
    return out;
}

void TermSet::add(const Eigen::VectorXd& input, double label, double weight)
{
    inputs.push_back(input);
    labels.push_back(label);
    weights.push_back(weight);
}

void TermSet::append(const TermSet& other)
{
    inputs.insert(inputs.end(), other.inputs.begin(), other.inputs.end());
    labels.insert(labels.end(), other.labels.begin(), other.labels.end());
    weights.insert(weights.end(), other.weights.begin(), other.weights.end());
}

FeatureMap affine_features()
{
    return [](const Eigen::MatrixXd& x) {
        Eigen::MatrixXd out(x.rows(), x.cols() + 1);
        out << x, Eigen::VectorXd::Ones(x.rows());
        return out;
    };
}

FeatureMap rbf_features(const Eigen::MatrixXd& centers, double width)
{
    if (!(width > 0.0))
        throw std::invalid_argument("rbf_features: width must be positive");
    return [centers, width](const Eigen::MatrixXd& x) {
        if (x.cols() != centers.cols())
            throw std::invalid_argument("rbf_features: input dimension does not match the centers");
        Eigen::MatrixXd out(x.rows(), centers.rows() + 1);
        const double scale = -0.5 / (width * width);
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            for (Eigen::Index c = 0; c < centers.rows(); ++c)
                out(i, c) = std::exp(scale * (x.row(i) - centers.row(c)).squaredNorm());
            out(i, centers.rows()) = 1.0;
        }
        return out;
    };
}

FeatureMap with_bearing_harmonics(FeatureMap base, const Eigen::Vector2d& origin, int harmonics)
{
    if (harmonics < 0)
        throw std::invalid_argument("with_bearing_harmonics: harmonics must be nonnegative");
    return [base = std::move(base), origin, harmonics](const Eigen::MatrixXd& x) {
        if (x.cols() != 2)
            throw std::invalid_argument("with_bearing_harmonics: inputs must be 2D");
        const Eigen::MatrixXd b = base(x);
        Eigen::MatrixXd out(x.rows(), b.cols() + 2 * harmonics);
        out.leftCols(b.cols()) = b;
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            const double a = std::atan2(x(i, 1) - origin.y(), x(i, 0) - origin.x());
            for (int k = 1; k <= harmonics; ++k) {
                out(i, b.cols() + 2 * k - 2) = std::cos(k * a);
                out(i, b.cols() + 2 * k - 1) = std::sin(k * a);
            }
        }
        return out;
    };
}

FeatureMap whitened_features(FeatureMap base, const Eigen::MatrixXd& reference, double relative_eps)
{
    if (reference.rows() == 0 || !(relative_eps > 0.0))
        throw std::invalid_argument("whitened_features: need reference inputs and a positive epsilon");
    const Eigen::MatrixXd phi = base(reference);
    const Eigen::MatrixXd second = phi.transpose() * phi / static_cast<double>(phi.rows());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(second);
    const Eigen::VectorXd lambda = eig.eigenvalues().array() + relative_eps * eig.eigenvalues().maxCoeff();
    const Eigen::MatrixXd w =
        eig.eigenvectors() * lambda.array().rsqrt().matrix().asDiagonal() * eig.eigenvectors().transpose();
    return [base = std::move(base), w](const Eigen::MatrixXd& x) { return Eigen::MatrixXd(base(x) * w); };
}

LossSpec::LossSpec(Kind kind, std::string name, int outputs, int features, FeatureMap map)
    : kind_(kind), name_(std::move(name)), outputs_(outputs), features_(features), map_(std::move(map))
{
    if (features_ < 1 || !map_)
        throw std::invalid_argument("loss spec: a feature map with at least one feature is required");
}

LossSpec LossSpec::cross_entropy(int classes, int features, FeatureMap map)
{
    if (classes < 2)
        throw std::invalid_argument("cross_entropy: at least two classes are required");
    return LossSpec(Kind::CrossEntropy, "cross_entropy", classes, features, std::move(map));
}

LossSpec LossSpec::angular(int features, FeatureMap map)
{
    return LossSpec(Kind::Angular, "angular", 2, features, std::move(map));
}

LossSpec LossSpec::squared(int features, FeatureMap map)
{
    return LossSpec(Kind::Squared, "squared", 1, features, std::move(map));
}

Eigen::MatrixXd LossSpec::features_of(const Eigen::MatrixXd& inputs) const
{
    Eigen::MatrixXd phi = map_(inputs);
    if (phi.cols() != features_ || phi.rows() != inputs.rows())
        throw std::invalid_argument("loss spec: feature map returned " + std::to_string(phi.cols()) +
                                    " features, expected " + std::to_string(features_));
    return phi;
}

LossSpec::Prepared LossSpec::prepare(const TermSet& terms) const
{
    Prepared p;
    const auto n = static_cast<Eigen::Index>(terms.size());
    p.labels = Eigen::Map<const Eigen::VectorXd>(terms.labels.data(), n);
    p.weights = Eigen::Map<const Eigen::VectorXd>(terms.weights.data(), n);
    if (n == 0) {
        p.features.resize(0, features_);
        return p;
    }
    Eigen::MatrixXd x(n, terms.inputs.front().size());
    for (Eigen::Index i = 0; i < n; ++i) {
        if (terms.inputs[i].size() != x.cols())
            throw std::invalid_argument("loss spec: inputs of differing dimension");
        x.row(i) = terms.inputs[i].transpose();
    }
    if (kind_ == Kind::CrossEntropy)
        for (Eigen::Index i = 0; i < n; ++i) {
            const double y = p.labels[i];
            if (y != std::floor(y) || y < 0 || y >= outputs_)
                throw std::invalid_argument("cross_entropy: label " + std::to_string(y) + " is not a class index");
        }
    p.features = features_of(x);
    return p;
}

LossValue LossSpec::evaluate(const Eigen::VectorXd& theta, const Prepared& prepared) const
{
    if (theta.size() != parameter_count())
        throw std::invalid_argument("loss spec: expected " + std::to_string(parameter_count()) + " parameters, got " +
                                    std::to_string(theta.size()));
    const Eigen::Map<const Eigen::MatrixXd> w(theta.data(), outputs_, features_);
    const Eigen::MatrixXd& phi = prepared.features;
    const Eigen::Index n = phi.rows();
    const Eigen::MatrixXd out = phi * w.transpose(); // n x outputs
    Eigen::MatrixXd residual(n, outputs_);           // d loss / d output, per sample
    Eigen::VectorXd losses(n);

    switch (kind_) {
    case Kind::CrossEntropy: {
        const Eigen::VectorXd top = out.rowwise().maxCoeff();
        residual = (out.colwise() - top).array().exp().matrix();
        const Eigen::VectorXd z = residual.rowwise().sum();
        residual.array().colwise() /= z.array();
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto label = static_cast<Eigen::Index>(prepared.labels[i]);
            losses[i] = top[i] + std::log(z[i]) - out(i, label);
            residual(i, label) -= 1.0;
        }
        break;
    }
    case Kind::Angular: {
        residual.col(0) = out.col(0).array() - prepared.labels.array().cos();
        residual.col(1) = out.col(1).array() - prepared.labels.array().sin();
        losses = residual.rowwise().squaredNorm();
        residual *= 2.0;
        break;
    }
    case Kind::Squared: {
        residual.col(0) = out.col(0) - prepared.labels;
        losses = residual.col(0).array().square();
        residual *= 2.0;
        break;
    }
    }
    const double value = prepared.weights.dot(losses);
    const Eigen::MatrixXd grad = residual.transpose() * prepared.weights.asDiagonal() * phi;
    return {value, Eigen::Map<const Eigen::VectorXd>(grad.data(), grad.size())};
}

LossValue LossSpec::evaluate(const Eigen::VectorXd& theta, const TermSet& terms) const
{
    return evaluate(theta, prepare(terms));
}

double LossSpec::loss(const Eigen::VectorXd& theta, const Eigen::VectorXd& input, double label) const
{
    TermSet t;
    t.add(input, label, 1.0);
    return evaluate(theta, t).value;
}

Eigen::VectorXd LossSpec::predict(const Eigen::VectorXd& theta, const Eigen::MatrixXd& inputs) const
{
    if (theta.size() != parameter_count())
        throw std::invalid_argument("loss spec: parameter count mismatch in predict");
    const Eigen::Map<const Eigen::MatrixXd> w(theta.data(), outputs_, features_);
    const Eigen::MatrixXd out = features_of(inputs) * w.transpose();
    Eigen::VectorXd pred(inputs.rows());
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        switch (kind_) {
        case Kind::CrossEntropy: {
            Eigen::Index best = 0;
            out.row(i).maxCoeff(&best);
            pred[i] = static_cast<double>(best);
            break;
        }
        case Kind::Angular:
            pred[i] = std::atan2(out(i, 1), out(i, 0));
            break;
        case Kind::Squared:
            pred[i] = out(i, 0);
            break;
        }
    }
    return pred;
}

double LossSpec::predict(const Eigen::VectorXd& theta, const Eigen::VectorXd& input) const
{
    return predict(theta, Eigen::MatrixXd(input.transpose()))[0];
}

FoldPlan FoldPlan::make(std::size_t n, int folds, std::uint64_t seed)
{
    if (folds < 2)
        throw std::invalid_argument("fold plan: at least two folds are required");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = substream(seed, "folds");
    std::shuffle(order.begin(), order.end(), rng);
    FoldPlan plan;
    plan.folds = folds;
    plan.assignment.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i)
        plan.assignment[order[i]] = static_cast<int>(i % static_cast<std::size_t>(folds));
    return plan;
}

std::vector<std::size_t> FoldPlan::sizes() const
{
    std::vector<std::size_t> out(static_cast<std::size_t>(std::max(folds, 0)), 0);
    for (int a : assignment)
        if (a >= 0 && a < folds)
            ++out[static_cast<std::size_t>(a)];
    return out;
}

void FoldPlan::validate(std::size_t n) const
{
    if (folds < 2)
        throw std::invalid_argument("fold plan: at least two folds are required");
    if (assignment.size() != n)
        throw std::invalid_argument("fold plan covers " + std::to_string(assignment.size()) + " samples, data has " +
                                    std::to_string(n));
    for (int a : assignment)
        if (a < 0 || a >= folds)
            throw std::invalid_argument("fold plan: assignment out of range");
    const auto s = sizes();
    for (int k = 0; k < folds; ++k)
        if (s[static_cast<std::size_t>(k)] == 0)
            throw std::invalid_argument("fold plan: fold " + std::to_string(k) + " is empty");
}

namespace {

void require_nonempty(const LabeledDataset& data, const char* what)
{
    if (data.empty())
        throw std::invalid_argument(std::string(what) + " is empty");
    data.validate();
}

} // namespace

TermSet empirical_terms(const LabeledDataset& data)
{
    require_nonempty(data, "dataset");
    TermSet t;
    const double w = 1.0 / static_cast<double>(data.size());
    for (const auto& s : data.samples)
        t.add(s.input, s.label, w);
    return t;
}

TermSet pseudo_terms(const LabeledDataset& data, const PseudoLabeler& f)
{
    require_nonempty(data, "dataset");
    TermSet t;
    const double w = 1.0 / static_cast<double>(data.size());
    for (const auto& s : data.samples)
        t.add(s.input, f(s.input), w);
    return t;
}

namespace {

/// weight * mean over `data` of loss(y) - loss(f(x)).
void add_rectifier(TermSet& t, const std::vector<const LabeledSample*>& data, const PseudoLabeler& f, double weight)
{
    const double w = weight / static_cast<double>(data.size());
    for (const LabeledSample* s : data) {
        t.add(s->input, s->label, w);
        t.add(s->input, f(s->input), -w);
    }
}

std::vector<const LabeledSample*> pointers(const LabeledDataset& data)
{
    std::vector<const LabeledSample*> out;
    for (const auto& s : data.samples)
        out.push_back(&s);
    return out;
}

} // namespace

TermSet ppi_terms(const LabeledDataset& synth, const LabeledDataset& real, const PseudoLabeler& f)
{
    require_nonempty(synth, "synthetic dataset");
    require_nonempty(real, "real dataset");
    TermSet t = pseudo_terms(synth, f);
    add_rectifier(t, pointers(real), f, 1.0);
    return t;
}

std::vector<PseudoLabeler> cross_fit(const LabeledDataset& real, const FoldPlan& folds, const Calibrator& calibrate)
{
    folds.validate(real.size());
    std::vector<PseudoLabeler> out;
    for (int k = 0; k < folds.folds; ++k) {
        LabeledDataset rest;
        for (std::size_t i = 0; i < real.size(); ++i)
            if (folds.assignment[i] != k)
                rest.samples.push_back(real.samples[i]);
        out.push_back(calibrate(rest));
    }
    return out;
}

TermSet cross_ppi_terms(const LabeledDataset& synth, const LabeledDataset& real, const FoldPlan& folds,
                        const std::vector<PseudoLabeler>& fold_predictors)
{
    require_nonempty(synth, "synthetic dataset");
    require_nonempty(real, "real dataset");
    folds.validate(real.size());
    if (fold_predictors.size() != static_cast<std::size_t>(folds.folds))
        throw std::invalid_argument("cross_ppi: one predictor per fold is required");
    TermSet t;
    const double n_real = static_cast<double>(real.size());
    for (int k = 0; k < folds.folds; ++k) {
        const PseudoLabeler& fk = fold_predictors[static_cast<std::size_t>(k)];
        TermSet s = pseudo_terms(synth, fk);
        for (double& w : s.weights)
            w /= folds.folds;
        t.append(s);
        std::vector<const LabeledSample*> fold;
        for (std::size_t i = 0; i < real.size(); ++i)
            if (folds.assignment[i] == k)
                fold.push_back(&real.samples[i]);
        add_rectifier(t, fold, fk, static_cast<double>(fold.size()) / n_real);
    }
    return t;
}

TermSet cppi_terms(const LabeledDataset& synth, const LabeledDataset& real, const PseudoLabeler& f, int n_contexts)
{
    require_nonempty(real, "real dataset");
    synth.validate(true);
    if (n_contexts < 1)
        throw std::invalid_argument("cppi: at least one context is required");
    std::vector<std::vector<const LabeledSample*>> real_by(static_cast<std::size_t>(n_contexts)),
        synth_by(static_cast<std::size_t>(n_contexts));
    auto bucket = [&](const LabeledDataset& data, auto& by, const char* what) {
        for (const auto& s : data.samples) {
            if (!s.context || *s.context < 0 || *s.context >= n_contexts)
                throw std::invalid_argument(std::string("cppi: ") + what + " sample without a context in [0, " +
                                            std::to_string(n_contexts) + ")");
            by[static_cast<std::size_t>(*s.context)].push_back(&s);
        }
    };
    bucket(real, real_by, "real");
    bucket(synth, synth_by, "synthetic");

    TermSet t;
    const double n_real = static_cast<double>(real.size());
    for (int c = 0; c < n_contexts; ++c) {
        const auto& r = real_by[static_cast<std::size_t>(c)];
        const auto& s = synth_by[static_cast<std::size_t>(c)];
        if (r.empty()) {
            if (!s.empty())
                throw std::invalid_argument("cppi: context " + std::to_string(c) +
                                            " has synthetic samples but no real samples");
            continue;
        }
        const double wc = static_cast<double>(r.size()) / n_real;
        if (s.empty()) {
            for (const LabeledSample* x : r)
                t.add(x->input, x->label, wc / static_cast<double>(r.size()));
            continue;
        }
        for (const LabeledSample* x : s)
            t.add(x->input, f(x->input), wc / static_cast<double>(s.size()));
        add_rectifier(t, r, f, wc);
    }
    return t;
}

LossValue empirical_loss(const Eigen::VectorXd& theta, const LabeledDataset& data, const LossSpec& loss)
{
    return loss.evaluate(theta, empirical_terms(data));
}

LossValue empirical_loss(const Eigen::VectorXd& theta, const LabeledDataset& data, const PseudoLabeler& f,
                         const LossSpec& loss)
{
    return loss.evaluate(theta, pseudo_terms(data, f));
}

LossValue ppi_loss(const Eigen::VectorXd& theta, const LabeledDataset& synth, const LabeledDataset& real,
                   const PseudoLabeler& f, const LossSpec& loss)
{
    return loss.evaluate(theta, ppi_terms(synth, real, f));
}

LossValue cross_ppi_loss(const Eigen::VectorXd& theta, const LabeledDataset& synth, const LabeledDataset& real,
                         const FoldPlan& folds, const Calibrator& calibrate, const LossSpec& loss)
{
    return loss.evaluate(theta, cross_ppi_terms(synth, real, folds, cross_fit(real, folds, calibrate)));
}

LossValue cppi_loss(const Eigen::VectorXd& theta, const LabeledDataset& synth, const LabeledDataset& real,
                    const PseudoLabeler& f, const LossSpec& loss, int n_contexts)
{
    return loss.evaluate(theta, cppi_terms(synth, real, f, n_contexts));
}

LossBuilder make_objective(const LossSpec& loss, const TermSet& terms, double ridge)
{
    if (!(ridge >= 0.0))
        throw std::invalid_argument("make_objective: ridge must be nonnegative");
    auto prepared = std::make_shared<const LossSpec::Prepared>(loss.prepare(terms));
    return [loss, prepared, ridge](const Eigen::VectorXd& theta) {
        LossValue v = loss.evaluate(theta, *prepared);
        if (ridge > 0.0) {
            v.value += ridge * theta.squaredNorm();
            v.gradient += 2.0 * ridge * theta;
        }
        return v;
    };
}

Eigen::VectorXd fit(const LossBuilder& objective, const Eigen::VectorXd& theta0, const FitOptions& opts)
{
    if (!(opts.step > 0.0) || opts.max_iters < 0 || !(opts.tol >= 0.0))
        throw std::invalid_argument("fit: invalid options");
    Eigen::VectorXd theta = theta0;
    for (int it = 0; it < opts.max_iters; ++it) {
        const LossValue v = objective(theta);
        if (!std::isfinite(v.value) || !v.gradient.allFinite())
            throw std::runtime_error("fit: non-finite loss or gradient at iteration " + std::to_string(it));
        if (v.gradient.size() != theta.size())
            throw std::invalid_argument("fit: gradient size does not match the parameters");
        if (v.gradient.norm() < opts.tol)
            break;
        theta -= opts.step * v.gradient;
    }
    return theta;
}

namespace {

std::vector<std::string> split_commas(const std::string& line)
{
    std::vector<std::string> out;
    std::string field;
    std::istringstream is(line);
    while (std::getline(is, field, ','))
        out.push_back(field);
    if (!line.empty() && line.back() == ',')
        out.emplace_back();
    return out;
}

double parse_number(const std::string& s, int line_no)
{
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != s.size())
        throw std::invalid_argument("dataset csv line " + std::to_string(line_no) + ": bad number '" + s + "'");
    return v;
}

} // namespace

LabeledDataset read_dataset_csv(std::istream& in)
{
    LabeledDataset data;
    std::string line;
    int line_no = 0;
    std::size_t columns = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty())
            continue;
        const auto fields = split_commas(line);
        if (columns == 0) {
            if (fields.size() < 4 || fields[0] != "source" || fields[1] != "context" || fields[2] != "label")
                throw std::invalid_argument("dataset csv: expected header source,context,label,x_1,...");
            columns = fields.size();
            continue;
        }
        if (fields.size() != columns)
            throw std::invalid_argument("dataset csv line " + std::to_string(line_no) + ": expected " +
                                        std::to_string(columns) + " fields");
        LabeledSample s;
        if (fields[0] == "real")
            s.source = DataSource::Real;
        else if (fields[0] == "synth")
            s.source = DataSource::Synth;
        else
            throw std::invalid_argument("dataset csv line " + std::to_string(line_no) + ": unknown source '" +
                                        fields[0] + "'");
        if (!fields[1].empty())
            s.context = static_cast<int>(parse_number(fields[1], line_no));
        s.label = parse_number(fields[2], line_no);
        s.input.resize(static_cast<Eigen::Index>(columns - 3));
        for (std::size_t j = 3; j < columns; ++j)
            s.input[static_cast<Eigen::Index>(j - 3)] = parse_number(fields[j], line_no);
        data.samples.push_back(std::move(s));
    }
    data.validate(true);
    return data;
}

void write_dataset_csv(std::ostream& out, const LabeledDataset& data)
{
    data.validate(true);
    out << "source,context,label";
    for (Eigen::Index j = 0; j < data.dim(); ++j)
        out << ",x_" << j + 1;
    out << "\n" << std::setprecision(17);
    for (const auto& s : data.samples) {
        out << (s.source == DataSource::Real ? "real" : "synth") << ",";
        if (s.context)
            out << *s.context;
        out << "," << s.label;
        for (Eigen::Index j = 0; j < s.input.size(); ++j)
            out << "," << s.input[j];
        out << "\n";
    }
}

} // namespace twinforge
