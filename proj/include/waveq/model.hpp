#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "waveq/errors.hpp"
#include "waveq/random.hpp"
#include "waveq/tensor.hpp"

namespace waveq {

enum class Activation { relu, identity };

/// Fully-connected layer computing act(x W^T + b), W shaped [out x in].
template <typename Scalar>
struct DenseLayer {
    Tensor<Scalar> weights;
    Tensor<Scalar> bias;
    Activation activation = Activation::relu;

    Index inputs() const { return weights.dim(1); }
    Index outputs() const { return weights.dim(0); }
};

template <typename Scalar>
class Model {
public:
    Model() = default;

    /// Takes ownership of layers after checking that dimensions chain and the
    /// last layer emits identity logits.
    explicit Model(std::vector<DenseLayer<Scalar>> layers) : layers_(std::move(layers)) { validate(); }

    const std::vector<DenseLayer<Scalar>>& layers() const { return layers_; }
    std::vector<DenseLayer<Scalar>>& layers() { return layers_; }
    const DenseLayer<Scalar>& layer(std::size_t i) const { return layers_.at(i); }
    DenseLayer<Scalar>& layer(std::size_t i) { return layers_.at(i); }
    std::size_t depth() const { return layers_.size(); }
    Index input_dim() const { return layers_.front().inputs(); }
    Index class_count() const { return layers_.back().outputs(); }

    Index parameter_count() const {
        Index n = 0;
        for (const auto& l : layers_) n += l.weights.size() + l.bias.size();
        return n;
    }

    bool all_finite() const {
        for (const auto& l : layers_)
            if (!l.weights.all_finite() || !l.bias.all_finite()) return false;
        return true;
    }

    void validate() const {
        if (layers_.empty()) throw DimensionError("model has no layers");
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            const auto& l = layers_[i];
            if (l.weights.rank() != 2 || l.bias.rank() != 1 || l.bias.dim(0) != l.outputs())
                throw DimensionError("layer " + std::to_string(i) + " has inconsistent weight " +
                                     shape_string(l.weights.shape()) + " / bias " + shape_string(l.bias.shape()));
            if (i > 0 && layers_[i - 1].outputs() != l.inputs())
                throw DimensionError("layer " + std::to_string(i) + " expects " + std::to_string(l.inputs()) +
                                     " inputs but layer " + std::to_string(i - 1) + " produces " +
                                     std::to_string(layers_[i - 1].outputs()));
        }
        if (layers_.back().activation != Activation::identity)
            throw DimensionError("final layer must use identity activation (logits)");
    }

    friend bool operator==(const Model& a, const Model& b) {
        if (a.layers_.size() != b.layers_.size()) return false;
        for (std::size_t i = 0; i < a.layers_.size(); ++i) {
            const auto& x = a.layers_[i];
            const auto& y = b.layers_[i];
            if (!(x.weights == y.weights) || !(x.bias == y.bias) || x.activation != y.activation) return false;
        }
        return true;
    }

private:
    std::vector<DenseLayer<Scalar>> layers_;
};

/// Per-layer gradients mirroring a Model's parameter shapes.
template <typename Scalar>
struct GradientSet {
    std::vector<Tensor<Scalar>> weights;
    std::vector<Tensor<Scalar>> bias;

    static GradientSet zeros_like(const Model<Scalar>& model) {
        GradientSet g;
        for (const auto& l : model.layers()) {
            g.weights.emplace_back(l.weights.shape());
            g.bias.emplace_back(l.bias.shape());
        }
        return g;
    }

    bool all_finite() const {
        for (std::size_t i = 0; i < weights.size(); ++i)
            if (!weights[i].all_finite() || !bias[i].all_finite()) return false;
        return true;
    }
};

/// Activations recorded by forward(): the input to every layer plus its
/// pre-activation, enough to run backward() without recomputation.
template <typename Scalar>
struct ForwardCache {
    std::vector<RowMatrix<Scalar>> inputs;
    std::vector<RowMatrix<Scalar>> preactivations;
};

template <typename Scalar>
struct ForwardResult {
    Tensor<Scalar> logits;
    ForwardCache<Scalar> cache;
};

template <typename Scalar>
ForwardResult<Scalar> forward(const Model<Scalar>& model, const Tensor<Scalar>& batch) {
    if (batch.rank() != 2 || batch.dim(1) != model.input_dim())
        throw DimensionError("layer 0 expects batch of width " + std::to_string(model.input_dim()) + ", got shape " +
                             shape_string(batch.shape()));
    ForwardResult<Scalar> out;
    RowMatrix<Scalar> x = batch.matrix();
    for (const auto& layer : model.layers()) {
        RowMatrix<Scalar> z = x * layer.weights.matrix().transpose();
        z.rowwise() += layer.bias.vector().transpose();
        out.cache.inputs.push_back(std::move(x));
        x = layer.activation == Activation::relu ? RowMatrix<Scalar>(z.cwiseMax(Scalar(0))) : z;
        out.cache.preactivations.push_back(std::move(z));
    }
    out.logits = Tensor<Scalar>::from_matrix(x);
    return out;
}

/// Mean softmax cross-entropy of logits against class indices, with the
/// gradient with respect to the logits.
template <typename Scalar>
Scalar softmax_cross_entropy(const RowMatrix<Scalar>& logits, std::span<const int> targets, RowMatrix<Scalar>* dlogits) {
    const Index n = logits.rows();
    const Index classes = logits.cols();
    if (Index(targets.size()) != n)
        throw InputError("got " + std::to_string(targets.size()) + " targets for a batch of " + std::to_string(n));
    Scalar total = 0;
    if (dlogits) dlogits->resize(n, classes);
    for (Index i = 0; i < n; ++i) {
        const int t = targets[std::size_t(i)];
        if (t < 0 || t >= classes)
            throw InputError("target " + std::to_string(t) + " at row " + std::to_string(i) + " outside [0, " +
                             std::to_string(classes) + ")");
        const Scalar m = logits.row(i).maxCoeff();
        Vector<Scalar> e = (logits.row(i).array() - m).exp().transpose();
        const Scalar s = e.sum();
        total += std::log(s) - (logits(i, t) - m);
        if (dlogits) {
            dlogits->row(i) = (e / (s * Scalar(n))).transpose();
            (*dlogits)(i, t) -= Scalar(1) / Scalar(n);
        }
    }
    return total / Scalar(n);
}

template <typename Scalar>
struct BackwardResult {
    Scalar loss;
    GradientSet<Scalar> grads;
};

template <typename Scalar>
BackwardResult<Scalar> backward(const Model<Scalar>& model, const ForwardResult<Scalar>& fwd, std::span<const int> targets) {
    if (fwd.cache.inputs.size() != model.depth())
        throw InputError("forward cache does not belong to this model");
    BackwardResult<Scalar> out;
    RowMatrix<Scalar> delta;
    out.loss = softmax_cross_entropy<Scalar>(fwd.logits.matrix(), targets, &delta);
    out.grads = GradientSet<Scalar>::zeros_like(model);
    for (std::size_t li = model.depth(); li-- > 0;) {
        const auto& layer = model.layer(li);
        if (layer.activation == Activation::relu)
            delta = (fwd.cache.preactivations[li].array() > Scalar(0)).select(delta, Scalar(0));
        out.grads.weights[li].matrix() = delta.transpose() * fwd.cache.inputs[li];
        out.grads.bias[li].matrix() = delta.colwise().sum();
        if (li > 0) delta = delta * layer.weights.matrix();
    }
    return out;
}

/// Convenience: forward + backward on one batch.
template <typename Scalar>
BackwardResult<Scalar> loss_and_gradients(const Model<Scalar>& model, const Tensor<Scalar>& batch, std::span<const int> targets) {
    return backward(model, forward(model, batch), targets);
}

template <typename Scalar>
Scalar loss(const Model<Scalar>& model, const Tensor<Scalar>& batch, std::span<const int> targets) {
    return softmax_cross_entropy<Scalar>(forward(model, batch).logits.matrix(), targets, nullptr);
}

/// Concatenate all parameters, layer by layer, weights before bias.
template <typename Scalar>
Tensor<Scalar> flatten_parameters(const Model<Scalar>& model) {
    Vector<Scalar> flat(model.parameter_count());
    Index at = 0;
    for (const auto& l : model.layers()) {
        flat.segment(at, l.weights.size()) = l.weights.vector();
        at += l.weights.size();
        flat.segment(at, l.bias.size()) = l.bias.vector();
        at += l.bias.size();
    }
    return Tensor<Scalar>::from_vector(flat);
}

template <typename Scalar>
void assign_parameters(Model<Scalar>& model, const Tensor<Scalar>& flat) {
    if (flat.size() != model.parameter_count())
        throw DimensionError("flat parameter length " + std::to_string(flat.size()) + " != model parameter count " +
                             std::to_string(model.parameter_count()));
    Index at = 0;
    for (auto& l : model.layers()) {
        l.weights.vector() = flat.vector().segment(at, l.weights.size());
        at += l.weights.size();
        l.bias.vector() = flat.vector().segment(at, l.bias.size());
        at += l.bias.size();
    }
}

template <typename Scalar>
Tensor<Scalar> flatten_gradients(const GradientSet<Scalar>& g) {
    Index n = 0;
    for (std::size_t i = 0; i < g.weights.size(); ++i) n += g.weights[i].size() + g.bias[i].size();
    Vector<Scalar> flat(n);
    Index at = 0;
    for (std::size_t i = 0; i < g.weights.size(); ++i) {
        flat.segment(at, g.weights[i].size()) = g.weights[i].vector();
        at += g.weights[i].size();
        flat.segment(at, g.bias[i].size()) = g.bias[i].vector();
        at += g.bias[i].size();
    }
    return Tensor<Scalar>::from_vector(flat);
}

enum class StepRule { absolute, relative };

/// Central-difference gradient of loss_fn at params.
///
/// With StepRule::relative the probe for coordinate i is h * max(1, |p_i|).
template <typename Scalar>
Tensor<Scalar> finite_diff_grad(const std::function<Scalar(const Tensor<Scalar>&)>& loss_fn, const Tensor<Scalar>& params,
                                Scalar h, StepRule rule = StepRule::absolute) {
    if (!(h > Scalar(0))) throw DomainError("finite-difference step must be positive");
    Tensor<Scalar> grad(params.shape());
    Tensor<Scalar> probe = params;
    for (Index i = 0; i < params.size(); ++i) {
        const Scalar p = params[i];
        const Scalar step = rule == StepRule::relative ? h * std::max(Scalar(1), std::abs(p)) : h;
        probe[i] = p + step;
        const Scalar fp = loss_fn(probe);
        probe[i] = p - step;
        const Scalar fm = loss_fn(probe);
        probe[i] = p;
        if (!std::isfinite(double(fp)) || !std::isfinite(double(fm)))
            throw NumericError("non-finite loss while probing coordinate " + std::to_string(i));
        grad[i] = (fp - fm) / (Scalar(2) * step);
    }
    return grad;
}

/// He-uniform weights, zero biases; hidden layers use ReLU, the last identity.
template <typename Scalar>
Model<Scalar> init_mlp(const std::vector<Index>& widths, Rng& rng, Scalar gain = Scalar(1)) {
    if (widths.size() < 2) throw DimensionError("an MLP needs at least input and output widths");
    std::vector<DenseLayer<Scalar>> layers;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        const Index in = widths[i];
        const Index out = widths[i + 1];
        if (in <= 0 || out <= 0) throw DimensionError("layer widths must be positive");
        DenseLayer<Scalar> l;
        l.weights = Tensor<Scalar>({out, in});
        l.bias = Tensor<Scalar>({out});
        const double bound = double(gain) * std::sqrt(6.0 / double(in));
        for (Index k = 0; k < l.weights.size(); ++k) l.weights[k] = Scalar(uniform(rng, -bound, bound));
        l.activation = i + 2 == widths.size() ? Activation::identity : Activation::relu;
        layers.push_back(std::move(l));
    }
    return Model<Scalar>(std::move(layers));
}

/// Fraction of rows whose argmax logit equals the label (first max wins).
template <typename Scalar>
double accuracy(const Model<Scalar>& model, const Tensor<Scalar>& features, std::span<const int> labels) {
    if (labels.empty()) return 0.0;
    const auto logits = forward(model, features).logits;
    const auto m = logits.matrix();
    Index correct = 0;
    for (Index i = 0; i < m.rows(); ++i) {
        Index arg;
        m.row(i).maxCoeff(&arg);
        if (arg == labels[std::size_t(i)]) ++correct;
    }
    return double(correct) / double(m.rows());
}

using ModelD = Model<double>;
using GradientSetD = GradientSet<double>;

}  // namespace waveq
