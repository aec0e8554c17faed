#include "adaptest/neuralnet.hpp"

#include "adaptest/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace adaptest::nn {

namespace {

double activate(Activation a, double x) {
    return a == Activation::sigmoid ? 1.0 / (1.0 + std::exp(-x)) : std::tanh(x);
}

// Derivative expressed through the activation value.
double activate_slope(Activation a, double y) { return a == Activation::sigmoid ? y * (1.0 - y) : 1.0 - y * y; }

// Activations of every layer; [0] is the input.
std::vector<std::vector<double>> propagate(const NetworkSpec& spec, const NetworkWeights& w,
                                           const std::vector<double>& input) {
    std::vector<std::vector<double>> acts;
    acts.push_back(input);
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        const Layer& layer = w.layers[l];
        const auto& x = acts.back();
        std::vector<double> y(layer.outputs);
        for (std::size_t o = 0; o < layer.outputs; ++o) {
            double z = layer.bias[o];
            const double* row = &layer.weights[o * layer.inputs];
            for (std::size_t i = 0; i < layer.inputs; ++i) z += row[i] * x[i];
            y[o] = l + 1 < w.layers.size() ? activate(spec.activation, z) : z;
        }
        acts.push_back(std::move(y));
    }
    return acts;
}

void add_example_gradient(const NetworkSpec& spec, const NetworkWeights& w, const std::vector<double>& input,
                          double target, double scale, double& loss, std::vector<Layer>& grad) {
    auto acts = propagate(spec, w, input);
    const double err = acts.back()[0] - target;
    loss += scale * err * err;
    std::vector<double> delta{2.0 * scale * err};
    for (std::size_t l = w.layers.size(); l-- > 0;) {
        const Layer& layer = w.layers[l];
        Layer& g = grad[l];
        const auto& x = acts[l];
        for (std::size_t o = 0; o < layer.outputs; ++o) {
            g.bias[o] += delta[o];
            double* row = &g.weights[o * layer.inputs];
            for (std::size_t i = 0; i < layer.inputs; ++i) row[i] += delta[o] * x[i];
        }
        if (l == 0) break;
        std::vector<double> prev(layer.inputs, 0.0);
        for (std::size_t o = 0; o < layer.outputs; ++o) {
            const double* row = &layer.weights[o * layer.inputs];
            for (std::size_t i = 0; i < layer.inputs; ++i) prev[i] += row[i] * delta[o];
        }
        for (std::size_t i = 0; i < layer.inputs; ++i) prev[i] *= activate_slope(spec.activation, x[i]);
        delta = std::move(prev);
    }
}

double mean_squared_error(const NetworkSpec& spec, const NetworkWeights& w, const std::vector<std::vector<double>>& inputs,
                          const std::vector<double>& targets, const std::vector<std::size_t>& rows) {
    if (rows.empty()) return 0.0;
    double sum = 0.0;
    for (auto r : rows) {
        double e = forward_encoded(spec, w, inputs[r]) - targets[r];
        sum += e * e;
    }
    return sum / static_cast<double>(rows.size());
}

}  // namespace

std::string to_string(Activation a) { return a == Activation::sigmoid ? "sigmoid" : "tanh"; }

std::string to_string(EncodingScheme s) {
    switch (s) {
        case EncodingScheme::zero_one: return "zero_one";
        case EncodingScheme::neg_one: return "neg_one";
        case EncodingScheme::points: return "points";
    }
    return "zero_one";
}

std::string to_string(MissingPolicy p) { return p == MissingPolicy::zero_fill ? "zero_fill" : "item_mean"; }

Activation activation_from_string(const std::string& s) {
    if (s == "sigmoid") return Activation::sigmoid;
    if (s == "tanh") return Activation::tanh;
    throw ValidationError("unknown activation '" + s + "'");
}

EncodingScheme encoding_scheme_from_string(const std::string& s) {
    if (s == "zero_one") return EncodingScheme::zero_one;
    if (s == "neg_one") return EncodingScheme::neg_one;
    if (s == "points") return EncodingScheme::points;
    throw ValidationError("unknown encoding scheme '" + s + "'");
}

MissingPolicy missing_policy_from_string(const std::string& s) {
    if (s == "zero_fill") return MissingPolicy::zero_fill;
    if (s == "item_mean") return MissingPolicy::item_mean;
    throw ValidationError("unknown missing policy '" + s + "'");
}

NetworkSpec NetworkSpec::with_defaults(std::size_t input_size) {
    return {input_size, {(input_size + 1) / 2}, Activation::sigmoid};
}

void validate(const NetworkSpec& spec) {
    if (spec.input_size == 0) throw ValidationError("network needs at least one input");
    for (auto w : spec.hidden_layers) {
        if (w == 0) throw ValidationError("hidden layer of width 0");
    }
}

std::size_t NetworkWeights::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weights.size() + l.bias.size();
    return n;
}

std::vector<double> NetworkWeights::flatten() const {
    std::vector<double> flat;
    flat.reserve(parameter_count());
    for (const auto& l : layers) {
        flat.insert(flat.end(), l.weights.begin(), l.weights.end());
        flat.insert(flat.end(), l.bias.begin(), l.bias.end());
    }
    return flat;
}

void NetworkWeights::assign(const std::vector<double>& flat) {
    if (flat.size() != parameter_count()) throw ValidationError("flattened weight vector has the wrong length");
    auto it = flat.begin();
    for (auto& l : layers) {
        std::copy_n(it, l.weights.size(), l.weights.begin());
        it += static_cast<std::ptrdiff_t>(l.weights.size());
        std::copy_n(it, l.bias.size(), l.bias.begin());
        it += static_cast<std::ptrdiff_t>(l.bias.size());
    }
}

NetworkWeights zero_weights(const NetworkSpec& spec) {
    validate(spec);
    NetworkWeights w;
    std::size_t fan_in = spec.input_size;
    std::vector<std::size_t> widths = spec.hidden_layers;
    widths.push_back(1);
    for (auto width : widths) {
        w.layers.push_back({fan_in, width, std::vector<double>(fan_in * width, 0.0), std::vector<double>(width, 0.0)});
        fan_in = width;
    }
    return w;
}

NetworkWeights random_weights(const NetworkSpec& spec, std::uint64_t seed) {
    NetworkWeights w = zero_weights(spec);
    std::mt19937_64 rng(seed);
    for (auto& l : w.layers) {
        const double r = 1.0 / std::sqrt(static_cast<double>(l.inputs));
        std::uniform_real_distribution<double> u(-r, r);
        for (auto& x : l.weights) x = u(rng);
        for (auto& x : l.bias) x = u(rng);
    }
    return w;
}

void check_shapes(const NetworkSpec& spec, const NetworkWeights& weights) {
    NetworkWeights ref = zero_weights(spec);
    if (ref.layers.size() != weights.layers.size()) throw ValidationError("weights have the wrong number of layers");
    for (std::size_t l = 0; l < ref.layers.size(); ++l) {
        const auto& a = ref.layers[l];
        const auto& b = weights.layers[l];
        if (a.inputs != b.inputs || a.outputs != b.outputs || b.weights.size() != a.weights.size() ||
            b.bias.size() != a.bias.size()) {
            throw ValidationError("layer " + std::to_string(l) + " shape does not match the network spec");
        }
    }
}

double AnswerEncoding::encode_one(std::size_t item, const std::optional<int>& grade) const {
    if (!grade) {
        if (missing_policy == MissingPolicy::zero_fill) return 0.0;
        if (item >= item_means.size()) throw ValidationError("item mean missing for input " + std::to_string(item));
        return item_means[item];
    }
    switch (scheme) {
        case EncodingScheme::zero_one: return *grade >= 1 ? 1.0 : 0.0;
        case EncodingScheme::neg_one: return *grade >= 1 ? 1.0 : -1.0;
        case EncodingScheme::points: return static_cast<double>(*grade);
    }
    return 0.0;
}

std::vector<double> AnswerEncoding::encode(const std::vector<std::optional<int>>& grades) const {
    std::vector<double> out(grades.size());
    for (std::size_t i = 0; i < grades.size(); ++i) out[i] = encode_one(i, grades[i]);
    return out;
}

AnswerEncoding fit_encoding(EncodingScheme scheme, MissingPolicy policy, const ResponseDataset& dataset) {
    AnswerEncoding enc{scheme, policy, {}};
    enc.item_means.assign(dataset.item_count(), 0.0);
    for (std::size_t i = 0; i < dataset.item_count(); ++i) {
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& s : dataset.students) {
            if (s.grades[i]) {
                sum += enc.encode_one(i, s.grades[i]);
                ++n;
            }
        }
        enc.item_means[i] = n ? sum / static_cast<double>(n) : 0.0;
    }
    return enc;
}

double forward_encoded(const NetworkSpec& spec, const NetworkWeights& weights, const std::vector<double>& input) {
    if (input.size() != spec.input_size) {
        throw ValidationError("input has " + std::to_string(input.size()) + " entries, network expects " +
                              std::to_string(spec.input_size));
    }
    return propagate(spec, weights, input).back()[0];
}

double forward(const NetworkSpec& spec, const NetworkWeights& weights, const AnswerEncoding& encoding,
               const std::vector<std::optional<int>>& answers) {
    if (answers.size() != spec.input_size) {
        throw ValidationError("answer vector has " + std::to_string(answers.size()) + " entries, network expects " +
                              std::to_string(spec.input_size));
    }
    return forward_encoded(spec, weights, encoding.encode(answers));
}

LossGradient loss_and_gradient(const NetworkSpec& spec, const NetworkWeights& weights,
                               const std::vector<std::vector<double>>& inputs, const std::vector<double>& targets) {
    if (inputs.size() != targets.size() || inputs.empty()) throw ValidationError("inputs and targets must be non-empty and aligned");
    check_shapes(spec, weights);
    NetworkWeights grad = zero_weights(spec);
    double loss = 0.0;
    const double scale = 1.0 / static_cast<double>(inputs.size());
    for (std::size_t r = 0; r < inputs.size(); ++r) {
        if (inputs[r].size() != spec.input_size) throw ValidationError("input row has the wrong length");
        add_example_gradient(spec, weights, inputs[r], targets[r], scale, loss, grad.layers);
    }
    return {loss, grad.flatten()};
}

TrainResult train_backprop(const NetworkSpec& spec, const std::vector<std::vector<double>>& inputs,
                           const std::vector<double>& targets, const TrainConfig& config) {
    return train_backprop(spec, random_weights(spec, config.seed), inputs, targets, config);
}

TrainResult train_backprop(const NetworkSpec& spec, const NetworkWeights& initial,
                           const std::vector<std::vector<double>>& inputs, const std::vector<double>& targets,
                           const TrainConfig& config) {
    if (inputs.empty()) throw ValidationError("training set is empty");
    if (inputs.size() != targets.size()) throw ValidationError("inputs and targets are not aligned");
    if (config.epochs < 0 || config.batch_size == 0) throw ValidationError("invalid training configuration");
    check_shapes(spec, initial);
    for (const auto& row : inputs) {
        if (row.size() != spec.input_size) throw ValidationError("input row has the wrong length");
    }

    // Seeded split into train/validation rows.
    std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<std::size_t> order(inputs.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<std::size_t> train_rows = order, valid_rows;
    if (config.validation_fraction > 0.0 && inputs.size() >= 10) {
        std::shuffle(order.begin(), order.end(), rng);
        auto n_valid = static_cast<std::size_t>(std::round(config.validation_fraction * static_cast<double>(inputs.size())));
        n_valid = std::clamp<std::size_t>(n_valid, 1, inputs.size() - 1);
        valid_rows.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_valid));
        train_rows.assign(order.begin() + static_cast<std::ptrdiff_t>(n_valid), order.end());
        std::sort(train_rows.begin(), train_rows.end());
    }
    const auto& score_rows = valid_rows.empty() ? train_rows : valid_rows;

    TrainResult result;
    NetworkWeights w = initial;
    result.weights = w;
    double best = mean_squared_error(spec, w, inputs, targets, score_rows);
    std::vector<double> velocity(w.parameter_count(), 0.0);
    std::vector<double> flat = w.flatten();

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::shuffle(train_rows.begin(), train_rows.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < train_rows.size(); start += config.batch_size) {
            std::size_t end = std::min(train_rows.size(), start + config.batch_size);
            NetworkWeights grad = zero_weights(spec);
            double batch_loss = 0.0;
            const double scale = 1.0 / static_cast<double>(end - start);
            for (std::size_t k = start; k < end; ++k) {
                add_example_gradient(spec, w, inputs[train_rows[k]], targets[train_rows[k]], scale, batch_loss, grad.layers);
            }
            if (!std::isfinite(batch_loss)) {
                throw NumericalError("training diverged: non-finite loss at epoch " + std::to_string(epoch));
            }
            epoch_loss += batch_loss * static_cast<double>(end - start);
            auto g = grad.flatten();
            for (std::size_t p = 0; p < flat.size(); ++p) {
                velocity[p] = config.momentum * velocity[p] - config.learning_rate * g[p];
                flat[p] += velocity[p];
            }
            w.assign(flat);
        }
        epoch_loss /= static_cast<double>(train_rows.size());
        double valid = valid_rows.empty() ? mean_squared_error(spec, w, inputs, targets, train_rows)
                                          : mean_squared_error(spec, w, inputs, targets, valid_rows);
        if (!std::isfinite(epoch_loss) || !std::isfinite(valid)) {
            throw NumericalError("training diverged: non-finite loss at epoch " + std::to_string(epoch));
        }
        result.train_loss.push_back(epoch_loss);
        result.validation_loss.push_back(valid);
        if (valid < best) {
            best = valid;
            result.weights = w;
            result.best_epoch = epoch;
        }
    }
    return result;
}

double NeuralModel::predict(const std::vector<std::optional<int>>& answers) const {
    return output_scale * forward(spec, weights, encoding, answers);
}

NeuralModel train_model(const ResponseDataset& dataset, const NetworkSpec& spec, EncodingScheme scheme,
                        MissingPolicy policy, const TrainConfig& config) {
    if (dataset.students.empty()) throw ValidationError("training dataset is empty");
    if (spec.input_size != dataset.item_count()) {
        throw ValidationError("network input size " + std::to_string(spec.input_size) + " does not match " +
                              std::to_string(dataset.item_count()) + " questions");
    }
    NeuralModel model;
    model.item_ids = dataset.item_ids;
    model.mode = dataset.mode;
    model.spec = spec;
    model.encoding = fit_encoding(scheme, policy, dataset);
    model.output_scale = std::max(1, dataset.max_score());

    std::vector<std::vector<double>> inputs;
    std::vector<double> targets;
    for (const auto& s : dataset.students) {
        inputs.push_back(model.encoding.encode(s.grades));
        targets.push_back(raw_score(s) / model.output_scale);
    }
    TrainResult tr = train_backprop(spec, inputs, targets, config);
    model.weights = tr.weights;
    model.metadata = {config.seed, config.epochs, tr.best_epoch, tr.train_loss.empty() ? 0.0 : tr.train_loss.back(),
                      tr.validation_loss.empty() ? 0.0 : tr.validation_loss.back()};

    for (std::size_t i = 0; i < dataset.item_count(); ++i) {
        const int top = dataset.mode == GradeMode::boolean ? 1 : dataset.grade_points[i];
        std::vector<int> grades(static_cast<std::size_t>(top) + 1);
        std::iota(grades.begin(), grades.end(), 0);
        std::vector<double> counts(grades.size(), 0.0);
        double n = 0.0;
        for (const auto& s : dataset.students) {
            if (s.grades[i]) {
                counts[static_cast<std::size_t>(*s.grades[i])] += 1.0;
                n += 1.0;
            }
        }
        for (auto& c : counts) c = n > 0.0 ? c / n : 1.0 / static_cast<double>(counts.size());
        model.outcome_grades.push_back(std::move(grades));
        model.outcome_probs.push_back(std::move(counts));
    }
    return model;
}

double predicted_score_variance(const NeuralModel& model, const std::vector<std::optional<int>>& answers,
                                std::size_t item, const std::vector<int>& grades, const std::vector<double>& probs) {
    if (grades.size() != probs.size()) throw ValidationError("outcome grades and probabilities differ in length");
    double total = std::accumulate(probs.begin(), probs.end(), 0.0);
    if (std::abs(total - 1.0) > 1e-6) throw ValidationError("outcome distribution does not sum to 1");
    std::vector<std::optional<int>> trial = answers;
    std::vector<double> sc(grades.size());
    double mean = 0.0;
    for (std::size_t x = 0; x < grades.size(); ++x) {
        trial[item] = grades[x];
        sc[x] = model.predict(trial);
        mean += probs[x] * sc[x];
    }
    double var = 0.0;
    for (std::size_t x = 0; x < grades.size(); ++x) var += probs[x] * (sc[x] - mean) * (sc[x] - mean);
    return var;
}

std::size_t select_max_variance(const NeuralModel& model, const std::vector<std::optional<int>>& answers,
                                const std::vector<std::size_t>& candidates,
                                const std::vector<std::vector<double>>* answer_probs) {
    if (candidates.empty()) throw ValidationError("select_max_variance: no candidates");
    const auto& probs = answer_probs ? *answer_probs : model.outcome_probs;
    std::size_t best = candidates.front();
    double best_var = -1.0;
    for (auto c : candidates) {
        if (c >= answers.size()) throw ValidationError("candidate index out of range");
        if (answers[c]) throw ValidationError("candidate '" + model.item_ids.at(c) + "' is already answered");
        double v = predicted_score_variance(model, answers, c, model.outcome_grades.at(c), probs.at(c));
        if (v > best_var) {
            best_var = v;
            best = c;
        }
    }
    return best;
}

}  // namespace adaptest::nn
