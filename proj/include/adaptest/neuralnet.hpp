#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "adaptest/data_model.hpp"

namespace adaptest::nn {

enum class Activation { sigmoid, tanh };
enum class EncodingScheme { zero_one, neg_one, points };
enum class MissingPolicy { zero_fill, item_mean };

std::string to_string(Activation a);
std::string to_string(EncodingScheme s);
std::string to_string(MissingPolicy p);
Activation activation_from_string(const std::string& s);
EncodingScheme encoding_scheme_from_string(const std::string& s);
MissingPolicy missing_policy_from_string(const std::string& s);

// One input per question, hidden layers with `activation`, one identity output.
struct NetworkSpec {
    std::size_t input_size = 0;
    std::vector<std::size_t> hidden_layers;
    Activation activation = Activation::sigmoid;

    // Single hidden layer of ceil(n / 2) sigmoid units.
    static NetworkSpec with_defaults(std::size_t input_size);

    bool operator==(const NetworkSpec& other) const = default;
};

void validate(const NetworkSpec& spec);

// weights is out x in, row-major.
struct Layer {
    std::size_t inputs = 0;
    std::size_t outputs = 0;
    std::vector<double> weights;
    std::vector<double> bias;

    bool operator==(const Layer& other) const = default;
};

struct NetworkWeights {
    std::vector<Layer> layers;

    std::size_t parameter_count() const;
    std::vector<double> flatten() const;
    void assign(const std::vector<double>& flat);

    bool operator==(const NetworkWeights& other) const = default;
};

NetworkWeights zero_weights(const NetworkSpec& spec);
// Uniform in +-1/sqrt(fan_in), seeded.
NetworkWeights random_weights(const NetworkSpec& spec, std::uint64_t seed);
// Throws unless the layer shapes match the spec.
void check_shapes(const NetworkSpec& spec, const NetworkWeights& weights);

struct AnswerEncoding {
    EncodingScheme scheme = EncodingScheme::zero_one;
    MissingPolicy missing_policy = MissingPolicy::zero_fill;
    std::vector<double> item_means;  // encoded-value mean per item (item_mean policy)

    double encode_one(std::size_t item, const std::optional<int>& grade) const;
    std::vector<double> encode(const std::vector<std::optional<int>>& grades) const;

    bool operator==(const AnswerEncoding& other) const = default;
};

// Encoding whose item means are taken over the answered cells of `dataset`.
AnswerEncoding fit_encoding(EncodingScheme scheme, MissingPolicy policy, const ResponseDataset& dataset);

// Network output for an already-encoded input vector.
double forward_encoded(const NetworkSpec& spec, const NetworkWeights& weights, const std::vector<double>& input);

// Encodes (imputing missing answers) and propagates.
double forward(const NetworkSpec& spec, const NetworkWeights& weights, const AnswerEncoding& encoding,
               const std::vector<std::optional<int>>& answers);

struct LossGradient {
    double loss = 0.0;               // mean squared error
    std::vector<double> gradient;  // aligned with NetworkWeights::flatten()
};

LossGradient loss_and_gradient(const NetworkSpec& spec, const NetworkWeights& weights,
                               const std::vector<std::vector<double>>& inputs, const std::vector<double>& targets);

struct TrainConfig {
    double learning_rate = 0.1;
    double momentum = 0.9;
    int epochs = 2000;
    std::size_t batch_size = 32;
    double validation_fraction = 0.2;  // held out when at least 10 records exist
    std::uint64_t seed = 1;
};

struct TrainResult {
    NetworkWeights weights;  // best validation loss
    std::vector<double> train_loss;
    std::vector<double> validation_loss;
    int best_epoch = 0;  // 0 = initial weights
};

// Mini-batch gradient descent with momentum on the mean squared error.
TrainResult train_backprop(const NetworkSpec& spec, const std::vector<std::vector<double>>& inputs,
                           const std::vector<double>& targets, const TrainConfig& config);
TrainResult train_backprop(const NetworkSpec& spec, const NetworkWeights& initial,
                           const std::vector<std::vector<double>>& inputs, const std::vector<double>& targets,
                           const TrainConfig& config);

struct TrainingMetadata {
    std::uint64_t seed = 0;
    int epochs = 0;
    int best_epoch = 0;
    double final_train_loss = 0.0;
    double final_validation_loss = 0.0;

    bool operator==(const TrainingMetadata& other) const = default;
};

// A trained score predictor bound to the dataset's item columns.
struct NeuralModel {
    std::vector<std::string> item_ids;
    GradeMode mode = GradeMode::numeric;
    NetworkSpec spec;
    AnswerEncoding encoding;
    NetworkWeights weights;
    double output_scale = 1.0;  // predictions are output * output_scale
    // Possible grades and their probabilities per item.
    std::vector<std::vector<int>> outcome_grades;
    std::vector<std::vector<double>> outcome_probs;
    TrainingMetadata metadata;

    double predict(const std::vector<std::optional<int>>& answers) const;

    bool operator==(const NeuralModel& other) const = default;
};

// Fits on raw scores normalized by the maximum score; outcome
// probabilities are the empirical grade frequencies (uniform when unseen).
NeuralModel train_model(const ResponseDataset& dataset, const NetworkSpec& spec, EncodingScheme scheme,
                        MissingPolicy policy, const TrainConfig& config);

// Sum_x P(x) (SC|x - M)^2 for question `item` given the current answers.
double predicted_score_variance(const NeuralModel& model, const std::vector<std::optional<int>>& answers,
                                std::size_t item, const std::vector<int>& grades, const std::vector<double>& probs);

// argmax of the predicted-score variance over unanswered candidates;
// ties go to the lowest index. `answer_probs` defaults to the model's.
std::size_t select_max_variance(const NeuralModel& model, const std::vector<std::optional<int>>& answers,
                                const std::vector<std::size_t>& candidates,
                                const std::vector<std::vector<double>>* answer_probs = nullptr);

}  // namespace adaptest::nn
