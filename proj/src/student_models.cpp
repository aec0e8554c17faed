#include "adaptest/engine.hpp"

#include "adaptest/error.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace adaptest::cat {

void AnswerLog::record(std::size_t question, std::size_t outcome) {
    if (question >= bank_->size()) throw ValidationError("question index " + std::to_string(question) + " out of range");
    const Item& item = bank_->item(question);
    if (answers_.count(question)) throw ValidationError("question '" + item.id + "' was already answered");
    if (outcome >= item.state_count()) {
        throw ValidationError("outcome " + std::to_string(outcome) + " is not an answer state of '" + item.id + "'");
    }
    answers_[question] = outcome;
}

// ---- IRT ----

IrtStudentModel::IrtStudentModel(std::shared_ptr<const irt::IrtModel> model, std::shared_ptr<const QuestionBank> bank)
    : model_(std::move(model)), bank_(std::move(bank)), log_(*bank_) {
    if (model_->item_ids.size() != model_->params.size()) throw ValidationError("IRT model ids and parameters differ in length");
    for (const auto& item : bank_->items()) {
        auto it = std::find(model_->item_ids.begin(), model_->item_ids.end(), item.id);
        if (it == model_->item_ids.end()) throw ValidationError("IRT model has no parameters for item '" + item.id + "'");
        param_index_.push_back(static_cast<std::size_t>(it - model_->item_ids.begin()));
    }
    refresh();
}

void IrtStudentModel::refresh() {
    std::vector<irt::ItemParams> items;
    const std::size_t n = log_.answers().size();
    auto answers = std::make_unique<bool[]>(std::max<std::size_t>(n, 1));
    std::size_t k = 0;
    for (const auto& [q, outcome] : log_.answers()) {
        items.push_back(model_->params[param_index_[q]]);
        answers[k++] = outcome + 1 == bank_->item(q).state_count();
    }
    std::span<const irt::ItemParams> is(items);
    std::span<const bool> as(answers.get(), n);
    auto method = model_->method;
    // MLE is undefined without evidence; report the prior instead.
    if (n == 0 && method == irt::EstimationMethod::mle) method = irt::EstimationMethod::eap;
    estimate_ = irt::estimate_theta(is, as, model_->grid, method);
    posterior_ = irt::posterior_weights(is, as, model_->grid);
}

void IrtStudentModel::insert_answer(std::size_t question, std::size_t outcome) {
    log_.record(question, outcome);
    refresh();
}

EstimateView IrtStudentModel::current_estimate() const {
    EstimateView v;
    v.kind = EstimateKind::theta;
    v.value = estimate_.theta;
    v.uncertainty = estimate_.se;
    // Observed points plus the posterior expectation over unanswered items.
    double score = 0.0;
    const auto& nodes = model_->grid.nodes();
    for (std::size_t q = 0; q < bank_->size(); ++q) {
        const Item& item = bank_->item(q);
        auto it = log_.answers().find(q);
        if (it != log_.answers().end()) {
            score += item.points_for(it->second);
            continue;
        }
        double p = 0.0;
        for (std::size_t g = 0; g < nodes.size(); ++g) p += posterior_[g] * irt::irf(model_->params[param_index_[q]], nodes[g]);
        score += p * item.points_for(item.state_count() - 1);
    }
    v.expected_score = score;
    return v;
}

std::vector<std::vector<double>> IrtStudentModel::predict_answers(const std::vector<std::size_t>& candidates) const {
    std::vector<std::vector<double>> out;
    const auto& nodes = model_->grid.nodes();
    for (auto q : candidates) {
        const Item& item = bank_->item(q);
        double p = 0.0;
        for (std::size_t g = 0; g < nodes.size(); ++g) p += posterior_[g] * irt::irf(model_->params[param_index_[q]], nodes[g]);
        std::vector<double> dist(item.state_count(), 0.0);
        dist.front() = 1.0 - p;
        dist.back() = p;
        out.push_back(std::move(dist));
    }
    return out;
}

double IrtStudentModel::selection_score(std::size_t candidate) const {
    return irt::item_information(model_->params[param_index_.at(candidate)], estimate_.theta).value;
}

void IrtStudentModel::reset() {
    log_.clear();
    refresh();
}

std::unique_ptr<StudentModel> IrtStudentModel::clone() const { return std::make_unique<IrtStudentModel>(*this); }

// ---- Bayesian network ----

BnStudentModel::BnStudentModel(std::shared_ptr<const bn::BayesNet> net, bn::SkillWeights weights,
                               std::shared_ptr<const QuestionBank> bank)
    : net_(std::move(net)), weights_(std::move(weights)), bank_(std::move(bank)), log_(*bank_) {
    for (const auto& item : bank_->items()) {
        auto v = net_->index_of(item.id);
        if (!v) throw ValidationError("network has no variable for item '" + item.id + "'");
        const auto& var = net_->variable(*v);
        if (var.role != bn::Role::question) throw ValidationError("variable '" + item.id + "' is not a question");
        if (var.cardinality() != item.state_count()) {
            throw ValidationError("variable '" + item.id + "' has " + std::to_string(var.cardinality()) +
                                  " states, the bank item has " + std::to_string(item.state_count()));
        }
        var_index_.push_back(*v);
    }
    refresh();
}

void BnStudentModel::refresh() {
    auto skills = net_->skills();
    auto marginals = bn::infer_marginals(*net_, evidence_, skills);
    estimate_ = {};
    estimate_.kind = EstimateKind::skill_marginals;
    entropy_ = 0.0;
    double score = 0.0;
    for (std::size_t i = 0; i < skills.size(); ++i) {
        const auto& var = net_->variable(skills[i]);
        auto w = weights_.weights.find(var.id);
        for (std::size_t j = 0; j < marginals[i].size(); ++j) {
            double p = marginals[i][j];
            if (p > 0.0) entropy_ -= p * std::log(p);
            if (w != weights_.weights.end()) score += p * var.value_of(j) * w->second;
        }
        estimate_.skill_marginals[var.id] = marginals[i];
    }
    estimate_.value = score;
    estimate_.uncertainty = entropy_;
    estimate_.expected_score = score;
}

void BnStudentModel::insert_answer(std::size_t question, std::size_t outcome) {
    AnswerLog log = log_;
    log.record(question, outcome);
    bn::Evidence next = evidence_;
    next[var_index_[question]] = outcome;
    bn::evidence_probability(*net_, next);  // throws on impossible evidence before committing
    log_ = std::move(log);
    evidence_ = std::move(next);
    refresh();
}

EstimateView BnStudentModel::current_estimate() const { return estimate_; }

std::vector<std::vector<double>> BnStudentModel::predict_answers(const std::vector<std::size_t>& candidates) const {
    std::vector<std::size_t> vars;
    for (auto q : candidates) vars.push_back(var_index_.at(q));
    return bn::infer_marginals(*net_, evidence_, vars);
}

double BnStudentModel::selection_score(std::size_t candidate) const {
    return entropy_ - bn::expected_entropy(*net_, evidence_, var_index_.at(candidate));
}

void BnStudentModel::reset() {
    log_.clear();
    evidence_.clear();
    refresh();
}

std::unique_ptr<StudentModel> BnStudentModel::clone() const { return std::make_unique<BnStudentModel>(*this); }

// ---- Neural network ----

NnStudentModel::NnStudentModel(std::shared_ptr<const nn::NeuralModel> model, std::shared_ptr<const QuestionBank> bank)
    : model_(std::move(model)), bank_(std::move(bank)), log_(*bank_) {
    for (const auto& item : bank_->items()) {
        auto it = std::find(model_->item_ids.begin(), model_->item_ids.end(), item.id);
        if (it == model_->item_ids.end()) throw ValidationError("network has no input for item '" + item.id + "'");
        input_index_.push_back(static_cast<std::size_t>(it - model_->item_ids.begin()));
    }
    answers_.assign(model_->item_ids.size(), std::nullopt);
}

int NnStudentModel::grade_for(std::size_t question, std::size_t outcome) const {
    const Item& item = bank_->item(question);
    if (model_->mode == GradeMode::boolean) return outcome + 1 == item.state_count() ? 1 : 0;
    return item.points_for(outcome);
}

void NnStudentModel::insert_answer(std::size_t question, std::size_t outcome) {
    log_.record(question, outcome);
    answers_[input_index_[question]] = grade_for(question, outcome);
}

EstimateView NnStudentModel::current_estimate() const {
    EstimateView v;
    v.kind = EstimateKind::score;
    v.value = model_->predict(answers_);
    v.expected_score = v.value;
    return v;
}

std::vector<std::vector<double>> NnStudentModel::predict_answers(const std::vector<std::size_t>& candidates) const {
    std::vector<std::vector<double>> out;
    for (auto q : candidates) {
        const Item& item = bank_->item(q);
        const auto& grades = model_->outcome_grades.at(input_index_[q]);
        const auto& probs = model_->outcome_probs.at(input_index_[q]);
        std::vector<double> dist(item.state_count(), 0.0);
        double total = 0.0;
        for (std::size_t s = 0; s < dist.size(); ++s) {
            int g = grade_for(q, s);
            for (std::size_t k = 0; k < grades.size(); ++k) {
                if (grades[k] == g) dist[s] += probs[k];
            }
            total += dist[s];
        }
        for (auto& d : dist) d = total > 0.0 ? d / total : 1.0 / static_cast<double>(dist.size());
        out.push_back(std::move(dist));
    }
    return out;
}

double NnStudentModel::selection_score(std::size_t candidate) const {
    const std::size_t input = input_index_.at(candidate);
    return nn::predicted_score_variance(*model_, answers_, input, model_->outcome_grades.at(input),
                                        model_->outcome_probs.at(input));
}

void NnStudentModel::reset() {
    log_.clear();
    answers_.assign(model_->item_ids.size(), std::nullopt);
}

std::unique_ptr<StudentModel> NnStudentModel::clone() const { return std::make_unique<NnStudentModel>(*this); }

}  // namespace adaptest::cat
