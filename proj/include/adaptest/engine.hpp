#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "adaptest/bayesnet.hpp"
#include "adaptest/data_model.hpp"
#include "adaptest/irt.hpp"
#include "adaptest/neuralnet.hpp"

namespace adaptest::cat {

enum class EstimateKind { theta, skill_marginals, score };

std::string to_string(EstimateKind kind);
EstimateKind estimate_kind_from_string(const std::string& s);

struct EstimateView {
    EstimateKind kind = EstimateKind::score;
    double value = 0.0;                    // theta, or the score for BN/NN models
    std::optional<double> uncertainty;     // SE (IRT) or skill entropy (BN)
    std::optional<double> expected_score;
    std::map<std::string, std::vector<double>> skill_marginals;  // BN only

    bool operator==(const EstimateView& other) const = default;
};

// Behavioral contract shared by every student model. Questions are bank
// indices, outcomes are answer-state indices of the bank item.
class StudentModel {
public:
    virtual ~StudentModel() = default;

    virtual std::string kind() const = 0;
    // Rejects repeated questions and invalid outcomes.
    virtual void insert_answer(std::size_t question, std::size_t outcome) = 0;
    virtual EstimateView current_estimate() const = 0;
    // Distribution over answer states for each candidate.
    virtual std::vector<std::vector<double>> predict_answers(const std::vector<std::size_t>& candidates) const = 0;
    // Higher is better; IRT item information, BN information gain, NN score variance.
    virtual double selection_score(std::size_t candidate) const = 0;
    virtual void reset() = 0;
    virtual std::unique_ptr<StudentModel> clone() const = 0;
};

// Answered question -> outcome bookkeeping shared by the implementations.
class AnswerLog {
public:
    explicit AnswerLog(const QuestionBank& bank) : bank_(&bank) {}
    void record(std::size_t question, std::size_t outcome);
    bool answered(std::size_t question) const { return answers_.count(question) > 0; }
    const std::map<std::size_t, std::size_t>& answers() const { return answers_; }
    void clear() { answers_.clear(); }

private:
    const QuestionBank* bank_;
    std::map<std::size_t, std::size_t> answers_;
};

// Dichotomous IRT over the bank; the top answer state counts as correct.
class IrtStudentModel : public StudentModel {
public:
    IrtStudentModel(std::shared_ptr<const irt::IrtModel> model, std::shared_ptr<const QuestionBank> bank);

    std::string kind() const override { return "irt"; }
    void insert_answer(std::size_t question, std::size_t outcome) override;
    EstimateView current_estimate() const override;
    std::vector<std::vector<double>> predict_answers(const std::vector<std::size_t>& candidates) const override;
    double selection_score(std::size_t candidate) const override;
    void reset() override;
    std::unique_ptr<StudentModel> clone() const override;

    const irt::ThetaEstimate& theta() const { return estimate_; }

private:
    void refresh();

    std::shared_ptr<const irt::IrtModel> model_;
    std::shared_ptr<const QuestionBank> bank_;
    std::vector<std::size_t> param_index_;  // bank item -> model item
    AnswerLog log_;
    irt::ThetaEstimate estimate_;
    std::vector<double> posterior_;
};

class BnStudentModel : public StudentModel {
public:
    BnStudentModel(std::shared_ptr<const bn::BayesNet> net, bn::SkillWeights weights,
                   std::shared_ptr<const QuestionBank> bank);

    std::string kind() const override { return "bn"; }
    void insert_answer(std::size_t question, std::size_t outcome) override;
    EstimateView current_estimate() const override;
    std::vector<std::vector<double>> predict_answers(const std::vector<std::size_t>& candidates) const override;
    double selection_score(std::size_t candidate) const override;
    void reset() override;
    std::unique_ptr<StudentModel> clone() const override;

    const bn::Evidence& evidence() const { return evidence_; }
    std::size_t variable_of(std::size_t question) const { return var_index_.at(question); }

private:
    void refresh();

    std::shared_ptr<const bn::BayesNet> net_;
    bn::SkillWeights weights_;
    std::shared_ptr<const QuestionBank> bank_;
    std::vector<std::size_t> var_index_;  // bank item -> network variable
    AnswerLog log_;
    bn::Evidence evidence_;
    double entropy_ = 0.0;
    EstimateView estimate_;
};

class NnStudentModel : public StudentModel {
public:
    NnStudentModel(std::shared_ptr<const nn::NeuralModel> model, std::shared_ptr<const QuestionBank> bank);

    std::string kind() const override { return "nn"; }
    void insert_answer(std::size_t question, std::size_t outcome) override;
    EstimateView current_estimate() const override;
    std::vector<std::vector<double>> predict_answers(const std::vector<std::size_t>& candidates) const override;
    double selection_score(std::size_t candidate) const override;
    void reset() override;
    std::unique_ptr<StudentModel> clone() const override;

    // Grade fed to the network for an answer state of a bank item.
    int grade_for(std::size_t question, std::size_t outcome) const;

private:
    std::shared_ptr<const nn::NeuralModel> model_;
    std::shared_ptr<const QuestionBank> bank_;
    std::vector<std::size_t> input_index_;  // bank item -> network input
    AnswerLog log_;
    std::vector<std::optional<int>> answers_;  // by network input
};

enum class StoppingKind { max_questions, se_threshold, entropy_threshold, time_limit, exhausted };

std::string to_string(StoppingKind kind);
StoppingKind stopping_kind_from_string(const std::string& s);

struct StoppingCondition {
    StoppingKind kind = StoppingKind::exhausted;
    double value = 0.0;

    bool operator==(const StoppingCondition& other) const = default;
};

// First-triggered of the listed conditions; exhaustion always applies.
// Precision thresholds only fire once at least one answer is in.
struct StoppingRule {
    std::vector<StoppingCondition> conditions;

    static StoppingRule max_questions(std::size_t n);
    static StoppingRule se_threshold(double tau);
    static StoppingRule entropy_threshold(double tau);
    static StoppingRule time_limit(double seconds);
    StoppingRule& also(StoppingKind kind, double value);

    void validate() const;
    bool operator==(const StoppingRule& other) const = default;
};

nlohmann::json stopping_to_json(const StoppingRule& rule);
StoppingRule stopping_from_json(const nlohmann::json& doc);

// Seconds on some monotone scale.
using Clock = std::function<double()>;
Clock steady_clock();

class SelectionStrategy {
public:
    virtual ~SelectionStrategy() = default;
    // `remaining` is sorted by bank index and non-empty.
    virtual std::size_t choose(const StudentModel& model, const std::vector<std::size_t>& remaining) const = 0;
    virtual std::unique_ptr<SelectionStrategy> clone() const = 0;
    virtual std::string name() const = 0;
};

// argmax selection_score; ties (within 1e-12) go to the lowest index.
class GreedyStrategy : public SelectionStrategy {
public:
    std::size_t choose(const StudentModel& model, const std::vector<std::size_t>& remaining) const override;
    std::unique_ptr<SelectionStrategy> clone() const override { return std::make_unique<GreedyStrategy>(*this); }
    std::string name() const override { return "adaptive"; }
};

// A seeded permutation of the bank, fixed for the session.
class RandomOrderStrategy : public SelectionStrategy {
public:
    RandomOrderStrategy(std::size_t bank_size, std::uint64_t seed);
    std::size_t choose(const StudentModel& model, const std::vector<std::size_t>& remaining) const override;
    std::unique_ptr<SelectionStrategy> clone() const override { return std::make_unique<RandomOrderStrategy>(*this); }
    std::string name() const override { return "random"; }

private:
    std::vector<std::size_t> order_;
};

// Bank order.
class FixedOrderStrategy : public SelectionStrategy {
public:
    std::size_t choose(const StudentModel& model, const std::vector<std::size_t>& remaining) const override;
    std::unique_ptr<SelectionStrategy> clone() const override { return std::make_unique<FixedOrderStrategy>(*this); }
    std::string name() const override { return "fixed"; }
};

struct TranscriptRecord {
    std::size_t step = 0;  // 1-based
    std::string question_id;
    std::size_t outcome = 0;
    double estimate = 0.0;
    std::optional<double> uncertainty;
    std::optional<double> expected_score;
    std::optional<double> timestamp;  // seconds since the session started

    bool operator==(const TranscriptRecord& other) const = default;
};

struct Transcript {
    std::string model_kind;
    std::vector<TranscriptRecord> records;
    EstimateView final_estimate;
    std::string stop_reason;  // "" while running
    bool aborted = false;

    bool operator==(const Transcript& other) const = default;
};

Transcript without_timestamps(Transcript t);

struct NextStep {
    std::optional<std::size_t> question;  // empty when finished
    std::string stop_reason;
};

struct SessionOptions {
    bool record_timestamps = false;
    Clock clock;  // defaults to steady_clock()
};

class TestSession {
public:
    TestSession(std::shared_ptr<const QuestionBank> bank, std::unique_ptr<StudentModel> model, StoppingRule stopping,
                std::unique_ptr<SelectionStrategy> strategy = std::make_unique<GreedyStrategy>(),
                SessionOptions options = {});

    // Evaluates the stopping rules, then the strategy; never mutates.
    NextStep next_question() const;
    // Records the answer and returns the refreshed estimate.
    EstimateView submit_answer(std::size_t question, std::size_t outcome);
    void mark_finished(const std::string& reason, bool aborted = false);

    bool finished() const { return finished_; }
    const std::string& stop_reason() const { return stop_reason_; }
    const QuestionBank& bank() const { return *bank_; }
    const StudentModel& model() const { return *model_; }
    const StoppingRule& stopping() const { return stopping_; }
    const std::vector<std::size_t>& remaining() const { return remaining_; }
    std::size_t asked_count() const { return transcript_.records.size(); }
    const EstimateView& estimate() const { return estimate_; }
    Transcript transcript() const;

private:
    std::shared_ptr<const QuestionBank> bank_;
    std::unique_ptr<StudentModel> model_;
    StoppingRule stopping_;
    std::unique_ptr<SelectionStrategy> strategy_;
    SessionOptions options_;
    double started_ = 0.0;
    std::vector<std::size_t> remaining_;
    std::vector<bool> asked_;
    EstimateView estimate_;
    Transcript transcript_;
    bool finished_ = false;
    std::string stop_reason_;
};

// Answer state for a bank question.
using AnswerOracle = std::function<std::size_t(std::size_t question)>;

// Loops next_question / submit_answer until a stopping rule fires.
Transcript run_scripted(TestSession& session, const AnswerOracle& oracle);

// Parses an answer token: a state index or an answer label.
std::optional<std::size_t> parse_outcome(const Item& item, const std::string& token);

// Terminal loop for a human examinee. Invalid tokens are re-prompted;
// end of input (or an interrupt that breaks the read) finishes the
// session as aborted.
Transcript run_interactive(TestSession& session, std::istream& in, std::ostream& out, bool show_estimate = true);

}  // namespace adaptest::cat
