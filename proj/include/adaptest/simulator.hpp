#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "adaptest/bayesnet.hpp"
#include "adaptest/data_model.hpp"
#include "adaptest/engine.hpp"
#include "adaptest/irt.hpp"

namespace adaptest::sim {

// splitmix64 step: advances `state` and returns the next output.
std::uint64_t splitmix64(std::uint64_t& state);
// Seed of the examinee (or stream) `index` under a global seed. Adding
// examinees never changes the seeds of earlier ones.
std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t index);

struct IrtCohort {
    ResponseDataset data;  // boolean mode
    std::vector<double> thetas;
};

// theta ~ N(mean, sd^2), answers ~ Bernoulli(p_i(theta)).
IrtCohort sample_irt_cohort(const std::vector<std::string>& item_ids, const std::vector<irt::ItemParams>& params,
                            std::size_t n, std::uint64_t seed, double theta_mean = 0.0, double theta_sd = 1.0);
// Same sampler at given abilities.
IrtCohort sample_irt_cohort_at(const std::vector<std::string>& item_ids, const std::vector<irt::ItemParams>& params,
                               const std::vector<double>& thetas, std::uint64_t seed);

// Full state assignment by ancestral sampling.
std::vector<std::size_t> sample_bn_record(const bn::BayesNet& net, std::mt19937_64& rng);

struct BnCohort {
    ResponseDataset data;  // question columns (grade = state index) and information columns
    std::vector<std::vector<std::size_t>> truths;  // full assignment per student
};

BnCohort sample_bn_cohort(const bn::BayesNet& net, std::size_t n, std::uint64_t seed);

// Examinees with a fixed answer (state index) per bank question.
struct Cohort {
    std::vector<std::vector<std::size_t>> responses;
    std::vector<double> truths;  // theta, true skill score, or true raw score
};

Cohort irt_examinees(const QuestionBank& bank, const irt::IrtModel& model, std::size_t n, std::uint64_t seed);
Cohort bn_examinees(const QuestionBank& bank, const bn::BayesNet& net, const bn::SkillWeights& weights, std::size_t n,
                    std::uint64_t seed);
// Replays recorded answers; missing grades answer state 0, truth is the raw score.
Cohort dataset_examinees(const QuestionBank& bank, const ResponseDataset& dataset);

using ModelFactory = std::function<std::unique_ptr<cat::StudentModel>()>;

enum class Policy { adaptive, random_order, fixed_order };

std::string to_string(Policy p);
Policy policy_from_string(const std::string& s);

struct Quartiles {
    double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0, mean = 0.0;
};

// Linear interpolation between order statistics.
Quartiles quartiles(std::vector<double> values);

struct PolicyReport {
    Policy policy = Policy::adaptive;
    std::vector<std::size_t> questions_to_stop;  // per examinee
    std::vector<double> final_estimates;
    Quartiles stop_quartiles;
    std::optional<double> truth_pearson;
    std::optional<double> truth_spearman;
    // Mean fraction of remaining answers predicted correctly after each step.
    std::vector<double> accuracy_by_step;
    // Rank agreement of estimates with truths after each step (examinees
    // still running at that step).
    std::vector<std::optional<double>> spearman_by_step;
};

struct EvaluationReport {
    std::uint64_t seed = 0;
    std::size_t examinees = 0;
    std::size_t bank_size = 0;
    std::vector<PolicyReport> policies;

    const PolicyReport* find(Policy p) const;
    // Median questions-to-stop of `a` over that of `b`.
    std::optional<double> median_ratio(Policy a, Policy b) const;
};

struct SimulationOptions {
    bool track_predictions = false;
    unsigned threads = 1;
};

EvaluationReport compare_policies(const ModelFactory& factory, std::shared_ptr<const QuestionBank> bank,
                                  const Cohort& cohort, const cat::StoppingRule& stopping,
                                  const std::vector<Policy>& policies, std::uint64_t seed,
                                  const SimulationOptions& options = {});

// Per-step accuracy of the model's most likely answers on the remaining
// questions, adaptive selection run to exhaustion.
std::vector<double> prediction_accuracy_curve(const ModelFactory& factory, std::shared_ptr<const QuestionBank> bank,
                                              const Cohort& cohort, std::uint64_t seed, unsigned threads = 1);

nlohmann::json report_to_json(const EvaluationReport& report);
// Plot-ready series: policy,step,accuracy,spearman
void write_series_csv(std::ostream& out, const EvaluationReport& report);

}  // namespace adaptest::sim
