#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "adaptest/data_model.hpp"

namespace adaptest::bn {

enum class Role { skill, information, question, auxiliary };

std::string to_string(Role role);
Role role_from_string(const std::string& s);

struct Variable {
    std::string id;
    Role role = Role::auxiliary;
    std::vector<std::string> states;
    bool ordinal = false;
    // Numeric value of each state for score conversion; empty means 0..n-1.
    std::vector<double> state_values;

    std::size_t cardinality() const { return states.size(); }
    double value_of(std::size_t state) const;
    std::optional<std::size_t> state_index(const std::string& label) const;

    bool operator==(const Variable& other) const = default;
};

// Explicit conditional table. Parent configurations are enumerated in
// row-major order (first parent slowest); entry [config * card + state]
// holds P(state | config).
struct CptNode {
    std::vector<std::size_t> parents;
    std::vector<double> table;

    bool operator==(const CptNode& other) const = default;
};

// Binary child that is the OR of independently inhibited binary causes.
// State 1 means "true"/"correct" for the child and every parent.
struct NoisyOrNode {
    std::vector<std::size_t> parents;
    std::vector<double> link_probs;  // P(Z_i = 1 | X_i = 1)
    double leak = 0.0;               // P(Y = 1 | all parents 0)

    bool operator==(const NoisyOrNode& other) const = default;
};

using NodeModel = std::variant<CptNode, NoisyOrNode>;

// P(Y = 0 | x) = (1 - leak) * prod_{i: x_i = 1} (1 - link_i), binary parents.
CptNode expand_noisy_or(const NoisyOrNode& node);

class BayesNet {
public:
    BayesNet() = default;
    // Validates state spaces, table shapes, column sums and acyclicity.
    BayesNet(std::vector<Variable> variables, std::vector<NodeModel> nodes);

    std::size_t size() const { return variables_.size(); }
    const std::vector<Variable>& variables() const { return variables_; }
    const Variable& variable(std::size_t v) const { return variables_.at(v); }
    const NodeModel& node(std::size_t v) const { return nodes_.at(v); }
    const std::vector<NodeModel>& nodes() const { return nodes_; }
    const std::vector<std::size_t>& parents(std::size_t v) const;
    // The node's table, expanding noisy-OR nodes.
    const CptNode& cpt(std::size_t v) const { return expanded_.at(v); }
    const std::vector<std::size_t>& topological_order() const { return topo_; }

    std::optional<std::size_t> index_of(const std::string& id) const;
    std::size_t require(const std::string& id) const;
    std::vector<std::size_t> with_role(Role role) const;
    std::vector<std::size_t> skills() const { return with_role(Role::skill); }
    std::vector<std::size_t> questions() const { return with_role(Role::question); }

    // Free parameters the node stores: n + 1 for an n-parent noisy-OR,
    // configurations x (card - 1) for a table.
    std::size_t stored_parameter_count(std::size_t v) const;

    bool operator==(const BayesNet& other) const {
        return variables_ == other.variables_ && nodes_ == other.nodes_;
    }

private:
    std::vector<Variable> variables_;
    std::vector<NodeModel> nodes_;
    std::vector<CptNode> expanded_;
    std::vector<std::size_t> topo_;
};

// Observed state per variable index.
using Evidence = std::map<std::size_t, std::size_t>;

void validate_evidence(const BayesNet& net, const Evidence& evidence);

// Table over a sorted set of variables; the first variable varies slowest.
class Factor {
public:
    Factor() = default;
    Factor(std::vector<std::size_t> vars, std::vector<std::size_t> cards, std::vector<double> values);

    const std::vector<std::size_t>& vars() const { return vars_; }
    const std::vector<std::size_t>& cards() const { return cards_; }
    const std::vector<double>& values() const { return values_; }
    std::vector<double>& values() { return values_; }
    std::size_t size() const { return values_.size(); }

    Factor multiply(const Factor& other) const;
    Factor sum_out(std::size_t var) const;
    // Fixes `var` to `state` and drops it from the scope.
    Factor reduce(std::size_t var, std::size_t state) const;
    double total() const;
    // Value at a full assignment given as (variable -> state).
    double at(const std::map<std::size_t, std::size_t>& assignment) const;

private:
    std::vector<std::size_t> vars_;
    std::vector<std::size_t> cards_;
    std::vector<double> values_;
};

struct JointQuery {
    Factor posterior;           // normalized P(targets | e)
    double evidence_probability;  // P(e)
};

// Exact P(targets | e) by variable elimination with a min-fill order.
// Targets may include observed variables (they become point masses).
JointQuery infer_joint(const BayesNet& net, const Evidence& evidence, const std::vector<std::size_t>& targets);

// Posterior marginal of each target.
std::vector<std::vector<double>> infer_marginals(const BayesNet& net, const Evidence& evidence,
                                                 const std::vector<std::size_t>& targets);

double evidence_probability(const BayesNet& net, const Evidence& evidence);

// Sum over skill variables of the Shannon entropy of each posterior marginal.
double skill_entropy(const BayesNet& net, const Evidence& evidence, double log_base = M_E);

// Sum_x P(question = x | e) * H(e, question = x).
double expected_entropy(const BayesNet& net, const Evidence& evidence, std::size_t question,
                        double log_base = M_E);

double information_gain(const BayesNet& net, const Evidence& evidence, std::size_t question,
                        double log_base = M_E);

// argmax IG over the candidates; ties keep the earliest candidate.
std::size_t select_max_info_gain(const BayesNet& net, const Evidence& evidence,
                                 const std::vector<std::size_t>& candidates, double log_base = M_E);

// Weight C_i per skill id. Skills without an entry weigh 0.
struct SkillWeights {
    std::map<std::string, double> weights;

    bool operator==(const SkillWeights& other) const = default;
};

SkillWeights equal_weights(const BayesNet& net, double c = 1.0);
// C_i = (n_max / n_i) * C so that every skill spans the same score range.
SkillWeights equal_impact_weights(const BayesNet& net, double c = 1.0);
std::vector<double> equal_impact_weights(const std::vector<std::size_t>& state_counts, double c = 1.0);

double expected_score(const BayesNet& net, const Evidence& evidence, const SkillWeights& weights);
double score_max(const BayesNet& net, const SkillWeights& weights);
double score_min(const BayesNet& net, const SkillWeights& weights);

struct OrdinalityViolation {
    std::string question;
    std::string skill;
    std::string context;  // other parents' states, "" for single-parent questions
    std::vector<double> probabilities;  // P(top state) along the skill axis
};

// Questions whose top-state probability decreases along an ordinal parent.
std::vector<OrdinalityViolation> check_ordinality(const BayesNet& net);

// Least-squares isotonic projection of the violating table slices,
// renormalizing the remaining states. Noisy-OR nodes are left untouched.
BayesNet repair_ordinality(const BayesNet& net);

struct EmConfig {
    double pseudocount = 0.1;  // added to every expected count
    double tol = 1e-4;         // absolute gain of the penalized log-likelihood
    int max_iters = 200;
};

struct EmResult {
    BayesNet net;
    std::vector<double> loglik_trace;    // observed-data log-likelihood per iteration
    std::vector<double> objective_trace;  // log-likelihood + pseudocount log-prior (monotone)
    int iterations = 0;
    bool converged = false;
};

// Maps dataset records to evidence. Question variables take their grade as
// the state index; other variables read the info column of the same name.
std::vector<Evidence> dataset_evidence(const BayesNet& net, const ResponseDataset& dataset);

// EM with exact E-step; hidden variables are those without a data column.
EmResult learn_em(const BayesNet& initial, const ResponseDataset& dataset, const EmConfig& config = {});
EmResult learn_em(const BayesNet& initial, const std::vector<Evidence>& records, const EmConfig& config = {});

struct ScoreGroups {
    std::vector<std::size_t> labels;  // group per student
    std::vector<double> boundaries;   // group g covers [boundaries[g-1], boundaries[g])
    std::vector<std::size_t> sizes;
};

// Quantile discretization of raw scores into near-equal groups.
ScoreGroups discretize_observed_score(const ResponseDataset& dataset, std::size_t n_groups);
ScoreGroups discretize_scores(const std::vector<double>& scores, std::size_t n_groups);

// Copy of the dataset with the group label added as info column `name`.
ResponseDataset with_score_group(const ResponseDataset& dataset, const ScoreGroups& groups,
                                 const std::string& name = "score_group");

}  // namespace adaptest::bn
