#include "adaptest/bayesnet.hpp"

#include "adaptest/error.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

namespace adaptest::bn {

namespace {

constexpr double kSumTolerance = 1e-9;

std::size_t product_of(const std::vector<std::size_t>& cards) {
    std::size_t n = 1;
    for (auto c : cards) n *= c;
    return n;
}

double safe_log(double p) { return std::log(std::max(p, 1e-300)); }

// Row-major strides for the given cardinalities (last varies fastest).
std::vector<std::size_t> strides_for(const std::vector<std::size_t>& cards) {
    std::vector<std::size_t> st(cards.size(), 1);
    for (std::size_t d = cards.size(); d-- > 1;) st[d - 1] = st[d] * cards[d];
    return st;
}

// Factor P(v | parents) over the sorted family scope.
Factor family_factor(const BayesNet& net, std::size_t v) {
    const CptNode& cpt = net.cpt(v);
    std::vector<std::size_t> vars = cpt.parents;
    vars.push_back(v);
    std::sort(vars.begin(), vars.end());
    std::vector<std::size_t> cards;
    for (auto u : vars) cards.push_back(net.variable(u).cardinality());

    // position of each family member (parents..., child) inside `vars`
    std::vector<std::size_t> family = cpt.parents;
    family.push_back(v);
    std::vector<std::size_t> pos(family.size());
    for (std::size_t f = 0; f < family.size(); ++f) {
        pos[f] = static_cast<std::size_t>(std::find(vars.begin(), vars.end(), family[f]) - vars.begin());
    }
    std::vector<std::size_t> fam_cards;
    for (auto u : family) fam_cards.push_back(net.variable(u).cardinality());
    auto fam_strides = strides_for(fam_cards);

    const std::size_t total = product_of(cards);
    std::vector<double> values(total);
    std::vector<std::size_t> assign(vars.size(), 0);
    for (std::size_t t = 0; t < total; ++t) {
        std::size_t idx = 0;
        for (std::size_t f = 0; f < family.size(); ++f) idx += assign[pos[f]] * fam_strides[f];
        values[t] = cpt.table[idx];
        for (std::size_t d = vars.size(); d-- > 0;) {
            if (++assign[d] < cards[d]) break;
            assign[d] = 0;
        }
    }
    return Factor(std::move(vars), std::move(cards), std::move(values));
}

std::string describe_config(const BayesNet& net, const std::vector<std::size_t>& parents,
                            const std::vector<std::size_t>& states, std::size_t skip) {
    std::ostringstream os;
    bool first = true;
    for (std::size_t p = 0; p < parents.size(); ++p) {
        if (p == skip) continue;
        if (!first) os << ", ";
        first = false;
        const auto& var = net.variable(parents[p]);
        os << var.id << "=" << var.states[states[p]];
    }
    return os.str();
}

// Pool-adjacent-violators: least-squares non-decreasing fit, equal weights.
std::vector<double> isotonic_fit(const std::vector<double>& y) {
    std::vector<double> level;
    std::vector<std::size_t> count;
    for (double v : y) {
        level.push_back(v);
        count.push_back(1);
        while (level.size() > 1 && level[level.size() - 2] > level.back()) {
            std::size_t n = count[count.size() - 2] + count.back();
            double m = (level[level.size() - 2] * count[count.size() - 2] + level.back() * count.back()) / n;
            level.pop_back();
            count.pop_back();
            level.back() = m;
            count.back() = n;
        }
    }
    std::vector<double> out;
    for (std::size_t b = 0; b < level.size(); ++b) out.insert(out.end(), count[b], level[b]);
    return out;
}

bool is_non_decreasing(const std::vector<double>& v) {
    for (std::size_t j = 1; j < v.size(); ++j) {
        if (v[j] < v[j - 1] - 1e-12) return false;
    }
    return true;
}

// Visits every parent configuration with the `axis` parent varying fastest
// in an inner loop; `fn(states, indices)` receives the table row indices
// along the axis.
template <typename Fn>
void for_each_axis_slice(const BayesNet& net, const CptNode& cpt, std::size_t axis, Fn fn) {
    std::vector<std::size_t> pcards;
    for (auto p : cpt.parents) pcards.push_back(net.variable(p).cardinality());
    auto st = strides_for(pcards);
    std::size_t configs = product_of(pcards);
    std::vector<std::size_t> assign(pcards.size(), 0);
    for (std::size_t t = 0; t < configs; ++t) {
        if (assign[axis] == 0) {
            std::size_t base = 0;
            for (std::size_t d = 0; d < pcards.size(); ++d) base += assign[d] * st[d];
            std::vector<std::size_t> rows;
            for (std::size_t j = 0; j < pcards[axis]; ++j) rows.push_back(base + j * st[axis]);
            fn(assign, rows);
        }
        for (std::size_t d = pcards.size(); d-- > 0;) {
            if (++assign[d] < pcards[d]) break;
            assign[d] = 0;
        }
    }
}

}  // namespace

std::string to_string(Role role) {
    switch (role) {
        case Role::skill: return "skill";
        case Role::information: return "information";
        case Role::question: return "question";
        case Role::auxiliary: return "auxiliary";
    }
    return "auxiliary";
}

Role role_from_string(const std::string& s) {
    if (s == "skill") return Role::skill;
    if (s == "information") return Role::information;
    if (s == "question") return Role::question;
    if (s == "auxiliary") return Role::auxiliary;
    throw ValidationError("unknown variable role '" + s + "'");
}

double Variable::value_of(std::size_t state) const {
    if (state >= states.size()) throw ValidationError("variable '" + id + "': state index out of range");
    return state_values.empty() ? static_cast<double>(state) : state_values[state];
}

std::optional<std::size_t> Variable::state_index(const std::string& label) const {
    for (std::size_t s = 0; s < states.size(); ++s) {
        if (states[s] == label) return s;
    }
    return std::nullopt;
}

CptNode expand_noisy_or(const NoisyOrNode& node) {
    const std::size_t n = node.parents.size();
    if (node.link_probs.size() != n) throw ValidationError("noisy-OR node: one link probability per parent required");
    CptNode cpt;
    cpt.parents = node.parents;
    const std::size_t configs = std::size_t{1} << n;
    cpt.table.resize(configs * 2);
    for (std::size_t config = 0; config < configs; ++config) {
        double p_off = 1.0 - node.leak;
        for (std::size_t i = 0; i < n; ++i) {
            // first parent is the most significant bit
            bool on = (config >> (n - 1 - i)) & 1u;
            if (on) p_off *= 1.0 - node.link_probs[i];
        }
        cpt.table[config * 2] = p_off;
        cpt.table[config * 2 + 1] = 1.0 - p_off;
    }
    return cpt;
}

BayesNet::BayesNet(std::vector<Variable> variables, std::vector<NodeModel> nodes)
    : variables_(std::move(variables)), nodes_(std::move(nodes)) {
    if (variables_.size() != nodes_.size()) throw ValidationError("every variable needs exactly one node definition");
    std::set<std::string> ids;
    for (const auto& var : variables_) {
        if (var.id.empty()) throw ValidationError("variable with empty id");
        if (!ids.insert(var.id).second) throw ValidationError("duplicate variable id '" + var.id + "'");
        if (var.states.size() < 2) throw ValidationError("variable '" + var.id + "' needs at least two states");
        std::set<std::string> labels(var.states.begin(), var.states.end());
        if (labels.size() != var.states.size()) throw ValidationError("variable '" + var.id + "' has duplicate states");
        if (var.role == Role::skill && !var.ordinal) {
            throw ValidationError("skill variable '" + var.id + "' must be ordinal");
        }
        if (!var.state_values.empty() && var.state_values.size() != var.states.size()) {
            throw ValidationError("variable '" + var.id + "': state_values size mismatch");
        }
    }

    expanded_.reserve(nodes_.size());
    for (std::size_t v = 0; v < nodes_.size(); ++v) {
        const auto& var = variables_[v];
        const std::vector<std::size_t>& ps = std::visit([](const auto& n) -> const std::vector<std::size_t>& { return n.parents; },
                                                        nodes_[v]);
        std::set<std::size_t> seen;
        for (auto p : ps) {
            if (p >= variables_.size()) throw ValidationError("node '" + var.id + "' has an unknown parent");
            if (p == v) throw ValidationError("node '" + var.id + "' lists itself as a parent");
            if (!seen.insert(p).second) throw ValidationError("node '" + var.id + "' repeats a parent");
        }
        if (const auto* no = std::get_if<NoisyOrNode>(&nodes_[v])) {
            if (var.cardinality() != 2) throw ValidationError("noisy-OR child '" + var.id + "' must be binary");
            for (auto p : no->parents) {
                if (variables_[p].cardinality() != 2) {
                    throw ValidationError("noisy-OR parent '" + variables_[p].id + "' of '" + var.id + "' must be binary");
                }
            }
            if (no->link_probs.size() != no->parents.size()) {
                throw ValidationError("noisy-OR node '" + var.id + "' needs one link probability per parent");
            }
            for (double l : no->link_probs) {
                if (!(l >= 0.0 && l <= 1.0)) throw ValidationError("noisy-OR node '" + var.id + "': link probability outside [0, 1]");
            }
            if (!(no->leak >= 0.0 && no->leak < 1.0)) throw ValidationError("noisy-OR node '" + var.id + "': leak outside [0, 1)");
            expanded_.push_back(expand_noisy_or(*no));
        } else {
            const auto& cpt = std::get<CptNode>(nodes_[v]);
            std::size_t configs = 1;
            for (auto p : cpt.parents) configs *= variables_[p].cardinality();
            const std::size_t card = var.cardinality();
            if (cpt.table.size() != configs * card) {
                throw ValidationError("node '" + var.id + "': table has " + std::to_string(cpt.table.size()) +
                                      " entries, expected " + std::to_string(configs * card));
            }
            for (std::size_t c = 0; c < configs; ++c) {
                double sum = 0.0;
                for (std::size_t s = 0; s < card; ++s) {
                    double x = cpt.table[c * card + s];
                    if (!(x >= 0.0 && x <= 1.0)) throw ValidationError("node '" + var.id + "': probability outside [0, 1]");
                    sum += x;
                }
                if (std::abs(sum - 1.0) > kSumTolerance) {
                    std::ostringstream os;
                    os << "node '" << var.id << "': distribution for parent configuration " << c << " sums to " << sum;
                    throw ValidationError(os.str());
                }
            }
            expanded_.push_back(cpt);
        }
    }

    // Kahn's algorithm, smallest index first.
    std::vector<std::size_t> indegree(variables_.size(), 0);
    std::vector<std::vector<std::size_t>> children(variables_.size());
    for (std::size_t v = 0; v < variables_.size(); ++v) {
        for (auto p : expanded_[v].parents) {
            children[p].push_back(v);
            ++indegree[v];
        }
    }
    std::set<std::size_t> ready;
    for (std::size_t v = 0; v < variables_.size(); ++v) {
        if (indegree[v] == 0) ready.insert(v);
    }
    while (!ready.empty()) {
        std::size_t v = *ready.begin();
        ready.erase(ready.begin());
        topo_.push_back(v);
        for (auto c : children[v]) {
            if (--indegree[c] == 0) ready.insert(c);
        }
    }
    if (topo_.size() != variables_.size()) throw ValidationError("network edges contain a directed cycle");
}

const std::vector<std::size_t>& BayesNet::parents(std::size_t v) const { return expanded_.at(v).parents; }

std::optional<std::size_t> BayesNet::index_of(const std::string& id) const {
    for (std::size_t v = 0; v < variables_.size(); ++v) {
        if (variables_[v].id == id) return v;
    }
    return std::nullopt;
}

std::size_t BayesNet::require(const std::string& id) const {
    auto v = index_of(id);
    if (!v) throw ValidationError("unknown variable '" + id + "'");
    return *v;
}

std::vector<std::size_t> BayesNet::with_role(Role role) const {
    std::vector<std::size_t> out;
    for (std::size_t v = 0; v < variables_.size(); ++v) {
        if (variables_[v].role == role) out.push_back(v);
    }
    return out;
}

std::size_t BayesNet::stored_parameter_count(std::size_t v) const {
    if (const auto* no = std::get_if<NoisyOrNode>(&nodes_.at(v))) return no->link_probs.size() + 1;
    const auto& cpt = std::get<CptNode>(nodes_[v]);
    std::size_t configs = 1;
    for (auto p : cpt.parents) configs *= variables_[p].cardinality();
    return configs * (variables_[v].cardinality() - 1);
}

void validate_evidence(const BayesNet& net, const Evidence& evidence) {
    for (const auto& [var, state] : evidence) {
        if (var >= net.size()) throw ValidationError("evidence on unknown variable index " + std::to_string(var));
        if (state >= net.variable(var).cardinality()) {
            throw ValidationError("evidence state out of range for '" + net.variable(var).id + "'");
        }
    }
}

Factor::Factor(std::vector<std::size_t> vars, std::vector<std::size_t> cards, std::vector<double> values)
    : vars_(std::move(vars)), cards_(std::move(cards)), values_(std::move(values)) {
    if (vars_.size() != cards_.size() || product_of(cards_) != values_.size()) {
        throw ValidationError("factor shape mismatch");
    }
    if (!std::is_sorted(vars_.begin(), vars_.end())) throw ValidationError("factor scope must be sorted");
}

Factor Factor::multiply(const Factor& other) const {
    std::vector<std::size_t> vars, cards;
    std::vector<std::size_t> sa, sb;
    auto st_a = strides_for(cards_);
    auto st_b = strides_for(other.cards_);
    std::size_t i = 0, j = 0;
    while (i < vars_.size() || j < other.vars_.size()) {
        if (j == other.vars_.size() || (i < vars_.size() && vars_[i] < other.vars_[j])) {
            vars.push_back(vars_[i]);
            cards.push_back(cards_[i]);
            sa.push_back(st_a[i]);
            sb.push_back(0);
            ++i;
        } else if (i == vars_.size() || other.vars_[j] < vars_[i]) {
            vars.push_back(other.vars_[j]);
            cards.push_back(other.cards_[j]);
            sa.push_back(0);
            sb.push_back(st_b[j]);
            ++j;
        } else {
            vars.push_back(vars_[i]);
            cards.push_back(cards_[i]);
            sa.push_back(st_a[i]);
            sb.push_back(st_b[j]);
            ++i;
            ++j;
        }
    }
    const std::size_t total = product_of(cards);
    std::vector<double> values(total);
    std::vector<std::size_t> assign(vars.size(), 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t t = 0; t < total; ++t) {
        values[t] = values_[ia] * other.values_[ib];
        for (std::size_t d = vars.size(); d-- > 0;) {
            ++assign[d];
            ia += sa[d];
            ib += sb[d];
            if (assign[d] < cards[d]) break;
            ia -= sa[d] * cards[d];
            ib -= sb[d] * cards[d];
            assign[d] = 0;
        }
    }
    return Factor(std::move(vars), std::move(cards), std::move(values));
}

Factor Factor::sum_out(std::size_t var) const {
    auto it = std::find(vars_.begin(), vars_.end(), var);
    if (it == vars_.end()) return *this;
    std::size_t p = static_cast<std::size_t>(it - vars_.begin());
    std::size_t card = cards_[p];
    std::size_t inner = 1;
    for (std::size_t d = p + 1; d < cards_.size(); ++d) inner *= cards_[d];
    std::size_t outer = values_.size() / (card * inner);
    std::vector<double> values(outer * inner, 0.0);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t k = 0; k < card; ++k) {
            const double* src = &values_[(o * card + k) * inner];
            double* dst = &values[o * inner];
            for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
    }
    std::vector<std::size_t> vars = vars_, cards = cards_;
    vars.erase(vars.begin() + static_cast<std::ptrdiff_t>(p));
    cards.erase(cards.begin() + static_cast<std::ptrdiff_t>(p));
    return Factor(std::move(vars), std::move(cards), std::move(values));
}

Factor Factor::reduce(std::size_t var, std::size_t state) const {
    auto it = std::find(vars_.begin(), vars_.end(), var);
    if (it == vars_.end()) return *this;
    std::size_t p = static_cast<std::size_t>(it - vars_.begin());
    std::size_t card = cards_[p];
    std::size_t inner = 1;
    for (std::size_t d = p + 1; d < cards_.size(); ++d) inner *= cards_[d];
    std::size_t outer = values_.size() / (card * inner);
    std::vector<double> values(outer * inner);
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(&values_[(o * card + state) * inner], inner, &values[o * inner]);
    }
    std::vector<std::size_t> vars = vars_, cards = cards_;
    vars.erase(vars.begin() + static_cast<std::ptrdiff_t>(p));
    cards.erase(cards.begin() + static_cast<std::ptrdiff_t>(p));
    return Factor(std::move(vars), std::move(cards), std::move(values));
}

double Factor::total() const { return std::accumulate(values_.begin(), values_.end(), 0.0); }

double Factor::at(const std::map<std::size_t, std::size_t>& assignment) const {
    auto st = strides_for(cards_);
    std::size_t idx = 0;
    for (std::size_t d = 0; d < vars_.size(); ++d) idx += assignment.at(vars_[d]) * st[d];
    return values_[idx];
}

JointQuery infer_joint(const BayesNet& net, const Evidence& evidence, const std::vector<std::size_t>& targets) {
    validate_evidence(net, evidence);
    std::set<std::size_t> target_set;
    for (auto t : targets) {
        if (t >= net.size()) throw ValidationError("query on unknown variable index " + std::to_string(t));
        target_set.insert(t);
    }

    // Only ancestors of targets and evidence influence the query.
    std::vector<bool> relevant(net.size(), false);
    std::vector<std::size_t> stack(target_set.begin(), target_set.end());
    for (const auto& [v, s] : evidence) stack.push_back(v);
    while (!stack.empty()) {
        auto v = stack.back();
        stack.pop_back();
        if (relevant[v]) continue;
        relevant[v] = true;
        for (auto p : net.parents(v)) stack.push_back(p);
    }

    std::vector<Factor> factors;
    for (auto v : net.topological_order()) {
        if (!relevant[v]) continue;
        Factor f = family_factor(net, v);
        for (const auto& [ev, state] : evidence) {
            if (!target_set.count(ev)) f = f.reduce(ev, state);
        }
        factors.push_back(std::move(f));
    }
    for (auto t : target_set) {
        auto it = evidence.find(t);
        if (it == evidence.end()) continue;
        std::vector<double> ind(net.variable(t).cardinality(), 0.0);
        ind[it->second] = 1.0;
        factors.emplace_back(std::vector<std::size_t>{t}, std::vector<std::size_t>{net.variable(t).cardinality()},
                             std::move(ind));
    }

    std::set<std::size_t> to_eliminate;
    for (std::size_t v = 0; v < net.size(); ++v) {
        if (relevant[v] && !target_set.count(v) && !evidence.count(v)) to_eliminate.insert(v);
    }

    while (!to_eliminate.empty()) {
        // Min-fill choice, ties broken by variable id.
        std::size_t best = 0;
        std::size_t best_fill = std::numeric_limits<std::size_t>::max();
        for (auto v : to_eliminate) {
            std::set<std::size_t> nbrs;
            for (const auto& f : factors) {
                if (std::binary_search(f.vars().begin(), f.vars().end(), v)) nbrs.insert(f.vars().begin(), f.vars().end());
            }
            nbrs.erase(v);
            std::vector<std::size_t> nb(nbrs.begin(), nbrs.end());
            std::size_t fill = 0;
            for (std::size_t a = 0; a < nb.size(); ++a) {
                for (std::size_t b = a + 1; b < nb.size(); ++b) {
                    bool adjacent = std::any_of(factors.begin(), factors.end(), [&](const Factor& f) {
                        return std::binary_search(f.vars().begin(), f.vars().end(), nb[a]) &&
                               std::binary_search(f.vars().begin(), f.vars().end(), nb[b]);
                    });
                    if (!adjacent) ++fill;
                }
            }
            if (fill < best_fill || (fill == best_fill && net.variable(v).id < net.variable(best).id)) {
                best = v;
                best_fill = fill;
            }
        }
        to_eliminate.erase(best);

        Factor product({}, {}, {1.0});
        std::vector<Factor> rest;
        for (auto& f : factors) {
            if (std::binary_search(f.vars().begin(), f.vars().end(), best)) {
                product = product.multiply(f);
            } else {
                rest.push_back(std::move(f));
            }
        }
        rest.push_back(product.sum_out(best));
        factors = std::move(rest);
    }

    Factor joint({}, {}, {1.0});
    for (const auto& f : factors) joint = joint.multiply(f);
    double z = joint.total();
    if (!(z > 0.0) || !std::isfinite(z)) throw InconsistentEvidence("evidence has zero probability under the network");
    for (double& x : joint.values()) x /= z;
    return {std::move(joint), z};
}

std::vector<std::vector<double>> infer_marginals(const BayesNet& net, const Evidence& evidence,
                                                 const std::vector<std::size_t>& targets) {
    std::vector<std::vector<double>> out;
    out.reserve(targets.size());
    for (auto t : targets) out.push_back(infer_joint(net, evidence, {t}).posterior.values());
    return out;
}

double evidence_probability(const BayesNet& net, const Evidence& evidence) {
    return infer_joint(net, evidence, {}).evidence_probability;
}

double skill_entropy(const BayesNet& net, const Evidence& evidence, double log_base) {
    const double scale = std::log(log_base);
    double h = 0.0;
    for (const auto& dist : infer_marginals(net, evidence, net.skills())) {
        for (double p : dist) {
            if (p > 0.0) h -= p * std::log(p) / scale;
        }
    }
    return h;
}

double expected_entropy(const BayesNet& net, const Evidence& evidence, std::size_t question, double log_base) {
    if (question >= net.size()) throw ValidationError("unknown question index");
    if (evidence.count(question)) {
        throw ValidationError("question '" + net.variable(question).id + "' is already answered");
    }
    auto outcome = infer_joint(net, evidence, {question}).posterior.values();
    double eh = 0.0;
    Evidence extended = evidence;
    for (std::size_t x = 0; x < outcome.size(); ++x) {
        if (outcome[x] <= 0.0) continue;
        extended[question] = x;
        eh += outcome[x] * skill_entropy(net, extended, log_base);
    }
    return eh;
}

double information_gain(const BayesNet& net, const Evidence& evidence, std::size_t question, double log_base) {
    return skill_entropy(net, evidence, log_base) - expected_entropy(net, evidence, question, log_base);
}

std::size_t select_max_info_gain(const BayesNet& net, const Evidence& evidence,
                                 const std::vector<std::size_t>& candidates, double log_base) {
    if (candidates.empty()) throw ValidationError("select_max_info_gain: no candidates");
    const double h = skill_entropy(net, evidence, log_base);
    std::size_t best = candidates.front();
    double best_gain = -std::numeric_limits<double>::infinity();
    for (auto q : candidates) {
        double gain = h - expected_entropy(net, evidence, q, log_base);
        if (gain > best_gain + 1e-12) {
            best_gain = gain;
            best = q;
        }
    }
    return best;
}

SkillWeights equal_weights(const BayesNet& net, double c) {
    SkillWeights w;
    for (auto s : net.skills()) w.weights[net.variable(s).id] = c;
    return w;
}

std::vector<double> equal_impact_weights(const std::vector<std::size_t>& state_counts, double c) {
    if (state_counts.empty()) return {};
    std::size_t n_max = *std::max_element(state_counts.begin(), state_counts.end());
    std::vector<double> out;
    for (auto n : state_counts) {
        if (n == 0) throw ValidationError("equal_impact_weights: skill with no states");
        out.push_back(static_cast<double>(n_max) / static_cast<double>(n) * c);
    }
    return out;
}

SkillWeights equal_impact_weights(const BayesNet& net, double c) {
    auto skills = net.skills();
    std::vector<std::size_t> counts;
    for (auto s : skills) counts.push_back(net.variable(s).cardinality());
    auto ws = equal_impact_weights(counts, c);
    SkillWeights w;
    for (std::size_t i = 0; i < skills.size(); ++i) w.weights[net.variable(skills[i]).id] = ws[i];
    return w;
}

double expected_score(const BayesNet& net, const Evidence& evidence, const SkillWeights& weights) {
    auto skills = net.skills();
    auto marginals = infer_marginals(net, evidence, skills);
    double total = 0.0;
    for (std::size_t i = 0; i < skills.size(); ++i) {
        const auto& var = net.variable(skills[i]);
        auto it = weights.weights.find(var.id);
        if (it == weights.weights.end()) continue;
        for (std::size_t j = 0; j < marginals[i].size(); ++j) total += marginals[i][j] * var.value_of(j) * it->second;
    }
    return total;
}

double score_max(const BayesNet& net, const SkillWeights& weights) {
    double total = 0.0;
    for (auto s : net.skills()) {
        const auto& var = net.variable(s);
        auto it = weights.weights.find(var.id);
        if (it != weights.weights.end()) total += var.value_of(var.cardinality() - 1) * it->second;
    }
    return total;
}

double score_min(const BayesNet& net, const SkillWeights& weights) {
    double total = 0.0;
    for (auto s : net.skills()) {
        const auto& var = net.variable(s);
        auto it = weights.weights.find(var.id);
        if (it != weights.weights.end()) total += var.value_of(0) * it->second;
    }
    return total;
}

std::vector<OrdinalityViolation> check_ordinality(const BayesNet& net) {
    std::vector<OrdinalityViolation> out;
    for (auto q : net.questions()) {
        const CptNode& cpt = net.cpt(q);
        const std::size_t card = net.variable(q).cardinality();
        for (std::size_t axis = 0; axis < cpt.parents.size(); ++axis) {
            const auto& parent = net.variable(cpt.parents[axis]);
            if (!parent.ordinal) continue;
            for_each_axis_slice(net, cpt, axis, [&](const std::vector<std::size_t>& assign, const std::vector<std::size_t>& rows) {
                std::vector<double> probs;
                for (auto r : rows) probs.push_back(cpt.table[r * card + card - 1]);
                if (!is_non_decreasing(probs)) {
                    out.push_back({net.variable(q).id, parent.id, describe_config(net, cpt.parents, assign, axis), probs});
                }
            });
        }
    }
    return out;
}

BayesNet repair_ordinality(const BayesNet& net) {
    std::vector<NodeModel> nodes = net.nodes();
    for (auto q : net.questions()) {
        auto* cpt = std::get_if<CptNode>(&nodes[q]);
        if (!cpt) continue;
        const std::size_t card = net.variable(q).cardinality();
        for (int sweep = 0; sweep < 100; ++sweep) {
            bool changed = false;
            for (std::size_t axis = 0; axis < cpt->parents.size(); ++axis) {
                if (!net.variable(cpt->parents[axis]).ordinal) continue;
                for_each_axis_slice(net, *cpt, axis, [&](const std::vector<std::size_t>&, const std::vector<std::size_t>& rows) {
                    std::vector<double> probs;
                    for (auto r : rows) probs.push_back(cpt->table[r * card + card - 1]);
                    if (is_non_decreasing(probs)) return;
                    changed = true;
                    auto fitted = isotonic_fit(probs);
                    for (std::size_t j = 0; j < rows.size(); ++j) {
                        double* row = &cpt->table[rows[j] * card];
                        double old_rest = 1.0 - probs[j];
                        double new_rest = 1.0 - fitted[j];
                        for (std::size_t s = 0; s + 1 < card; ++s) {
                            row[s] = old_rest > 0.0 ? row[s] * new_rest / old_rest : new_rest / static_cast<double>(card - 1);
                        }
                        row[card - 1] = fitted[j];
                    }
                });
            }
            if (!changed) break;
        }
    }
    return BayesNet(net.variables(), std::move(nodes));
}

std::vector<Evidence> dataset_evidence(const BayesNet& net, const ResponseDataset& dataset) {
    struct Source {
        std::size_t var;
        bool from_item;
        std::size_t column;  // item column or info name index
    };
    std::vector<Source> sources;
    for (std::size_t v = 0; v < net.size(); ++v) {
        const auto& var = net.variable(v);
        if (auto col = dataset.column_of(var.id)) {
            sources.push_back({v, true, *col});
            continue;
        }
        auto it = std::find(dataset.info_names.begin(), dataset.info_names.end(), var.id);
        if (it != dataset.info_names.end()) {
            sources.push_back({v, false, static_cast<std::size_t>(it - dataset.info_names.begin())});
            continue;
        }
        if (var.role == Role::question) {
            throw ValidationError("question variable '" + var.id + "' has no dataset column");
        }
    }

    std::vector<Evidence> out;
    out.reserve(dataset.students.size());
    for (const auto& rec : dataset.students) {
        Evidence e;
        for (const auto& src : sources) {
            const auto& var = net.variable(src.var);
            if (src.from_item) {
                const auto& g = rec.grades[src.column];
                if (!g) continue;
                if (static_cast<std::size_t>(*g) >= var.cardinality()) {
                    throw ValidationError("student '" + rec.id + "': grade " + std::to_string(*g) + " has no state in variable '" +
                                          var.id + "'");
                }
                e[src.var] = static_cast<std::size_t>(*g);
            } else {
                const std::string& label = rec.info.at(dataset.info_names[src.column]);
                auto state = var.state_index(label);
                if (!state) {
                    if (label == kUnknown) continue;
                    throw ValidationError("student '" + rec.id + "': value '" + label + "' is not a state of '" + var.id + "'");
                }
                e[src.var] = *state;
            }
        }
        out.push_back(std::move(e));
    }
    return out;
}

EmResult learn_em(const BayesNet& initial, const ResponseDataset& dataset, const EmConfig& config) {
    return learn_em(initial, dataset_evidence(initial, dataset), config);
}

EmResult learn_em(const BayesNet& initial, const std::vector<Evidence>& records, const EmConfig& config) {
    if (records.empty()) throw ValidationError("learn_em: empty dataset");
    if (config.pseudocount < 0.0) throw ValidationError("learn_em: negative pseudocount");

    std::map<Evidence, double> patterns;
    for (const auto& e : records) {
        validate_evidence(initial, e);
        patterns[e] += 1.0;
    }
    const double n_records = static_cast<double>(records.size());
    const double eps = config.pseudocount;

    EmResult result;
    BayesNet net = initial;
    const std::size_t n_vars = net.size();

    struct Stats {
        std::vector<double> counts;  // CPT expected counts, table layout
        std::vector<double> z_on;    // noisy-OR: expected Z_i = 1
        std::vector<double> x_on;    // noisy-OR: expected X_i = 1
        double z_leak = 0.0;
    };

    auto log_prior = [&](const BayesNet& model) {
        if (eps == 0.0) return 0.0;
        double lp = 0.0;
        for (std::size_t v = 0; v < n_vars; ++v) {
            if (const auto* no = std::get_if<NoisyOrNode>(&model.node(v))) {
                for (double l : no->link_probs) lp += eps * (safe_log(l) + safe_log(1.0 - l));
                lp += eps * (safe_log(no->leak) + safe_log(1.0 - no->leak));
            } else {
                for (double x : std::get<CptNode>(model.node(v)).table) lp += eps * safe_log(x);
            }
        }
        return lp;
    };

    // E-step: expected sufficient statistics and the log-likelihood.
    auto e_step = [&](const BayesNet& model, std::vector<Stats>& stats) {
        stats.assign(n_vars, {});
        for (std::size_t v = 0; v < n_vars; ++v) {
            if (const auto* no = std::get_if<NoisyOrNode>(&model.node(v))) {
                stats[v].z_on.assign(no->parents.size(), 0.0);
                stats[v].x_on.assign(no->parents.size(), 0.0);
            } else {
                stats[v].counts.assign(std::get<CptNode>(model.node(v)).table.size(), 0.0);
            }
        }
        double ll = 0.0;
        for (const auto& [ev, mult] : patterns) {
            bool first = true;
            for (std::size_t v = 0; v < n_vars; ++v) {
                const auto& ps = model.parents(v);
                std::vector<std::size_t> family = ps;
                family.push_back(v);
                JointQuery q = infer_joint(model, ev, family);
                if (first) {
                    ll += mult * std::log(q.evidence_probability);
                    first = false;
                }
                // Walk the family posterior in (parents..., child) table order.
                std::vector<std::size_t> cards;
                for (auto u : family) cards.push_back(model.variable(u).cardinality());
                const std::size_t total = product_of(cards);
                std::vector<std::size_t> assign(family.size(), 0);
                std::map<std::size_t, std::size_t> at;
                const auto* no = std::get_if<NoisyOrNode>(&model.node(v));
                for (std::size_t t = 0; t < total; ++t) {
                    for (std::size_t f = 0; f < family.size(); ++f) at[family[f]] = assign[f];
                    double w = q.posterior.at(at) * mult;
                    if (w > 0.0) {
                        if (no) {
                            const std::size_t y = assign.back();
                            double p_off = 1.0 - no->leak;
                            for (std::size_t i = 0; i < ps.size(); ++i) {
                                if (assign[i] == 1) {
                                    p_off *= 1.0 - no->link_probs[i];
                                    stats[v].x_on[i] += w;
                                }
                            }
                            if (y == 1) {
                                const double p_on = 1.0 - p_off;
                                for (std::size_t i = 0; i < ps.size(); ++i) {
                                    if (assign[i] == 1) stats[v].z_on[i] += w * no->link_probs[i] / p_on;
                                }
                                stats[v].z_leak += w * no->leak / p_on;
                            }
                        } else {
                            stats[v].counts[t] += w;
                        }
                    }
                    for (std::size_t d = family.size(); d-- > 0;) {
                        if (++assign[d] < cards[d]) break;
                        assign[d] = 0;
                    }
                }
            }
        }
        return ll;
    };

    auto m_step = [&](const BayesNet& model, const std::vector<Stats>& stats) {
        std::vector<NodeModel> nodes = model.nodes();
        for (std::size_t v = 0; v < n_vars; ++v) {
            if (auto* no = std::get_if<NoisyOrNode>(&nodes[v])) {
                for (std::size_t i = 0; i < no->parents.size(); ++i) {
                    double den = stats[v].x_on[i] + 2.0 * eps;
                    if (den > 0.0) no->link_probs[i] = std::clamp((stats[v].z_on[i] + eps) / den, 0.0, 1.0);
                }
                double den = n_records + 2.0 * eps;
                no->leak = std::clamp((stats[v].z_leak + eps) / den, 0.0, 1.0 - 1e-12);
            } else {
                auto& cpt = std::get<CptNode>(nodes[v]);
                const std::size_t card = model.variable(v).cardinality();
                const std::size_t configs = cpt.table.size() / card;
                for (std::size_t c = 0; c < configs; ++c) {
                    double den = card * eps;
                    for (std::size_t s = 0; s < card; ++s) den += stats[v].counts[c * card + s];
                    if (!(den > 0.0)) continue;
                    for (std::size_t s = 0; s < card; ++s) {
                        cpt.table[c * card + s] = (stats[v].counts[c * card + s] + eps) / den;
                    }
                }
            }
        }
        return BayesNet(model.variables(), std::move(nodes));
    };

    std::vector<Stats> stats;
    double ll = e_step(net, stats);
    double objective = ll + log_prior(net);
    result.loglik_trace.push_back(ll);
    result.objective_trace.push_back(objective);
    for (int iter = 0; iter < config.max_iters; ++iter) {
        net = m_step(net, stats);
        ll = e_step(net, stats);
        double next = ll + log_prior(net);
        result.loglik_trace.push_back(ll);
        result.objective_trace.push_back(next);
        result.iterations = iter + 1;
        double gain = next - objective;
        objective = next;
        if (gain < config.tol) {
            result.converged = true;
            break;
        }
    }
    result.net = std::move(net);
    return result;
}

ScoreGroups discretize_scores(const std::vector<double>& scores, std::size_t n_groups) {
    if (n_groups < 2) throw ValidationError("discretize: need at least two groups");
    std::vector<double> sorted = scores;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    // positions j where a boundary between sorted[j-1] and sorted[j] is possible
    std::vector<std::size_t> cuts;
    for (std::size_t j = 1; j < n; ++j) {
        if (sorted[j - 1] < sorted[j]) cuts.push_back(j);
    }
    if (cuts.size() + 1 < n_groups) {
        throw ValidationError("discretize: " + std::to_string(cuts.size() + 1) + " distinct scores cannot form " +
                              std::to_string(n_groups) + " groups");
    }

    ScoreGroups groups;
    std::size_t next_cut = 0;  // first admissible index into `cuts`
    for (std::size_t k = 1; k < n_groups; ++k) {
        const double target = static_cast<double>(k) * static_cast<double>(n) / static_cast<double>(n_groups);
        const std::size_t last_allowed = cuts.size() - (n_groups - 1 - k) - 1;
        std::size_t best = next_cut;
        for (std::size_t c = next_cut; c <= last_allowed; ++c) {
            if (std::abs(static_cast<double>(cuts[c]) - target) < std::abs(static_cast<double>(cuts[best]) - target)) best = c;
        }
        std::size_t j = cuts[best];
        groups.boundaries.push_back((sorted[j - 1] + sorted[j]) / 2.0);
        next_cut = best + 1;
    }

    groups.sizes.assign(n_groups, 0);
    for (double s : scores) {
        auto g = static_cast<std::size_t>(std::upper_bound(groups.boundaries.begin(), groups.boundaries.end(), s) -
                                          groups.boundaries.begin());
        groups.labels.push_back(g);
        ++groups.sizes[g];
    }
    return groups;
}

ScoreGroups discretize_observed_score(const ResponseDataset& dataset, std::size_t n_groups) {
    return discretize_scores(raw_scores(dataset), n_groups);
}

ResponseDataset with_score_group(const ResponseDataset& dataset, const ScoreGroups& groups, const std::string& name) {
    if (groups.labels.size() != dataset.students.size()) throw ValidationError("score groups do not match the dataset");
    if (std::find(dataset.info_names.begin(), dataset.info_names.end(), name) != dataset.info_names.end()) {
        throw ValidationError("dataset already has an info column '" + name + "'");
    }
    ResponseDataset out = dataset;
    out.info_names.push_back(name);
    for (std::size_t s = 0; s < out.students.size(); ++s) out.students[s].info[name] = std::to_string(groups.labels[s]);
    return out;
}

}  // namespace adaptest::bn
