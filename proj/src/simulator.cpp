#include "adaptest/simulator.hpp"

#include "adaptest/error.hpp"
#include "adaptest/psychometrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <thread>

namespace adaptest::sim {

namespace {

std::optional<double> safe_pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() < 3) return std::nullopt;
    try {
        return psychometrics::pearson_correlation(x, y).r;
    } catch (const UndefinedStatistic&) {
        return std::nullopt;
    }
}

std::optional<double> safe_spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() < 3) return std::nullopt;
    try {
        return psychometrics::spearman_correlation(x, y);
    } catch (const UndefinedStatistic&) {
        return std::nullopt;
    }
}

// Runs fn(i) for i in [0, n) on up to `threads` workers.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn fn) {
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (unsigned t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (std::size_t i = t; i < n; i += threads) fn(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

struct Run {
    std::size_t asked = 0;
    double final_estimate = 0.0;
    std::vector<double> estimates;  // after each step
    std::vector<double> accuracy;   // after each step, when remaining is non-empty
};

Run run_examinee(const ModelFactory& factory, const std::shared_ptr<const QuestionBank>& bank,
                 const std::vector<std::size_t>& responses, const cat::StoppingRule& stopping, Policy policy,
                 std::uint64_t seed, bool track) {
    std::unique_ptr<cat::SelectionStrategy> strategy;
    switch (policy) {
        case Policy::adaptive: strategy = std::make_unique<cat::GreedyStrategy>(); break;
        case Policy::random_order: strategy = std::make_unique<cat::RandomOrderStrategy>(bank->size(), seed); break;
        case Policy::fixed_order: strategy = std::make_unique<cat::FixedOrderStrategy>(); break;
    }
    cat::TestSession session(bank, factory(), stopping, std::move(strategy));
    Run run;
    while (true) {
        cat::NextStep next = session.next_question();
        if (!next.question) {
            session.mark_finished(next.stop_reason);
            break;
        }
        auto est = session.submit_answer(*next.question, responses.at(*next.question));
        run.estimates.push_back(est.value);
        if (track && !session.remaining().empty()) {
            const auto& rem = session.remaining();
            auto dists = session.model().predict_answers(rem);
            std::size_t hits = 0;
            for (std::size_t k = 0; k < rem.size(); ++k) {
                auto guess = static_cast<std::size_t>(std::max_element(dists[k].begin(), dists[k].end()) - dists[k].begin());
                if (guess == responses[rem[k]]) ++hits;
            }
            run.accuracy.push_back(static_cast<double>(hits) / static_cast<double>(rem.size()));
        }
    }
    run.asked = session.asked_count();
    run.final_estimate = session.estimate().value;
    return run;
}

}  // namespace

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t state = seed ^ splitmix64(index);
    return splitmix64(state);
}

IrtCohort sample_irt_cohort(const std::vector<std::string>& item_ids, const std::vector<irt::ItemParams>& params,
                            std::size_t n, std::uint64_t seed, double theta_mean, double theta_sd) {
    std::vector<double> thetas(n);
    for (std::size_t s = 0; s < n; ++s) {
        std::mt19937_64 rng(sub_seed(seed, 2 * s));
        std::normal_distribution<double> normal(theta_mean, theta_sd);
        thetas[s] = normal(rng);
    }
    return sample_irt_cohort_at(item_ids, params, thetas, seed);
}

IrtCohort sample_irt_cohort_at(const std::vector<std::string>& item_ids, const std::vector<irt::ItemParams>& params,
                               const std::vector<double>& thetas, std::uint64_t seed) {
    if (item_ids.size() != params.size()) throw ValidationError("item ids and parameters differ in length");
    if (thetas.empty()) throw ValidationError("cohort size must be at least 1");
    IrtCohort out;
    out.thetas = thetas;
    out.data.mode = GradeMode::boolean;
    out.data.item_ids = item_ids;
    out.data.grade_points.assign(item_ids.size(), 1);
    const int width = static_cast<int>(std::to_string(thetas.size()).size());
    for (std::size_t s = 0; s < thetas.size(); ++s) {
        std::mt19937_64 rng(sub_seed(seed, 2 * s + 1));
        std::uniform_real_distribution<double> u(0.0, 1.0);
        StudentRecord rec;
        std::string num = std::to_string(s + 1);
        rec.id = "s" + std::string(static_cast<std::size_t>(width) - num.size(), '0') + num;
        for (const auto& p : params) rec.grades.push_back(u(rng) < irt::irf(p, thetas[s]) ? 1 : 0);
        out.data.students.push_back(std::move(rec));
    }
    return out;
}

std::vector<std::size_t> sample_bn_record(const bn::BayesNet& net, std::mt19937_64& rng) {
    std::vector<std::size_t> state(net.size(), 0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto v : net.topological_order()) {
        const auto& cpt = net.cpt(v);
        std::size_t config = 0;
        for (auto p : cpt.parents) config = config * net.variable(p).cardinality() + state[p];
        const std::size_t card = net.variable(v).cardinality();
        double r = u(rng);
        std::size_t s = 0;
        double acc = cpt.table[config * card];
        while (r >= acc && s + 1 < card) {
            ++s;
            acc += cpt.table[config * card + s];
        }
        state[v] = s;
    }
    return state;
}

BnCohort sample_bn_cohort(const bn::BayesNet& net, std::size_t n, std::uint64_t seed) {
    if (n == 0) throw ValidationError("cohort size must be at least 1");
    BnCohort out;
    out.data.mode = GradeMode::numeric;
    auto questions = net.questions();
    auto infos = net.with_role(bn::Role::information);
    for (auto q : questions) {
        out.data.item_ids.push_back(net.variable(q).id);
        out.data.grade_points.push_back(static_cast<int>(net.variable(q).cardinality()) - 1);
    }
    for (auto i : infos) out.data.info_names.push_back(net.variable(i).id);
    const int width = static_cast<int>(std::to_string(n).size());
    for (std::size_t s = 0; s < n; ++s) {
        std::mt19937_64 rng(sub_seed(seed, s));
        auto state = sample_bn_record(net, rng);
        StudentRecord rec;
        std::string num = std::to_string(s + 1);
        rec.id = "s" + std::string(static_cast<std::size_t>(width) - num.size(), '0') + num;
        for (auto q : questions) rec.grades.push_back(static_cast<int>(state[q]));
        for (auto i : infos) rec.info[net.variable(i).id] = net.variable(i).states[state[i]];
        out.data.students.push_back(std::move(rec));
        out.truths.push_back(std::move(state));
    }
    return out;
}

Cohort irt_examinees(const QuestionBank& bank, const irt::IrtModel& model, std::size_t n, std::uint64_t seed) {
    std::vector<irt::ItemParams> params;
    std::vector<std::string> ids;
    for (const auto& item : bank.items()) {
        auto it = std::find(model.item_ids.begin(), model.item_ids.end(), item.id);
        if (it == model.item_ids.end()) throw ValidationError("IRT model has no parameters for item '" + item.id + "'");
        params.push_back(model.params[static_cast<std::size_t>(it - model.item_ids.begin())]);
        ids.push_back(item.id);
    }
    auto cohort = sample_irt_cohort(ids, params, n, seed, model.grid.prior_mean(), model.grid.prior_sd());
    Cohort out;
    out.truths = cohort.thetas;
    for (const auto& rec : cohort.data.students) {
        std::vector<std::size_t> resp;
        for (std::size_t q = 0; q < bank.size(); ++q) resp.push_back(*rec.grades[q] ? bank.item(q).state_count() - 1 : 0);
        out.responses.push_back(std::move(resp));
    }
    return out;
}

Cohort bn_examinees(const QuestionBank& bank, const bn::BayesNet& net, const bn::SkillWeights& weights, std::size_t n,
                    std::uint64_t seed) {
    std::vector<std::size_t> vars;
    for (const auto& item : bank.items()) vars.push_back(net.require(item.id));
    Cohort out;
    for (std::size_t s = 0; s < n; ++s) {
        std::mt19937_64 rng(sub_seed(seed, s));
        auto state = sample_bn_record(net, rng);
        std::vector<std::size_t> resp;
        for (auto v : vars) resp.push_back(state[v]);
        double truth = 0.0;
        for (auto k : net.skills()) {
            const auto& var = net.variable(k);
            auto w = weights.weights.find(var.id);
            if (w != weights.weights.end()) truth += var.value_of(state[k]) * w->second;
        }
        out.responses.push_back(std::move(resp));
        out.truths.push_back(truth);
    }
    return out;
}

Cohort dataset_examinees(const QuestionBank& bank, const ResponseDataset& dataset) {
    Cohort out;
    std::vector<std::optional<std::size_t>> column;
    for (const auto& item : bank.items()) column.push_back(dataset.column_of(item.id));
    for (const auto& rec : dataset.students) {
        std::vector<std::size_t> resp;
        for (std::size_t q = 0; q < bank.size(); ++q) {
            const Item& item = bank.item(q);
            std::size_t state = 0;
            if (column[q] && rec.grades[*column[q]]) {
                int g = *rec.grades[*column[q]];
                if (dataset.mode == GradeMode::boolean) {
                    state = g ? item.state_count() - 1 : 0;
                } else {
                    for (std::size_t s = 0; s < item.state_count(); ++s) {
                        if (item.points_for(s) == g) state = s;
                    }
                }
            }
            resp.push_back(state);
        }
        out.responses.push_back(std::move(resp));
        out.truths.push_back(raw_score(rec));
    }
    return out;
}

std::string to_string(Policy p) {
    switch (p) {
        case Policy::adaptive: return "adaptive";
        case Policy::random_order: return "random";
        case Policy::fixed_order: return "fixed";
    }
    return "adaptive";
}

Policy policy_from_string(const std::string& s) {
    if (s == "adaptive") return Policy::adaptive;
    if (s == "random" || s == "random_order") return Policy::random_order;
    if (s == "fixed" || s == "fixed_order") return Policy::fixed_order;
    throw ValidationError("unknown policy '" + s + "'");
}

Quartiles quartiles(std::vector<double> values) {
    if (values.empty()) throw ValidationError("quartiles of an empty sample");
    std::sort(values.begin(), values.end());
    auto q = [&](double f) {
        double pos = f * static_cast<double>(values.size() - 1);
        auto lo = static_cast<std::size_t>(std::floor(pos));
        auto hi = std::min(lo + 1, values.size() - 1);
        return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
    };
    Quartiles out;
    out.min = values.front();
    out.max = values.back();
    out.q1 = q(0.25);
    out.median = q(0.5);
    out.q3 = q(0.75);
    out.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    return out;
}

const PolicyReport* EvaluationReport::find(Policy p) const {
    for (const auto& r : policies) {
        if (r.policy == p) return &r;
    }
    return nullptr;
}

std::optional<double> EvaluationReport::median_ratio(Policy a, Policy b) const {
    const auto* ra = find(a);
    const auto* rb = find(b);
    if (!ra || !rb || rb->stop_quartiles.median == 0.0) return std::nullopt;
    return ra->stop_quartiles.median / rb->stop_quartiles.median;
}

EvaluationReport compare_policies(const ModelFactory& factory, std::shared_ptr<const QuestionBank> bank,
                                  const Cohort& cohort, const cat::StoppingRule& stopping,
                                  const std::vector<Policy>& policies, std::uint64_t seed,
                                  const SimulationOptions& options) {
    if (cohort.responses.size() != cohort.truths.size()) throw ValidationError("cohort responses and truths differ in length");
    if (cohort.responses.empty()) throw ValidationError("cohort is empty");
    EvaluationReport report;
    report.seed = seed;
    report.examinees = cohort.responses.size();
    report.bank_size = bank->size();
    for (auto policy : policies) {
        std::vector<Run> runs(cohort.responses.size());
        parallel_for(runs.size(), options.threads, [&](std::size_t e) {
            runs[e] = run_examinee(factory, bank, cohort.responses[e], stopping, policy, sub_seed(seed, e),
                                   options.track_predictions);
        });

        PolicyReport pr;
        pr.policy = policy;
        std::vector<double> counts;
        for (const auto& r : runs) {
            pr.questions_to_stop.push_back(r.asked);
            pr.final_estimates.push_back(r.final_estimate);
            counts.push_back(static_cast<double>(r.asked));
        }
        pr.stop_quartiles = quartiles(counts);
        pr.truth_pearson = safe_pearson(pr.final_estimates, cohort.truths);
        pr.truth_spearman = safe_spearman(pr.final_estimates, cohort.truths);

        std::size_t max_steps = 0;
        for (const auto& r : runs) max_steps = std::max(max_steps, r.estimates.size());
        for (std::size_t k = 0; k < max_steps; ++k) {
            std::vector<double> est, truth;
            double acc_sum = 0.0;
            std::size_t acc_n = 0;
            for (std::size_t e = 0; e < runs.size(); ++e) {
                if (k < runs[e].estimates.size()) {
                    est.push_back(runs[e].estimates[k]);
                    truth.push_back(cohort.truths[e]);
                }
                if (k < runs[e].accuracy.size()) {
                    acc_sum += runs[e].accuracy[k];
                    ++acc_n;
                }
            }
            pr.spearman_by_step.push_back(safe_spearman(est, truth));
            if (acc_n) pr.accuracy_by_step.push_back(acc_sum / static_cast<double>(acc_n));
        }
        report.policies.push_back(std::move(pr));
    }
    return report;
}

std::vector<double> prediction_accuracy_curve(const ModelFactory& factory, std::shared_ptr<const QuestionBank> bank,
                                              const Cohort& cohort, std::uint64_t seed, unsigned threads) {
    auto report = compare_policies(factory, std::move(bank), cohort, {}, {Policy::adaptive}, seed, {true, threads});
    return report.policies.front().accuracy_by_step;
}

nlohmann::json report_to_json(const EvaluationReport& report) {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    nlohmann::json doc;
    doc["seed"] = report.seed;
    doc["examinees"] = report.examinees;
    doc["bank_size"] = report.bank_size;
    doc["policies"] = nlohmann::json::array();
    for (const auto& p : report.policies) {
        nlohmann::json j;
        j["policy"] = to_string(p.policy);
        j["questions_to_stop"] = {{"min", p.stop_quartiles.min},       {"q1", p.stop_quartiles.q1},
                                  {"median", p.stop_quartiles.median}, {"q3", p.stop_quartiles.q3},
                                  {"max", p.stop_quartiles.max},       {"mean", p.stop_quartiles.mean}};
        j["truth_pearson"] = opt(p.truth_pearson);
        j["truth_spearman"] = opt(p.truth_spearman);
        j["accuracy_by_step"] = p.accuracy_by_step;
        nlohmann::json sp = nlohmann::json::array();
        for (const auto& s : p.spearman_by_step) sp.push_back(opt(s));
        j["spearman_by_step"] = sp;
        doc["policies"].push_back(j);
    }
    if (auto r = report.median_ratio(Policy::adaptive, Policy::random_order)) doc["adaptive_to_random_median_ratio"] = *r;
    return doc;
}

void write_series_csv(std::ostream& out, const EvaluationReport& report) {
    out << "policy,step,accuracy,spearman\n";
    for (const auto& p : report.policies) {
        std::size_t steps = std::max(p.accuracy_by_step.size(), p.spearman_by_step.size());
        for (std::size_t k = 0; k < steps; ++k) {
            out << to_string(p.policy) << "," << k + 1 << ",";
            if (k < p.accuracy_by_step.size()) out << p.accuracy_by_step[k];
            out << ",";
            if (k < p.spearman_by_step.size() && p.spearman_by_step[k]) out << *p.spearman_by_step[k];
            out << "\n";
        }
    }
}

}  // namespace adaptest::sim
