// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <boost/math/distributions/normal.hpp>

#include "adaptest/bayesnet.hpp"
#include "adaptest/engine.hpp"
#include "adaptest/irt.hpp"
#include "adaptest/neuralnet.hpp"
#include "adaptest/persistence.hpp"
#include "adaptest/psychometrics.hpp"
#include "adaptest/service.hpp"
#include "adaptest/simulator.hpp"
#include "test_support.hpp"

using namespace adaptest;
using nlohmann::json;

namespace {

// Collects failed checks; the first few are reported.
class Check {
public:
    void that(bool ok, const std::string& what) {
        ++count_;
        if (!ok) failures_.push_back(what);
    }
    void near(double got, double want, double tol, const std::string& what) {
        bool ok = std::abs(got - want) <= tol;
        if (!ok) {
            std::ostringstream ss;
            ss << std::setprecision(12) << what << ": got " << got << ", want " << want << " +- " << tol;
            that(false, ss.str());
        } else {
            that(true, what);
        }
    }
    void note(const std::string& s) { notes_.push_back(s); }

    bool passed() const { return failures_.empty(); }
    std::string summary() const {
        std::ostringstream ss;
        ss << count_ << " checks";
        for (const auto& n : notes_) ss << "; " << n;
        for (std::size_t i = 0; i < failures_.size() && i < 3; ++i) ss << "; FAILED " << failures_[i];
        if (failures_.size() > 3) ss << "; +" << failures_.size() - 3 << " more";
        return ss.str();
    }

private:
    std::size_t count_ = 0;
    std::vector<std::string> failures_;
    std::vector<std::string> notes_;
};

struct Criterion {
    std::string name;
    double budget_seconds;
    std::function<void(Check&)> body;
};

// ---- formula suite ----

psychometrics::ScoreStats unit_stats() { return {0.0, 1.0, 10}; }

ResponseDataset matrix_dataset(const std::vector<std::vector<int>>& rows) {
    ResponseDataset ds;
    for (std::size_t i = 0; i < rows.at(0).size(); ++i) {
        ds.item_ids.push_back("i" + std::to_string(i));
        ds.grade_points.push_back(10);
    }
    for (std::size_t s = 0; s < rows.size(); ++s) {
        std::vector<std::optional<int>> g(rows[s].begin(), rows[s].end());
        ds.students.push_back({"s" + std::to_string(s), g, {}});
    }
    return ds;
}

double sample_variance(const std::vector<double>& v) {
    double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return ss / static_cast<double>(v.size() - 1);
}

void formula_suite(Check& c) {
    using namespace irt;
    // irf
    c.that(irf({1.7, 0.3, 0.0}, 0.3) == 0.5, "irf theta=b c=0");
    for (double t = -4; t <= 4; t += 0.5) c.that(irf({0.0, 1.5, 0.0}, t) == 0.5, "irf flat a=0");
    c.near(irf({1.7, 0.3, 0.2}, 0.3), 0.6, 1e-15, "irf theta=b c=0.2");
    // derivative and information
    std::mt19937_64 rng(1);
    for (const auto& p : testsupport::random_items(rng, 20, 0.3, 3.0, 0.15)) {
        for (int k = 0; k <= 20; ++k) {
            double t = -4.0 + 0.4 * k;
            double fd = (irf(p, t + 1e-5) - irf(p, t - 1e-5)) / 2e-5;
            double an = irf_derivative(p, t);
            c.that(std::abs(an - fd) <= 1e-6 * std::max(std::abs(fd), 1e-3), "irf derivative vs finite difference");
        }
    }
    for (double a : {0.5, 1.0, 2.0, 3.3}) {
        c.near(item_information({a, 0.4, 0.0}, 0.4).value, a * a / 4, 1e-12, "information a^2/4");
        double fd = (irf({a, 0.4, 0.0}, 0.4 + 1e-5) - irf({a, 0.4, 0.0}, 0.4 - 1e-5)) / 2e-5;
        c.near(fd * fd / 0.25, a * a / 4, 1e-8, "information via finite difference");
    }
    for (double t : {-3.0, 0.0, 2.0}) c.that(item_information({0.0, 1.0, 0.2}, t).value == 0.0, "information a=0");
    // standard error
    c.that(standard_error(4.0) == 0.5, "se(4)");
    c.that(standard_error(1.0) == 1.0, "se(1)");
    c.near(standard_error(item_information({2.0, 0.0, 0.0}, 0.0).value), 1.0, 1e-12, "se of a=2 peak");
    // cronbach alpha
    c.near(psychometrics::cronbach_alpha(matrix_dataset({{1, 1}, {3, 3}, {7, 7}, {2, 2}})), 1.0, 1e-12, "alpha duplicated");
    c.near(psychometrics::cronbach_alpha(matrix_dataset({{1, 1}, {1, 0}, {0, 1}, {0, 0}})), 0.0, 1e-12, "alpha orthogonal");
    std::uniform_int_distribution<int> g(0, 10);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<std::vector<int>> rows;
        for (int s = 0; s < 12; ++s) {
            int base = g(rng);
            std::vector<int> r;
            for (int i = 0; i < 4; ++i) r.push_back(std::clamp(base + g(rng) / 3 - 1, 0, 10));
            rows.push_back(r);
        }
        double items = 0.0;
        std::vector<double> totals(rows.size(), 0.0);
        for (std::size_t i = 0; i < 4; ++i) {
            std::vector<double> col;
            for (std::size_t s = 0; s < rows.size(); ++s) {
                col.push_back(rows[s][i]);
                totals[s] += rows[s][i];
            }
            items += sample_variance(col);
        }
        double oracle = 4.0 / 3.0 * (1.0 - items / sample_variance(totals));
        c.near(psychometrics::cronbach_alpha(matrix_dataset(rows)), oracle, 1e-10, "alpha vs oracle");
    }
    // standardize
    c.that(psychometrics::standardize(42.0, {42.0, 9.0, 5}, psychometrics::iq_scale()) == 100.0, "standardize centered");
    c.that(psychometrics::standardize(42.0, {42.0, 9.0, 5}, psychometrics::z_scale()) == 0.0, "standardize centered z");
    boost::math::normal_distribution<double> nd;
    auto mc = psychometrics::mccall_normalize(std::vector<double>{10, 20, 30});
    for (int k = 0; k < 3; ++k) c.near(mc[k], boost::math::quantile(nd, (2.0 * k + 1) / 6.0), 1e-9, "mid-rank normalization");
    // skill entropy
    using namespace bn;
    Variable s1{"S1", Role::skill, {"0", "1"}, true, {}}, s2{"S2", Role::skill, {"0", "1"}, true, {}};
    BayesNet one({s1}, {CptNode{{}, {0.5, 0.5}}});
    BayesNet two({s1, s2}, {CptNode{{}, {0.5, 0.5}}, CptNode{{}, {0.5, 0.5}}});
    BayesNet sure({s1, s2}, {CptNode{{}, {0.0, 1.0}}, CptNode{{}, {1.0, 0.0}}});
    c.near(skill_entropy(one, {}), std::log(2.0), 1e-15, "entropy uniform binary");
    c.near(skill_entropy(two, {}), 2 * std::log(2.0), 1e-15, "entropy two skills");
    c.that(skill_entropy(sure, {}) == 0.0, "entropy point masses");
    for (int rep = 0; rep < 10; ++rep) {
        auto net = testsupport::random_skill_net(rng, 1 + rep % 3, 3);
        auto joint = testsupport::enumerate_joint(net);
        Evidence e{{net.questions()[0], 1}};
        c.near(skill_entropy(net, e), testsupport::brute_skill_entropy(net, joint, e), 1e-9, "entropy vs enumeration");
        for (auto q : net.questions()) {
            if (e.count(q)) continue;
            c.near(expected_entropy(net, e, q), testsupport::brute_expected_entropy(net, joint, e, q), 1e-9,
                   "expected entropy vs branches");
        }
    }
    // expected score
    BayesNet skewed({s1}, {CptNode{{}, {0.25, 0.75}}});
    c.near(expected_score(skewed, {}, equal_weights(skewed, 10.0)), 7.5, 1e-12, "expected score 7.5");
    auto w = equal_weights(sure, 4.0);
    Variable s3{"S3", Role::skill, {"0", "1", "2"}, true, {}};
    BayesNet top({s1, s3}, {CptNode{{}, {0.0, 1.0}}, CptNode{{}, {0.0, 0.0, 1.0}}});
    auto wt = equal_weights(top, 3.0);
    c.near(expected_score(top, {}, wt), score_max(top, wt), 1e-12, "expected score at top states");
    c.that(expected_score(sure, {}, w) >= score_min(sure, w) && expected_score(sure, {}, w) <= score_max(sure, w),
           "expected score within bounds");
}

// ---- reference values ----

void reference_values(Check& c) {
    for (double t = -6; t <= 6; t += 0.25) c.that(irt::irf({0.0, 1.5, 0.0}, t) == 0.5, "a=0 curve is flat at 0.5");
    auto net = testsupport::three_parent_example();
    c.near(bn::infer_marginals(net, {{0, 1}, {1, 1}, {2, 1}}, {3})[0][1], 0.95, 1e-12, "P(Y=1|1,1,1)");
    auto iq = [](double z) { return psychometrics::standardize(z, unit_stats(), psychometrics::iq_scale()); };
    c.that(std::abs(iq(2.06) - 131) <= 0.5, "z 2.06 -> IQ 131");
    c.that(std::abs(iq(-1.0) - 85) <= 0.5, "z -1.00 -> IQ 85");
    c.that(bn::equal_impact_weights(std::vector<std::size_t>{2, 4}, 1.0) == std::vector<double>{2.0, 1.0},
           "equal impact (2,4) -> (2,1)");
    c.that(irt::select_max_information(std::vector<irt::ItemParams>{{-2.0, 0.3, 0.0}, {0.0, 1.5, 0.0}, {5.0, 0.7, 0.0}}, 0.7) == 2,
           "steep demo item chosen at 0.7");
}

// ---- inference oracle ----

void inference_oracle(Check& c) {
    std::mt19937_64 rng(20240);
    double worst = 0.0;
    std::size_t noisy = 0;
    for (int rep = 0; rep < 200; ++rep) {
        std::size_t n = 4 + rep % 9;
        auto net = testsupport::random_net(rng, n, 3, 2, 0.4);
        for (std::size_t v = 0; v < n; ++v) noisy += std::holds_alternative<bn::NoisyOrNode>(net.node(v));
        auto joint = testsupport::enumerate_joint(net);
        auto e = testsupport::random_evidence(rng, net, 0.25);
        std::vector<std::size_t> all(n);
        std::iota(all.begin(), all.end(), 0);
        auto marg = bn::infer_marginals(net, e, all);
        for (std::size_t t = 0; t < n; ++t) {
            auto ref = testsupport::brute_marginal(net, joint, e, t);
            for (std::size_t s = 0; s < ref.size(); ++s) worst = std::max(worst, std::abs(marg[t][s] - ref[s]));
        }
    }
    c.that(worst <= 1e-9, "max marginal error <= 1e-9");
    c.that(noisy > 0, "noisy-OR nodes present");
    std::ostringstream ss;
    ss << "max error " << worst << ", " << noisy << " noisy-OR nodes";
    c.note(ss.str());
}

// ---- noisy-OR ----

void noisy_or_equivalence(Check& c) {
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> u(0.0, 1.0), ul(0.0, 0.5);
    double worst = 0.0;
    for (std::size_t n = 1; n <= 5; ++n) {
        for (int rep = 0; rep < 100; ++rep) {
            std::vector<double> links(n);
            for (auto& l : links) l = u(rng);
            double leak = ul(rng);
            std::vector<std::size_t> parents(n);
            std::iota(parents.begin(), parents.end(), 0);
            auto compact = bn::expand_noisy_or({parents, links, leak});
            auto big = testsupport::explicit_z_layer(links, leak);
            auto joint = testsupport::enumerate_joint(big);
            for (std::size_t cfg = 0; cfg < (std::size_t{1} << n); ++cfg) {
                bn::Evidence e;
                for (std::size_t i = 0; i < n; ++i) e[i] = (cfg >> (n - 1 - i)) & 1u;
                double ref = testsupport::brute_marginal(big, joint, e, 2 * n + 1)[1];
                worst = std::max(worst, std::abs(compact.table[2 * cfg + 1] - ref));
            }
        }
        std::vector<bn::Variable> vars;
        std::vector<bn::NodeModel> or_nodes, cpt_nodes;
        std::vector<std::size_t> parents;
        for (std::size_t i = 0; i < n; ++i) {
            vars.push_back({testsupport::pad_id("X", i), bn::Role::auxiliary, {"0", "1"}, false, {}});
            or_nodes.emplace_back(bn::CptNode{{}, {0.5, 0.5}});
            parents.push_back(i);
        }
        cpt_nodes = or_nodes;
        vars.push_back({"Y", bn::Role::auxiliary, {"0", "1"}, false, {}});
        bn::NoisyOrNode node{parents, std::vector<double>(n, 0.7), 0.05};
        or_nodes.emplace_back(node);
        cpt_nodes.emplace_back(bn::expand_noisy_or(node));
        c.that(bn::BayesNet(vars, or_nodes).stored_parameter_count(n) == n + 1, "noisy-OR stores n + 1");
        c.that(bn::BayesNet(vars, cpt_nodes).stored_parameter_count(n) == (std::size_t{1} << n), "CPT stores 2^n");
    }
    c.that(worst <= 1e-12, "expansion equals explicit inhibitor network");
    std::ostringstream ss;
    ss << "max error " << worst;
    c.note(ss.str());
}

// ---- information gain ----

void info_gain_properties(Check& c) {
    std::mt19937_64 rng(515);
    double lowest = 0.0;
    for (int rep = 0; rep < 50; ++rep) {
        auto net = testsupport::random_skill_net(rng, 1 + rep % 3, 5);
        bn::Evidence e;
        auto qs = net.questions();
        for (int k = 0; k < 1 + rep % 3; ++k) e[qs[k]] = std::uniform_int_distribution<std::size_t>(0, 1)(rng);
        for (auto q : qs) {
            if (e.count(q)) continue;
            lowest = std::min(lowest, bn::information_gain(net, e, q));
        }
    }
    c.that(lowest >= -1e-9, "IG >= -1e-9");
    auto net = testsupport::two_skill_six_question_net();
    auto joint = testsupport::enumerate_joint(net);
    // every evidence pattern over the first answered questions
    auto qs = net.questions();
    for (std::size_t mask = 0; mask < 27; ++mask) {
        bn::Evidence e;
        std::size_t m = mask;
        for (std::size_t k = 0; k < 3; ++k, m /= 3) {
            if (m % 3 < 2) e[qs[k]] = m % 3;
        }
        std::vector<std::size_t> left;
        for (auto q : qs) {
            if (!e.count(q)) left.push_back(q);
        }
        double h = testsupport::brute_skill_entropy(net, joint, e);
        double best = -1;
        std::size_t best_q = left[0];
        for (auto q : left) {
            double ig = h - testsupport::brute_expected_entropy(net, joint, e, q);
            if (ig > best + 1e-12) {
                best = ig;
                best_q = q;
            }
        }
        c.that(bn::select_max_info_gain(net, e, left) == best_q, "selection equals exhaustive argmax");
    }
    std::ostringstream ss;
    ss << "min IG " << lowest;
    c.note(ss.str());
}

// ---- EM ----

bn::BayesNet perturbed_copy(std::mt19937_64& rng, const bn::BayesNet& truth) {
    std::vector<bn::NodeModel> nodes;
    for (std::size_t v = 0; v < truth.size(); ++v) {
        nodes.emplace_back(testsupport::random_cpt(rng, truth.variables(), truth.parents(v), truth.variable(v).cardinality()));
    }
    return bn::BayesNet(truth.variables(), nodes);
}

bool non_decreasing(const std::vector<double>& trace) {
    for (std::size_t k = 1; k < trace.size(); ++k) {
        if (trace[k] < trace[k - 1] - 1e-9 * std::max(1.0, std::abs(trace[k - 1]))) return false;
    }
    return true;
}

void em_monotone_and_recovery(Check& c) {
    std::mt19937_64 rng(3030);
    for (int run = 0; run < 20; ++run) {
        auto truth = testsupport::random_skill_net(rng, 1 + run % 2, 5);
        auto data = sim::sample_bn_cohort(truth, 400, 100 + run).data;
        auto init = perturbed_copy(rng, truth);
        auto plain = bn::learn_em(init, data, {0.0, 1e-8, 60});
        c.that(non_decreasing(plain.loglik_trace), "log-likelihood non-decreasing (run " + std::to_string(run) + ")");
        auto smoothed = bn::learn_em(init, data, {0.1, 1e-8, 60});
        c.that(non_decreasing(smoothed.objective_trace), "penalized objective non-decreasing (run " + std::to_string(run) + ")");
    }
    std::vector<double> low{0.2, 0.3, 0.1, 0.25}, high{0.85, 0.9, 0.7, 0.8};
    auto build = [](const std::vector<double>& prior, const std::vector<double>& lo, const std::vector<double>& hi) {
        std::vector<bn::Variable> vars{{"S", bn::Role::skill, {"0", "1"}, true, {}}};
        std::vector<bn::NodeModel> nodes{bn::CptNode{{}, prior}};
        for (std::size_t q = 0; q < lo.size(); ++q) {
            vars.push_back({"Q" + std::to_string(q + 1), bn::Role::question, {"0", "1"}, false, {}});
            nodes.emplace_back(bn::CptNode{{0}, {1 - lo[q], lo[q], 1 - hi[q], hi[q]}});
        }
        return bn::BayesNet(vars, nodes);
    };
    auto truth = build({0.4, 0.6}, low, high);
    auto data = sim::sample_bn_cohort(truth, 5000, 11).data;
    auto res = bn::learn_em(build({0.5, 0.5}, {0.4, 0.4, 0.4, 0.4}, {0.6, 0.6, 0.6, 0.6}), data);
    double tv_same = 0, tv_swap = 0;
    for (std::size_t q = 0; q < 4; ++q) {
        const auto& t = res.net.cpt(q + 1).table;
        tv_same = std::max({tv_same, std::abs(t[1] - low[q]), std::abs(t[3] - high[q])});
        tv_swap = std::max({tv_swap, std::abs(t[3] - low[q]), std::abs(t[1] - high[q])});
    }
    double tv = std::min(tv_same, tv_swap);
    c.that(tv <= 0.05, "hidden-skill recovery within 0.05 TV");
    std::ostringstream ss;
    ss << "recovery TV " << tv;
    c.note(ss.str());
}

// ---- IRT calibration ----

void irt_recovery(Check& c) {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> ua(0.7, 2.0), ub(-2.0, 2.0);
    std::vector<irt::ItemParams> truth;
    for (int i = 0; i < 30; ++i) truth.push_back({ua(rng), ub(rng), 0.0});
    auto cohort = sim::sample_irt_cohort(testsupport::item_ids(30), truth, 2000, 77);
    irt::CalibrationConfig cfg;
    cfg.estimate_guessing = false;
    auto res = irt::calibrate_mml(cohort.data, irt::QuadratureGrid::normal(), cfg);
    double se_a = 0, se_b = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (!res.params[i]) {
            c.that(false, "item " + std::to_string(i) + " calibrated");
            return;
        }
        se_a += std::pow(res.params[i]->a - truth[i].a, 2);
        se_b += std::pow(res.params[i]->b - truth[i].b, 2);
    }
    double rmse_a = std::sqrt(se_a / 30), rmse_b = std::sqrt(se_b / 30);
    c.that(rmse_b <= 0.25, "RMSE(b) <= 0.25");
    c.that(rmse_a <= 0.3, "RMSE(a) <= 0.3");
    c.that(non_decreasing(res.loglik_trace), "marginal likelihood monotone");
    std::ostringstream ss;
    ss << "RMSE a " << rmse_a << ", b " << rmse_b << ", " << res.loglik_trace.size() << " EM steps";
    c.note(ss.str());
}

// ---- neural network ----

void nn_gradient_and_training(Check& c) {
    nn::NetworkSpec s{3, {4}, nn::Activation::sigmoid};
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(-1, 1);
    double worst = 0.0;
    for (int draw = 0; draw < 10; ++draw) {
        auto w = nn::random_weights(s, 100 + draw);
        std::vector<std::vector<double>> x(6, std::vector<double>(3));
        for (auto& row : x)
            for (auto& v : row) v = u(rng);
        std::vector<double> y(6);
        for (auto& v : y) v = u(rng);
        auto lg = nn::loss_and_gradient(s, w, x, y);
        auto flat = w.flatten();
        for (std::size_t p = 0; p < flat.size(); ++p) {
            auto plus = flat, minus = flat;
            plus[p] += 1e-5;
            minus[p] -= 1e-5;
            auto wp = w, wm = w;
            wp.assign(plus);
            wm.assign(minus);
            double num = (nn::loss_and_gradient(s, wp, x, y).loss - nn::loss_and_gradient(s, wm, x, y).loss) / 2e-5;
            worst = std::max(worst, std::abs(num - lg.gradient[p]) / std::max(1e-6, std::abs(num) + std::abs(lg.gradient[p])));
        }
    }
    c.that(worst < 1e-4, "max relative gradient error < 1e-4");
    std::vector<std::vector<double>> x;
    std::vector<double> y;
    for (int rep = 0; rep < 10; ++rep) {
        for (int a = 0; a < 2; ++a) {
            for (int b = 0; b < 2; ++b) {
                x.push_back({double(a), double(b)});
                y.push_back(a + b);
            }
        }
    }
    nn::TrainConfig cfg;
    cfg.epochs = 2000;
    cfg.seed = 7;
    auto res = nn::train_backprop({2, {4}, nn::Activation::sigmoid}, x, y, cfg);
    double mse = nn::loss_and_gradient({2, {4}, nn::Activation::sigmoid}, res.weights, x, y).loss;
    c.that(mse < 0.01, "toy regression MSE < 0.01");
    std::ostringstream ss;
    ss << "max rel error " << worst << ", toy MSE " << mse;
    c.note(ss.str());
}

// ---- CAT efficiency ----

void cat_efficiency(Check& c) {
    std::mt19937_64 rng(99);
    auto ids = testsupport::item_ids(100);
    auto model = std::make_shared<irt::IrtModel>();
    model->item_ids = ids;
    model->params = testsupport::random_items(rng, 100, 0.8, 2.0, 0.2);
    auto bank = std::make_shared<const QuestionBank>(make_boolean_bank(ids));
    auto cohort = sim::irt_examinees(*bank, *model, 200, 4242);
    sim::ModelFactory factory = [model, bank] { return std::make_unique<cat::IrtStudentModel>(model, bank); };
    auto rep = sim::compare_policies(factory, bank, cohort, cat::StoppingRule::se_threshold(0.35),
                                     {sim::Policy::adaptive, sim::Policy::random_order}, 7);
    double adaptive = rep.find(sim::Policy::adaptive)->stop_quartiles.median;
    double random = rep.find(sim::Policy::random_order)->stop_quartiles.median;
    c.that(adaptive < random, "adaptive median < random median");
    std::ostringstream ss;
    ss << "median questions adaptive " << adaptive << ", random " << random << ", ratio " << adaptive / random;
    c.note(ss.str());
}

// ---- engine invariants ----

persist::LoadedModel random_loaded(std::mt19937_64& rng, int kind) {
    persist::Provenance prov{"2024-01-01T00:00:00Z", 1, "", ""};
    if (kind == 0) {
        auto m = testsupport::random_irt_model(rng, 12);
        return persist::decode(persist::make_envelope(m, "irt", prov));
    }
    if (kind == 1) {
        auto net = testsupport::random_skill_net(rng, 2, 6);
        return persist::decode(persist::make_envelope(persist::BnModel{net, bn::equal_weights(net)}, "bn", prov));
    }
    return persist::decode(persist::make_envelope(testsupport::random_nn_model(rng, 8), "nn", prov));
}

void engine_invariants(Check& c) {
    std::mt19937_64 rng(1000);
    std::size_t repeats = 0, incomplete = 0;
    for (int s = 0; s < 1000; ++s) {
        auto lm = random_loaded(rng, s % 3);
        std::unique_ptr<cat::SelectionStrategy> strategy;
        if (rng() % 2) {
            strategy = std::make_unique<cat::GreedyStrategy>();
        } else {
            strategy = std::make_unique<cat::RandomOrderStrategy>(lm.bank->size(), rng());
        }
        std::size_t cap = 1 + rng() % (lm.bank->size() + 3);
        cat::TestSession session(lm.bank, lm.make_student(), cat::StoppingRule::max_questions(cap), std::move(strategy));
        auto t = cat::run_scripted(session, [&](std::size_t q) { return rng() % lm.bank->item(q).state_count(); });
        std::set<std::string> seen;
        for (const auto& r : t.records) repeats += !seen.insert(r.question_id).second;
        incomplete += t.records.size() != std::min(cap, lm.bank->size());
    }
    c.that(repeats == 0, "no repeated questions in 1000 sessions");
    c.that(incomplete == 0, "every session runs to its stopping rule");

    for (int kind = 0; kind < 3; ++kind) {
        auto lm = random_loaded(rng, kind);
        std::vector<std::size_t> answers(lm.bank->size());
        for (std::size_t q = 0; q < answers.size(); ++q) answers[q] = rng() % lm.bank->item(q).state_count();
        service::ServiceConfig cfg;
        cfg.default_stopping = cat::StoppingRule::max_questions(5);
        service::SessionService svc({lm}, cfg);
        auto s = svc.handle("POST", "/sessions", json{{"model_id", lm.envelope.model_id}}.dump()).body;
        std::string path = "/sessions/" + s.value("session_id", std::string());
        while (s.value("state", std::string()) == "running") {
            std::string qid = s["current_question"]["id"];
            s = svc.handle("POST", path + "/answers", json{{"question_id", qid}, {"outcome", answers[*lm.bank->index_of(qid)]}}.dump()).body;
        }
        auto served = cat::without_timestamps(persist::transcript_from_json(svc.handle("GET", path + "/transcript", "").body));
        cat::TestSession session(lm.bank, lm.make_student(), cfg.default_stopping);
        auto scripted = cat::run_scripted(session, [&](std::size_t q) { return answers[q]; });
        c.that(served == scripted, "service transcript equals scripted transcript (" + lm.envelope.model_id + ")");
    }
}

// ---- persistence ----

void persistence_round_trip(Check& c) {
    std::mt19937_64 rng(4096);
    for (int trial = 0; trial < 100; ++trial) {
        auto lm = random_loaded(rng, trial % 3);
        auto text = persist::envelope_to_json(lm.envelope).dump(2);
        auto back = persist::envelope_from_json(json::parse(text));
        c.that(back == lm.envelope, "envelope identity");
        auto decoded = persist::decode(back);
        c.that(decoded.model.index() == lm.model.index(), "model kind identity");
        std::visit([&](const auto& original) {
            using Ptr = std::decay_t<decltype(original)>;
            c.that(*std::get<Ptr>(decoded.model) == *original, "model structural identity");
        }, lm.model);

        cat::TestSession session(lm.bank, lm.make_student(), cat::StoppingRule::max_questions(4));
        auto t = cat::run_scripted(session, [&](std::size_t q) { return rng() % lm.bank->item(q).state_count(); });
        t.records.front().timestamp = 0.25 * trial;
        c.that(persist::transcript_from_json(json::parse(persist::transcript_to_json(t).dump())) == t, "transcript identity");
    }
}

}  // namespace

int main() {
    std::vector<Criterion> criteria{
        {"formula unit suite", 10, formula_suite},
        {"reference-value checks", 10, reference_values},
        {"inference oracle (200 random nets, 1e-9)", 60, inference_oracle},
        {"noisy-OR equivalence (1-5 parents, 1e-12)", 60, noisy_or_equivalence},
        {"information gain properties", 60, info_gain_properties},
        {"EM monotonicity and recovery", 300, em_monotone_and_recovery},
        {"IRT calibration recovery", 300, irt_recovery},
        {"NN gradient check and toy regression", 60, nn_gradient_and_training},
        {"CAT efficiency (adaptive vs random)", 180, cat_efficiency},
        {"engine invariants", 120, engine_invariants},
        {"persistence round trips (100 instances)", 60, persistence_round_trip},
    };
    int failed = 0;
    for (const auto& cr : criteria) {
        Check c;
        auto start = std::chrono::steady_clock::now();
        try {
            cr.body(c);
        } catch (const std::exception& e) {
            c.that(false, std::string("exception: ") + e.what());
        }
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::ostringstream budget;
        budget << std::fixed << std::setprecision(2) << secs << " s of " << cr.budget_seconds << " s";
        c.that(secs < cr.budget_seconds, "runtime budget");
        bool ok = c.passed();
        failed += !ok;
        std::cout << (ok ? "PASS " : "FAIL ") << cr.name << " [" << budget.str() << "] " << c.summary() << std::endl;
    }
    std::cout << (failed ? "FAILED " : "ALL PASSED ") << criteria.size() - failed << "/" << criteria.size() << std::endl;
    return failed ? 1 : 0;
}
