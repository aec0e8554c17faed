#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include "adaptest/engine.hpp"
#include "adaptest/error.hpp"
#include "test_support.hpp"

using namespace adaptest;
using namespace adaptest::cat;

namespace {

// Scores fixed per question; uncertainty shrinks by one per answer.
class FakeModel : public StudentModel {
public:
    FakeModel(std::vector<double> scores, EstimateKind kind) : scores_(std::move(scores)), kind_(kind) {}
    std::string kind() const override { return "fake"; }
    void insert_answer(std::size_t q, std::size_t outcome) override {
        if (answered_.count(q)) throw ValidationError("repeat");
        answered_.insert(q);
        total_ += static_cast<double>(outcome);
    }
    EstimateView current_estimate() const override {
        EstimateView v;
        v.kind = kind_;
        v.value = total_;
        v.uncertainty = 10.0 - static_cast<double>(answered_.size());
        return v;
    }
    std::vector<std::vector<double>> predict_answers(const std::vector<std::size_t>& c) const override {
        return std::vector<std::vector<double>>(c.size(), {0.5, 0.5});
    }
    double selection_score(std::size_t q) const override { return scores_.at(q); }
    void reset() override {
        answered_.clear();
        total_ = 0;
    }
    std::unique_ptr<StudentModel> clone() const override { return std::make_unique<FakeModel>(*this); }

private:
    std::vector<double> scores_;
    EstimateKind kind_;
    std::set<std::size_t> answered_;
    double total_ = 0;
};

std::shared_ptr<const QuestionBank> bool_bank(std::size_t n, const std::string& prefix = "q") {
    return std::make_shared<QuestionBank>(make_boolean_bank(testsupport::item_ids(n, prefix)));
}

std::shared_ptr<const irt::IrtModel> irt_model(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto m = std::make_shared<irt::IrtModel>();
    m->item_ids = testsupport::item_ids(n);
    m->params = testsupport::random_items(rng, n, 0.8, 2.0, 0.2);
    return m;
}

std::shared_ptr<const bn::BayesNet> skill_net() {
    return std::make_shared<bn::BayesNet>(testsupport::two_skill_six_question_net());
}

std::shared_ptr<const QuestionBank> skill_bank() {
    std::vector<std::string> ids;
    for (int q = 1; q <= 6; ++q) ids.push_back("Q" + std::to_string(q));
    return std::make_shared<QuestionBank>(make_boolean_bank(ids));
}

std::shared_ptr<const nn::NeuralModel> linear_nn(std::size_t n) {
    auto m = std::make_shared<nn::NeuralModel>();
    m->item_ids = testsupport::item_ids(n);
    m->mode = GradeMode::boolean;
    m->spec = {n, {}, nn::Activation::sigmoid};
    m->encoding = {nn::EncodingScheme::zero_one, nn::MissingPolicy::zero_fill, {}};
    m->weights = nn::zero_weights(m->spec);
    for (std::size_t i = 0; i < n; ++i) m->weights.layers[0].weights[i] = 1.0 + static_cast<double>(i % 3);
    for (std::size_t i = 0; i < n; ++i) {
        m->outcome_grades.push_back({0, 1});
        m->outcome_probs.push_back({0.4, 0.6});
    }
    return m;
}

AnswerOracle alternating() {
    return [](std::size_t q) { return q % 2; };
}

}  // namespace

TEST(Stopping, MaxQuestionsZeroFinishesImmediately) {
    TestSession s(bool_bank(3), std::make_unique<FakeModel>(std::vector<double>{1, 2, 3}, EstimateKind::theta),
                  StoppingRule::max_questions(0));
    auto next = s.next_question();
    EXPECT_FALSE(next.question.has_value());
    EXPECT_EQ(next.stop_reason, "max_questions");
    auto t = run_scripted(s, alternating());
    EXPECT_TRUE(t.records.empty());
    EXPECT_EQ(t.stop_reason, "max_questions");
}

TEST(Stopping, PrecisionRulesWaitForAnAnswer) {
    auto inf = std::numeric_limits<double>::infinity();
    TestSession s(bool_bank(4), std::make_unique<FakeModel>(std::vector<double>{1, 2, 3, 4}, EstimateKind::theta),
                  StoppingRule::se_threshold(inf));
    auto t = run_scripted(s, alternating());
    EXPECT_EQ(t.records.size(), 1u);
    EXPECT_EQ(t.stop_reason, "se_threshold");
    // entropy threshold does not apply to theta estimates
    TestSession e(bool_bank(4), std::make_unique<FakeModel>(std::vector<double>{1, 2, 3, 4}, EstimateKind::theta),
                  StoppingRule::entropy_threshold(inf));
    EXPECT_EQ(run_scripted(e, alternating()).stop_reason, "exhausted");
    // threshold 7.5 is reached once three answers shrink the uncertainty to 7
    TestSession b(bool_bank(5), std::make_unique<FakeModel>(std::vector<double>(5, 1), EstimateKind::skill_marginals),
                  StoppingRule::entropy_threshold(7.5));
    auto tb = run_scripted(b, alternating());
    EXPECT_EQ(tb.records.size(), 3u);
    EXPECT_EQ(tb.stop_reason, "entropy_threshold");
}

TEST(Stopping, TimeLimitUsesInjectedClock) {
    double now = 100.0;
    SessionOptions opts{true, [&now] { return now; }};
    TestSession s(bool_bank(5), std::make_unique<FakeModel>(std::vector<double>(5, 1), EstimateKind::score),
                  StoppingRule::time_limit(30), std::make_unique<GreedyStrategy>(), opts);
    auto t = run_scripted(s, [&](std::size_t) {
        now += 12.0;
        return std::size_t{1};
    });
    EXPECT_EQ(t.stop_reason, "time_limit");
    ASSERT_EQ(t.records.size(), 3u);
    EXPECT_DOUBLE_EQ(*t.records[0].timestamp, 12.0);
    EXPECT_DOUBLE_EQ(*t.records[2].timestamp, 36.0);
    EXPECT_FALSE(without_timestamps(t).records[0].timestamp.has_value());
}

TEST(Stopping, FirstTriggeredConditionWins) {
    auto rule = StoppingRule::max_questions(2).also(StoppingKind::se_threshold, 0.0);
    TestSession s(bool_bank(5), std::make_unique<FakeModel>(std::vector<double>(5, 1), EstimateKind::theta), rule);
    EXPECT_EQ(run_scripted(s, alternating()).stop_reason, "max_questions");
    EXPECT_THROW(StoppingRule::max_questions(2).also(StoppingKind::se_threshold, -1).validate(), ValidationError);
    EXPECT_THROW(StoppingRule({{{StoppingKind::max_questions, 1.5}}}).validate(), ValidationError);
}

TEST(Stopping, JsonRoundTrip) {
    auto rule = StoppingRule::max_questions(7)
                    .also(StoppingKind::se_threshold, std::numeric_limits<double>::infinity())
                    .also(StoppingKind::time_limit, 12.5);
    EXPECT_EQ(stopping_from_json(stopping_to_json(rule)), rule);
    EXPECT_THROW(stopping_from_json(nlohmann::json::parse(R"([{"kind":"forever","value":1}])")), ValidationError);
    EXPECT_THROW(stopping_from_json(nlohmann::json::parse(R"([{"kind":"se_threshold"}])")), ValidationError);
    EXPECT_THROW(stopping_from_json(nlohmann::json::parse(R"({"kind":"se_threshold"})")), ValidationError);
}

TEST(Strategy, GreedyTiesAndOrders) {
    FakeModel m({1.0, 3.0, 3.0, 2.0}, EstimateKind::score);
    EXPECT_EQ(GreedyStrategy().choose(m, {0, 1, 2, 3}), 1u);
    EXPECT_EQ(GreedyStrategy().choose(m, {2, 3}), 2u);
    EXPECT_EQ(FixedOrderStrategy().choose(m, {2, 3}), 2u);
    RandomOrderStrategy r(10, 5);
    std::vector<std::size_t> all(10);
    std::iota(all.begin(), all.end(), 0);
    std::set<std::size_t> seen;
    std::vector<std::size_t> left = all;
    while (!left.empty()) {
        auto q = r.choose(m, left);
        EXPECT_TRUE(seen.insert(q).second);
        left.erase(std::find(left.begin(), left.end(), q));
    }
    EXPECT_EQ(seen.size(), 10u);
    EXPECT_EQ(RandomOrderStrategy(10, 5).choose(m, all), r.choose(m, all));
}

TEST(Session, RejectsRepeatsAndBadOutcomes) {
    TestSession s(bool_bank(3), std::make_unique<IrtStudentModel>(irt_model(3, 1), bool_bank(3)),
                  StoppingRule::max_questions(3));
    s.submit_answer(1, 1);
    EXPECT_THROW(s.submit_answer(1, 0), ValidationError);
    EXPECT_THROW(s.submit_answer(0, 2), ValidationError);
    EXPECT_THROW(s.submit_answer(7, 0), ValidationError);
    EXPECT_EQ(s.asked_count(), 1u);
    EXPECT_EQ(s.remaining(), (std::vector<std::size_t>{0, 2}));
    s.mark_finished("done");
    EXPECT_THROW(s.submit_answer(0, 0), ValidationError);
    EXPECT_FALSE(s.next_question().question.has_value());
}

TEST(Session, FullRunCoversEveryItemOnce) {
    auto bank = bool_bank(12);
    for (int kind = 0; kind < 3; ++kind) {
        std::unique_ptr<StudentModel> m;
        auto b = kind == 1 ? skill_bank() : bank;
        if (kind == 0) m = std::make_unique<IrtStudentModel>(irt_model(12, 2), b);
        if (kind == 1) m = std::make_unique<BnStudentModel>(skill_net(), bn::equal_weights(*skill_net()), b);
        if (kind == 2) m = std::make_unique<NnStudentModel>(linear_nn(12), b);
        TestSession s(b, std::move(m), StoppingRule::max_questions(b->size()));
        auto t = run_scripted(s, alternating());
        std::set<std::string> ids;
        for (const auto& r : t.records) EXPECT_TRUE(ids.insert(r.question_id).second);
        EXPECT_EQ(ids.size(), b->size());
        EXPECT_EQ(t.stop_reason, "max_questions");
        for (std::size_t k = 0; k < t.records.size(); ++k) EXPECT_EQ(t.records[k].step, k + 1);
    }
}

TEST(Session, DeterministicTranscripts) {
    auto run = [] {
        auto bank = bool_bank(15);
        TestSession s(bank, std::make_unique<IrtStudentModel>(irt_model(15, 3), bank), StoppingRule::se_threshold(0.5));
        return run_scripted(s, [](std::size_t q) { return (q * 7 + 1) % 3 == 0 ? 0u : 1u; });
    };
    EXPECT_EQ(run(), run());
}

TEST(Session, InteractiveMatchesScripted) {
    auto bank = bool_bank(10);
    auto model = irt_model(10, 4);
    AnswerOracle oracle = [](std::size_t q) { return q % 3 == 0 ? 0u : 1u; };
    TestSession scripted(bank, std::make_unique<IrtStudentModel>(model, bank), StoppingRule::max_questions(6));
    auto t1 = run_scripted(scripted, oracle);
    // replay the same answers as typed labels, with one invalid token first
    std::ostringstream typed;
    typed << "maybe\n";
    for (const auto& r : t1.records) typed << bank->item(*bank->index_of(r.question_id)).answer_space[r.outcome] << "\n";
    std::istringstream in(typed.str());
    std::ostringstream out;
    TestSession live(bank, std::make_unique<IrtStudentModel>(model, bank), StoppingRule::max_questions(6));
    auto t2 = run_interactive(live, in, out);
    EXPECT_EQ(t1, t2);
    EXPECT_NE(out.str().find("not an answer option"), std::string::npos);
}

TEST(Session, InteractiveEndOfInputAborts) {
    auto bank = bool_bank(5);
    TestSession s(bank, std::make_unique<IrtStudentModel>(irt_model(5, 5), bank), StoppingRule::max_questions(5));
    std::istringstream in("1\n0\n");
    std::ostringstream out;
    auto t = run_interactive(s, in, out);
    EXPECT_TRUE(t.aborted);
    EXPECT_EQ(t.stop_reason, "interrupted");
    EXPECT_EQ(t.records.size(), 2u);
}

TEST(ParseOutcome, LabelsAndIndices) {
    Item item{"x", "", {"wrong", "partial", "right"}, 2, std::nullopt, {}};
    EXPECT_EQ(parse_outcome(item, "right"), 2u);
    EXPECT_EQ(parse_outcome(item, " 1 "), 1u);
    EXPECT_FALSE(parse_outcome(item, "3").has_value());
    EXPECT_FALSE(parse_outcome(item, "").has_value());
    EXPECT_FALSE(parse_outcome(item, "-1").has_value());
}

TEST(IrtModel, ExpectedScoreAndFallback) {
    auto bank = bool_bank(4);
    auto m = std::make_shared<irt::IrtModel>(*irt_model(4, 6));
    m->method = irt::EstimationMethod::mle;
    IrtStudentModel s(m, bank);
    auto e0 = s.current_estimate();
    EXPECT_NEAR(e0.value, 0.0, 0.01);
    // expected score of an empty test: sum of prior-averaged success probabilities
    auto pred = s.predict_answers({0, 1, 2, 3});
    double sum = 0;
    for (const auto& p : pred) sum += p[1];
    EXPECT_NEAR(*e0.expected_score, sum, 1e-12);
    for (std::size_t q = 0; q < 4; ++q) s.insert_answer(q, q % 2);
    EXPECT_DOUBLE_EQ(*s.current_estimate().expected_score, 2.0);
    EXPECT_THROW(s.insert_answer(0, 1), ValidationError);
    auto c = s.clone();
    s.reset();
    EXPECT_NE(c->current_estimate(), s.current_estimate());
}

TEST(BnModel, RejectsImpossibleAnswerWithoutSideEffects) {
    std::vector<bn::Variable> vars{{"S", bn::Role::skill, {"0", "1"}, true, {}},
                                   {"Q1", bn::Role::question, {"incorrect", "correct"}, false, {}},
                                   {"Q2", bn::Role::question, {"incorrect", "correct"}, false, {}}};
    auto net = std::make_shared<bn::BayesNet>(
        vars, std::vector<bn::NodeModel>{bn::CptNode{{}, {0.5, 0.5}}, bn::CptNode{{0}, {1, 0, 0, 1}},
                                         bn::CptNode{{0}, {1, 0, 0, 1}}});
    auto bank = std::make_shared<QuestionBank>(make_boolean_bank({"Q1", "Q2"}));
    BnStudentModel m(net, bn::equal_weights(*net), bank);
    m.insert_answer(0, 1);
    EXPECT_THROW(m.insert_answer(1, 0), InconsistentEvidence);
    EXPECT_NO_THROW(m.insert_answer(1, 1));
    EXPECT_NEAR(m.current_estimate().value, 1.0, 1e-12);
    EXPECT_NEAR(*m.current_estimate().uncertainty, 0.0, 1e-12);
    auto wrong = std::make_shared<QuestionBank>(make_boolean_bank({"S"}));
    EXPECT_THROW(BnStudentModel(net, {}, wrong), ValidationError);
}

TEST(BnModel, SelectionScoreIsInformationGain) {
    auto net = skill_net();
    auto bank = skill_bank();
    BnStudentModel m(net, bn::equal_weights(*net), bank);
    for (std::size_t q = 0; q < bank->size(); ++q) {
        EXPECT_NEAR(m.selection_score(q), bn::information_gain(*net, {}, m.variable_of(q)), 1e-12);
    }
    auto marg = m.current_estimate().skill_marginals;
    EXPECT_EQ(marg.size(), 2u);
    EXPECT_NEAR(marg.at("S1")[1], 0.4, 1e-12);
}

TEST(NnModel, GradesAndPredictions) {
    auto bank = bool_bank(4);
    NnStudentModel m(linear_nn(4), bank);
    EXPECT_EQ(m.grade_for(0, 1), 1);
    m.insert_answer(1, 1);
    m.insert_answer(2, 0);
    EXPECT_DOUBLE_EQ(m.current_estimate().value, 2.0);
    auto p = m.predict_answers({0});
    EXPECT_NEAR(p[0][1], 0.6, 1e-12);
    // variance 0.24 w^2 on the remaining items with weights 1 and 1
    EXPECT_NEAR(m.selection_score(0), 0.24, 1e-12);
    EXPECT_NEAR(m.selection_score(3), 0.24, 1e-12);
}

TEST(EstimateKind, Names) {
    for (auto k : {EstimateKind::theta, EstimateKind::skill_marginals, EstimateKind::score}) {
        EXPECT_EQ(estimate_kind_from_string(to_string(k)), k);
    }
}
