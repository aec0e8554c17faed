#include "adaptest/engine.hpp"

#include "adaptest/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cctype>
#include <iostream>
#include <limits>
#include <numeric>
#include <random>

namespace adaptest::cat {

std::string to_string(EstimateKind kind) {
    switch (kind) {
        case EstimateKind::theta: return "theta";
        case EstimateKind::skill_marginals: return "skill_marginals";
        case EstimateKind::score: return "score";
    }
    return "score";
}

EstimateKind estimate_kind_from_string(const std::string& s) {
    if (s == "theta") return EstimateKind::theta;
    if (s == "skill_marginals") return EstimateKind::skill_marginals;
    if (s == "score") return EstimateKind::score;
    throw ValidationError("unknown estimate kind '" + s + "'");
}

std::string to_string(StoppingKind kind) {
    switch (kind) {
        case StoppingKind::max_questions: return "max_questions";
        case StoppingKind::se_threshold: return "se_threshold";
        case StoppingKind::entropy_threshold: return "entropy_threshold";
        case StoppingKind::time_limit: return "time_limit";
        case StoppingKind::exhausted: return "exhausted";
    }
    return "exhausted";
}

StoppingKind stopping_kind_from_string(const std::string& s) {
    if (s == "max_questions") return StoppingKind::max_questions;
    if (s == "se_threshold") return StoppingKind::se_threshold;
    if (s == "entropy_threshold") return StoppingKind::entropy_threshold;
    if (s == "time_limit") return StoppingKind::time_limit;
    if (s == "exhausted") return StoppingKind::exhausted;
    throw ValidationError("unknown stopping rule '" + s + "'");
}

StoppingRule StoppingRule::max_questions(std::size_t n) { return {{{StoppingKind::max_questions, static_cast<double>(n)}}}; }
StoppingRule StoppingRule::se_threshold(double tau) { return {{{StoppingKind::se_threshold, tau}}}; }
StoppingRule StoppingRule::entropy_threshold(double tau) { return {{{StoppingKind::entropy_threshold, tau}}}; }
StoppingRule StoppingRule::time_limit(double seconds) { return {{{StoppingKind::time_limit, seconds}}}; }

StoppingRule& StoppingRule::also(StoppingKind kind, double value) {
    conditions.push_back({kind, value});
    return *this;
}

void StoppingRule::validate() const {
    for (const auto& c : conditions) {
        if (std::isnan(c.value) || c.value < 0.0) {
            throw ValidationError("stopping rule '" + to_string(c.kind) + "' needs a non-negative value");
        }
        if (c.kind == StoppingKind::max_questions && c.value != std::floor(c.value)) {
            throw ValidationError("max_questions must be an integer");
        }
    }
}

nlohmann::json stopping_to_json(const StoppingRule& rule) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : rule.conditions) {
        nlohmann::json j{{"kind", to_string(c.kind)}};
        if (c.kind == StoppingKind::max_questions) {
            j["value"] = static_cast<std::uint64_t>(c.value);
        } else if (std::isinf(c.value)) {
            j["value"] = "inf";
        } else {
            j["value"] = c.value;
        }
        arr.push_back(j);
    }
    return arr;
}

StoppingRule stopping_from_json(const nlohmann::json& doc) {
    if (!doc.is_array()) throw ValidationError("stopping rule must be a JSON array");
    StoppingRule rule;
    for (const auto& j : doc) {
        if (!j.is_object() || !j.contains("kind")) throw ValidationError("stopping condition needs a 'kind'");
        StoppingCondition c;
        c.kind = stopping_kind_from_string(j.at("kind").get<std::string>());
        if (c.kind != StoppingKind::exhausted) {
            if (!j.contains("value")) throw ValidationError("stopping condition '" + to_string(c.kind) + "' needs a 'value'");
            const auto& v = j.at("value");
            if (v.is_string() && v.get<std::string>() == "inf") {
                c.value = std::numeric_limits<double>::infinity();
            } else if (v.is_number()) {
                c.value = v.get<double>();
            } else {
                throw ValidationError("stopping value must be a number");
            }
        }
        rule.conditions.push_back(c);
    }
    rule.validate();
    return rule;
}

Clock steady_clock() {
    return [] {
        using namespace std::chrono;
        return duration<double>(steady_clock::now().time_since_epoch()).count();
    };
}

std::size_t GreedyStrategy::choose(const StudentModel& model, const std::vector<std::size_t>& remaining) const {
    std::size_t best = remaining.front();
    double best_score = -std::numeric_limits<double>::infinity();
    for (auto q : remaining) {
        double s = model.selection_score(q);
        if (s > best_score + 1e-12) {
            best_score = s;
            best = q;
        }
    }
    return best;
}

RandomOrderStrategy::RandomOrderStrategy(std::size_t bank_size, std::uint64_t seed) : order_(bank_size) {
    std::iota(order_.begin(), order_.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order_.begin(), order_.end(), rng);
}

std::size_t RandomOrderStrategy::choose(const StudentModel&, const std::vector<std::size_t>& remaining) const {
    for (auto q : order_) {
        if (std::binary_search(remaining.begin(), remaining.end(), q)) return q;
    }
    throw ValidationError("random order does not cover the remaining questions");
}

std::size_t FixedOrderStrategy::choose(const StudentModel&, const std::vector<std::size_t>& remaining) const {
    return remaining.front();
}

Transcript without_timestamps(Transcript t) {
    for (auto& r : t.records) r.timestamp.reset();
    return t;
}

TestSession::TestSession(std::shared_ptr<const QuestionBank> bank, std::unique_ptr<StudentModel> model,
                         StoppingRule stopping, std::unique_ptr<SelectionStrategy> strategy, SessionOptions options)
    : bank_(std::move(bank)),
      model_(std::move(model)),
      stopping_(std::move(stopping)),
      strategy_(std::move(strategy)),
      options_(std::move(options)) {
    if (!bank_ || !model_ || !strategy_) throw ValidationError("session needs a bank, a model and a strategy");
    stopping_.validate();
    if (!options_.clock) options_.clock = steady_clock();
    started_ = options_.clock();
    remaining_.resize(bank_->size());
    std::iota(remaining_.begin(), remaining_.end(), 0);
    asked_.assign(bank_->size(), false);
    estimate_ = model_->current_estimate();
    transcript_.model_kind = model_->kind();
    transcript_.final_estimate = estimate_;
}

NextStep TestSession::next_question() const {
    if (finished_) return {std::nullopt, stop_reason_};
    const std::size_t asked = asked_count();
    for (const auto& c : stopping_.conditions) {
        bool fire = false;
        switch (c.kind) {
            case StoppingKind::max_questions: fire = static_cast<double>(asked) >= c.value; break;
            case StoppingKind::se_threshold:
                fire = asked > 0 && estimate_.kind == EstimateKind::theta && estimate_.uncertainty &&
                       *estimate_.uncertainty <= c.value;
                break;
            case StoppingKind::entropy_threshold:
                fire = asked > 0 && estimate_.kind == EstimateKind::skill_marginals && estimate_.uncertainty &&
                       *estimate_.uncertainty <= c.value;
                break;
            case StoppingKind::time_limit: fire = options_.clock() - started_ >= c.value; break;
            case StoppingKind::exhausted: fire = remaining_.empty(); break;
        }
        if (fire) return {std::nullopt, to_string(c.kind)};
    }
    if (remaining_.empty()) return {std::nullopt, to_string(StoppingKind::exhausted)};
    return {strategy_->choose(*model_, remaining_), ""};
}

EstimateView TestSession::submit_answer(std::size_t question, std::size_t outcome) {
    if (finished_) throw ValidationError("session is finished");
    if (question >= bank_->size()) throw ValidationError("question index " + std::to_string(question) + " out of range");
    if (asked_[question]) throw ValidationError("question '" + bank_->item(question).id + "' was already asked");
    const Item& item = bank_->item(question);
    if (outcome >= item.state_count()) {
        throw ValidationError("outcome " + std::to_string(outcome) + " is not an answer state of '" + item.id + "'");
    }
    model_->insert_answer(question, outcome);
    asked_[question] = true;
    remaining_.erase(std::lower_bound(remaining_.begin(), remaining_.end(), question));
    estimate_ = model_->current_estimate();

    TranscriptRecord rec;
    rec.step = transcript_.records.size() + 1;
    rec.question_id = item.id;
    rec.outcome = outcome;
    rec.estimate = estimate_.value;
    rec.uncertainty = estimate_.uncertainty;
    rec.expected_score = estimate_.expected_score;
    if (options_.record_timestamps) rec.timestamp = options_.clock() - started_;
    transcript_.records.push_back(std::move(rec));
    transcript_.final_estimate = estimate_;
    return estimate_;
}

void TestSession::mark_finished(const std::string& reason, bool aborted) {
    finished_ = true;
    stop_reason_ = reason;
    transcript_.stop_reason = reason;
    transcript_.aborted = aborted;
}

Transcript TestSession::transcript() const { return transcript_; }

Transcript run_scripted(TestSession& session, const AnswerOracle& oracle) {
    while (!session.finished()) {
        NextStep next = session.next_question();
        if (!next.question) {
            session.mark_finished(next.stop_reason);
            break;
        }
        session.submit_answer(*next.question, oracle(*next.question));
    }
    return session.transcript();
}

std::optional<std::size_t> parse_outcome(const Item& item, const std::string& token) {
    auto first = token.find_first_not_of(" \t\r");
    if (first == std::string::npos) return std::nullopt;
    auto last = token.find_last_not_of(" \t\r");
    std::string t = token.substr(first, last - first + 1);
    for (std::size_t s = 0; s < item.answer_space.size(); ++s) {
        if (item.answer_space[s] == t) return s;
    }
    if (std::all_of(t.begin(), t.end(), [](unsigned char ch) { return std::isdigit(ch); }) && t.size() < 9) {
        std::size_t s = std::stoul(t);
        if (s < item.state_count()) return s;
    }
    return std::nullopt;
}

Transcript run_interactive(TestSession& session, std::istream& in, std::ostream& out, bool show_estimate) {
    const std::size_t total = session.bank().size();
    while (!session.finished()) {
        NextStep next = session.next_question();
        if (!next.question) {
            session.mark_finished(next.stop_reason);
            break;
        }
        const Item& item = session.bank().item(*next.question);
        out << "\n[" << session.asked_count() + 1 << "/" << total << "] " << item.id;
        if (!item.text.empty()) out << ": " << item.text;
        out << "\n";
        for (std::size_t s = 0; s < item.answer_space.size(); ++s) out << "  " << s << ") " << item.answer_space[s] << "\n";
        std::optional<std::size_t> outcome;
        while (!outcome) {
            out << "answer> " << std::flush;
            std::string line;
            if (!std::getline(in, line)) {
                session.mark_finished("interrupted", true);
                out << "\n";
                return session.transcript();
            }
            outcome = parse_outcome(item, line);
            if (!outcome) out << "not an answer option, try again\n";
        }
        EstimateView est = session.submit_answer(*next.question, *outcome);
        if (show_estimate) {
            out << "estimate " << est.value;
            if (est.uncertainty) out << " (uncertainty " << *est.uncertainty << ")";
            out << "\n";
        }
    }
    out << "\nfinished: " << session.stop_reason() << " after " << session.asked_count() << " questions\n";
    return session.transcript();
}

}  // namespace adaptest::cat
