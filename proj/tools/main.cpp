// adaptest: command-line entry point.
#include <CLI11.hpp>

#include "adaptest/bayesnet.hpp"
#include "adaptest/data_model.hpp"
#include "adaptest/engine.hpp"
#include "adaptest/error.hpp"
#include "adaptest/irt.hpp"
#include "adaptest/neuralnet.hpp"
#include "adaptest/persistence.hpp"
#include "adaptest/psychometrics.hpp"
#include "adaptest/service.hpp"
#include "adaptest/simulator.hpp"

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

using namespace adaptest;
using nlohmann::json;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, ',')) {
        if (!part.empty()) out.push_back(part);
    }
    return out;
}

// Boolean bank from the item columns of a dataset header.
QuestionBank bank_from_header(const std::string& csv_path) {
    std::ifstream in(csv_path);
    if (!in) throw persist::IoError("cannot read '" + csv_path + "'");
    std::string header;
    std::getline(in, header);
    if (!header.empty() && header.back() == '\r') header.pop_back();
    std::vector<std::string> ids;
    auto cols = split_list(header);
    for (std::size_t c = 1; c < cols.size(); ++c) {
        if (cols[c].rfind("info:", 0) != 0) ids.push_back(cols[c]);
    }
    if (ids.empty()) throw ValidationError("'" + csv_path + "' has no item columns");
    return make_boolean_bank(ids);
}

struct DataInput {
    std::string data_path;
    std::string bank_path;
    std::string mode;
};

std::pair<QuestionBank, ResponseDataset> load_data(const DataInput& in) {
    QuestionBank bank = in.bank_path.empty() ? bank_from_header(in.data_path) : load_bank(in.bank_path);
    std::string mode = in.mode.empty() ? (in.bank_path.empty() ? "boolean" : "numeric") : in.mode;
    auto data = load_dataset(in.data_path, bank, grade_mode_from_string(mode));
    return {std::move(bank), std::move(data)};
}

void add_data_options(CLI::App* app, DataInput& in, bool required = true) {
    auto* d = app->add_option("--data", in.data_path, "response dataset CSV");
    if (required) d->required();
    app->add_option("--bank", in.bank_path, "question bank JSON (default: boolean items from the CSV header)");
    app->add_option("--mode", in.mode, "grade mode: numeric | boolean")->check(CLI::IsMember({"numeric", "boolean"}));
}

// Applies a JSON config to options not given on the command line.
void apply_config(CLI::App* app, const std::string& path) {
    if (path.empty()) return;
    json cfg = persist::read_json(path);
    if (!cfg.is_object()) throw ValidationError("config '" + path + "' must be a JSON object");
    for (const auto& [key, value] : cfg.items()) {
        CLI::Option* opt = nullptr;
        try {
            opt = app->get_option("--" + key);
        } catch (const CLI::OptionNotFound&) {
            throw ValidationError("config '" + path + "': unknown option '" + key + "'");
        }
        if (opt->count() > 0) continue;
        auto as_text = [](const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
        if (value.is_array()) {
            std::vector<std::string> parts;
            for (const auto& v : value) parts.push_back(as_text(v));
            std::string joined;
            for (std::size_t i = 0; i < parts.size(); ++i) joined += (i ? "," : "") + parts[i];
            opt->add_result(joined);
        } else {
            opt->add_result(as_text(value));
        }
        opt->run_callback();
    }
}

json effective_config(CLI::App* app) {
    json cfg = json::object();
    for (const auto* opt : app->get_options()) {
        if (opt->get_name() == "--help" || opt->get_name() == "--config" || opt->get_lnames().empty()) continue;
        auto results = opt->results();
        cfg[opt->get_lnames().front()] = results.empty() ? json(nullptr) : json(results);
    }
    return cfg;
}

persist::Provenance provenance(std::uint64_t seed, const std::string& data_path, CLI::App* app) {
    persist::Provenance p;
    p.created_at = persist::utc_timestamp();
    p.seed = seed;
    if (!data_path.empty()) p.dataset_digest = persist::file_digest(data_path);
    p.config_digest = persist::json_digest(effective_config(app));
    return p;
}

void emit(const json& doc, const std::string& out_path) {
    if (out_path.empty()) {
        std::cout << doc.dump(2) << "\n";
    } else {
        persist::write_json_atomic(out_path, doc);
        std::cout << out_path << "\n";
    }
}

// ---- analyze ----

struct AnalyzeOptions {
    DataInput in;
    std::string factors, subset, subset_name = "subset", out, config;
    std::size_t groups = 0;
    bool json_out = false;
};

int run_analyze(const AnalyzeOptions& o) {
    auto [bank, data] = load_data(o.in);
    auto scores = raw_scores(data);
    json doc;
    doc["students"] = data.students.size();
    doc["items"] = data.item_count();
    doc["max_score"] = data.max_score();
    std::vector<std::string> warnings;
    try {
        double alpha = psychometrics::cronbach_alpha(data);
        doc["cronbach_alpha"] = alpha;
        doc["reliability"] = psychometrics::to_string(psychometrics::reliability_tier(alpha));
    } catch (const UndefinedStatistic& e) {
        doc["cronbach_alpha"] = nullptr;
        warnings.push_back(e.what());
    }
    auto stats = psychometrics::score_stats(scores);
    doc["score"] = {{"mean", stats.mean}, {"sd", stats.sd()}};
    if (scores.size() >= 3 && stats.variance > 0.0) {
        auto shape = psychometrics::distribution_shape(scores);
        doc["score"]["skewness"] = shape.skewness;
        doc["score"]["excess_kurtosis"] = shape.excess_kurtosis;
    }
    std::vector<double> mccall;
    if (scores.size() >= 3) mccall = psychometrics::mccall_normalize(scores);
    json students = json::array();
    for (std::size_t s = 0; s < data.students.size(); ++s) {
        json row{{"id", data.students[s].id}, {"raw", scores[s]}};
        if (stats.variance > 0.0) {
            row["z"] = psychometrics::standardize(scores[s], stats, psychometrics::z_scale());
            row["iq"] = psychometrics::standardize(scores[s], stats, psychometrics::iq_scale());
        }
        if (!mccall.empty()) row["mccall"] = mccall[s];
        students.push_back(row);
    }
    doc["standardized"] = students;
    if (!o.factors.empty()) {
        auto report = psychometrics::validity_report(data, split_list(o.factors), split_list(o.subset), o.subset_name);
        json rows = json::array();
        for (const auto& r : report.rows) {
            rows.push_back({{"target", r.target}, {"factor", r.factor}, {"r", r.correlation.r},
                            {"p_value", r.correlation.p_value}, {"n", r.correlation.n}});
        }
        doc["validity"] = rows;
        warnings.insert(warnings.end(), report.warnings.begin(), report.warnings.end());
    }
    if (o.groups > 0) {
        auto g = bn::discretize_observed_score(data, o.groups);
        doc["score_groups"] = {{"boundaries", g.boundaries}, {"sizes", g.sizes}};
    }
    doc["warnings"] = warnings;

    if (o.json_out || !o.out.empty()) {
        emit(doc, o.out);
        return 0;
    }
    std::cout << "students " << doc["students"] << ", items " << doc["items"] << ", max score " << doc["max_score"] << "\n";
    if (doc["cronbach_alpha"].is_null()) {
        std::cout << "cronbach alpha: undefined\n";
    } else {
        std::cout << "cronbach alpha " << doc["cronbach_alpha"].get<double>() << " (" << doc["reliability"].get<std::string>() << ")\n";
    }
    std::cout << "score mean " << stats.mean << ", sd " << stats.sd() << "\n";
    if (doc.contains("validity")) {
        for (const auto& r : doc["validity"]) {
            std::cout << r["target"].get<std::string>() << " ~ " << r["factor"].get<std::string>() << ": r = " << r["r"].get<double>()
                      << ", p = " << r["p_value"].get<double>() << ", n = " << r["n"] << "\n";
        }
    }
    if (doc.contains("score_groups")) std::cout << "score group boundaries " << doc["score_groups"]["boundaries"].dump() << "\n";
    std::cout << "id,raw,z,iq,mccall\n";
    for (const auto& row : students) {
        std::cout << row["id"].get<std::string>() << "," << row["raw"].get<double>();
        for (const char* k : {"z", "iq", "mccall"}) {
            std::cout << ",";
            if (row.contains(k)) std::cout << row[k].get<double>();
        }
        std::cout << "\n";
    }
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
    return 0;
}

// ---- calibrate ----

struct CalibrateOptions {
    DataInput in;
    std::string out, id = "irt", model = "3pl", method = "eap", config;
    std::uint64_t seed = 1;
    int max_iters = 500;
    double tol = 1e-4;
    std::size_t min_students = 30;
    bool embed_bank = false;
};

int run_calibrate(const CalibrateOptions& o, CLI::App* app) {
    auto [bank, data] = load_data(o.in);
    irt::CalibrationConfig cfg;
    cfg.estimate_guessing = o.model == "3pl";
    cfg.max_iters = o.max_iters;
    cfg.tol = o.tol;
    cfg.min_students = o.min_students;
    auto grid = irt::QuadratureGrid::normal();
    auto result = irt::calibrate_mml(data, grid, cfg);
    irt::IrtModel model;
    model.grid = grid;
    model.method = irt::estimation_method_from_string(o.method);
    for (std::size_t i = 0; i < data.item_count(); ++i) {
        if (!result.params[i]) continue;
        model.item_ids.push_back(data.item_ids[i]);
        model.params.push_back(*result.params[i]);
    }
    if (model.item_ids.empty()) throw ValidationError("no item could be calibrated");
    std::optional<QuestionBank> embedded;
    if (o.embed_bank || !result.excluded.empty()) {
        std::vector<Item> kept;
        for (const auto& item : bank.items()) {
            if (std::find(model.item_ids.begin(), model.item_ids.end(), item.id) != model.item_ids.end()) kept.push_back(item);
        }
        embedded = QuestionBank(kept);
    }
    auto env = persist::make_envelope(model, o.id, provenance(o.seed, o.in.data_path, app), embedded);
    env.payload["calibration"] = {{"iterations", result.iterations}, {"converged", result.converged},
                                  {"loglik_trace", result.loglik_trace}, {"excluded", result.excluded},
                                  {"warnings", result.warnings}};
    persist::save_model(env, o.out);
    std::cout << "calibrated " << model.item_ids.size() << " items in " << result.iterations << " EM iterations"
              << (result.converged ? "" : " (not converged)") << " -> " << o.out << "\n";
    for (const auto& e : result.excluded) std::cerr << "excluded: " << e << "\n";
    for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
    return 0;
}

// ---- learn-bn ----

struct LearnBnOptions {
    DataInput in;
    std::string model, out, trace, id = "bn", config, weights = "keep";
    std::uint64_t seed = 1;
    double pseudocount = 0.1, tol = 1e-4;
    int max_iters = 200;
    bool repair = false;
};

bn::SkillWeights weights_from_name(const std::string& name, const persist::BnModel& m) {
    if (name == "keep") return m.weights;
    if (name == "equal") return bn::equal_weights(m.net);
    if (name == "equal_impact") return bn::equal_impact_weights(m.net);
    throw ValidationError("unknown weights '" + name + "'");
}

int run_learn_bn(const LearnBnOptions& o, CLI::App* app) {
    json doc = persist::read_json(o.model);
    // Accept a bare network or a model envelope.
    persist::BnModel initial = doc.contains("format_version") ? persist::bn_from_json(persist::envelope_from_json(doc).payload)
                                                              : persist::bn_from_json(doc);
    auto [bank, data] = load_data(o.in);
    auto result = bn::learn_em(initial.net, data, {o.pseudocount, o.tol, o.max_iters});
    persist::BnModel learned{result.net, weights_from_name(o.weights, initial)};
    if (o.repair) learned.net = bn::repair_ordinality(learned.net);
    auto violations = bn::check_ordinality(learned.net);
    auto env = persist::make_envelope(learned, o.id, provenance(o.seed, o.in.data_path, app));
    env.payload["learning"] = {{"iterations", result.iterations}, {"converged", result.converged},
                               {"loglik_trace", result.loglik_trace}, {"objective_trace", result.objective_trace},
                               {"ordinality_violations", violations.size()}};
    persist::save_model(env, o.out);
    if (!o.trace.empty()) {
        std::ostringstream csv;
        csv << "iteration,loglik,objective\n" << std::setprecision(17);
        for (std::size_t i = 0; i < result.loglik_trace.size(); ++i) {
            csv << i << "," << result.loglik_trace[i] << "," << result.objective_trace[i] << "\n";
        }
        persist::write_text_atomic(o.trace, csv.str());
    }
    std::cout << "EM " << result.iterations << " iterations" << (result.converged ? "" : " (not converged)")
              << ", log-likelihood " << result.loglik_trace.back() << " -> " << o.out << "\n";
    for (const auto& v : violations) {
        std::cerr << "ordinality: " << v.question << " decreases along " << v.skill << (v.context.empty() ? "" : " at " + v.context) << "\n";
    }
    return 0;
}

// ---- train-nn ----

struct TrainNnOptions {
    DataInput in;
    std::string out, id = "nn", hidden, activation = "sigmoid", encoding = "zero_one", missing = "zero_fill", config;
    std::uint64_t seed = 1;
    int epochs = 2000;
    double lr = 0.1, momentum = 0.9, validation = 0.2;
    std::size_t batch = 32;
    bool embed_bank = false;
};

int run_train_nn(const TrainNnOptions& o, CLI::App* app) {
    auto [bank, data] = load_data(o.in);
    nn::NetworkSpec spec = nn::NetworkSpec::with_defaults(data.item_count());
    if (!o.hidden.empty()) {
        spec.hidden_layers.clear();
        for (const auto& w : split_list(o.hidden)) spec.hidden_layers.push_back(std::stoul(w));
    }
    spec.activation = nn::activation_from_string(o.activation);
    nn::TrainConfig cfg{o.lr, o.momentum, o.epochs, o.batch, o.validation, o.seed};
    auto model = nn::train_model(data, spec, nn::encoding_scheme_from_string(o.encoding),
                                 nn::missing_policy_from_string(o.missing), cfg);
    std::optional<QuestionBank> embedded;
    if (o.embed_bank) embedded = bank;
    auto env = persist::make_envelope(model, o.id, provenance(o.seed, o.in.data_path, app), embedded);
    persist::save_model(env, o.out);
    std::cout << "trained " << o.epochs << " epochs, best epoch " << model.metadata.best_epoch << ", final train loss "
              << model.metadata.final_train_loss << " -> " << o.out << "\n";
    return 0;
}

// ---- simulate ----

struct SimulateOptions {
    std::string scenario, out, series, config;
    std::optional<std::uint64_t> seed;
    unsigned threads = 1;
};

std::string resolve(const std::string& base_file, const std::string& rel) {
    std::filesystem::path p(rel);
    if (p.is_absolute()) return rel;
    return (std::filesystem::path(base_file).parent_path() / p).string();
}

int run_simulate(const SimulateOptions& o) {
    json sc = persist::read_json(o.scenario);
    if (!sc.contains("model")) throw ValidationError("scenario needs a 'model' path");
    auto lm = persist::decode(persist::load_model(resolve(o.scenario, sc.at("model").get<std::string>())));
    auto bank = lm.bank;
    if (sc.contains("bank")) bank = std::make_shared<const QuestionBank>(load_bank(resolve(o.scenario, sc.at("bank").get<std::string>())));
    std::uint64_t seed = o.seed ? *o.seed : sc.value("seed", std::uint64_t{1});
    json cohort_cfg = sc.value("cohort", json::object());
    std::size_t n = cohort_cfg.value("size", std::size_t{200});

    sim::Cohort cohort;
    if (cohort_cfg.contains("data")) {
        auto data = load_dataset(resolve(o.scenario, cohort_cfg.at("data").get<std::string>()), *bank,
                                 grade_mode_from_string(cohort_cfg.value("mode", std::string("numeric"))));
        cohort = sim::dataset_examinees(*bank, data);
    } else if (auto p = std::get_if<std::shared_ptr<const irt::IrtModel>>(&lm.model)) {
        cohort = sim::irt_examinees(*bank, **p, n, sim::sub_seed(seed, 0xC0407));
    } else if (auto p = std::get_if<std::shared_ptr<const persist::BnModel>>(&lm.model)) {
        cohort = sim::bn_examinees(*bank, (*p)->net, (*p)->weights, n, sim::sub_seed(seed, 0xC0407));
    } else {
        throw ValidationError("neural models need a recorded cohort ('cohort.data')");
    }

    cat::StoppingRule stopping = sc.contains("stopping") ? cat::stopping_from_json(sc.at("stopping")) : cat::StoppingRule{};
    std::vector<sim::Policy> policies;
    for (const auto& p : sc.value("policies", json::array({"adaptive", "random", "fixed"}))) {
        policies.push_back(sim::policy_from_string(p.get<std::string>()));
    }
    sim::SimulationOptions opts{sc.value("track_predictions", true), o.threads};
    auto factory = [&lm, bank] { return lm.make_student(bank); };
    auto report = sim::compare_policies(factory, bank, cohort, stopping, policies, seed, opts);
    json doc = sim::report_to_json(report);
    doc["model_id"] = lm.envelope.model_id;
    std::string out = o.out.empty() ? std::filesystem::path(o.scenario).replace_extension(".report.json").string() : o.out;
    persist::write_json_atomic(out, doc);
    if (!o.series.empty()) {
        std::ostringstream csv;
        sim::write_series_csv(csv, report);
        persist::write_text_atomic(o.series, csv.str());
    }
    for (const auto& p : report.policies) {
        std::cerr << sim::to_string(p.policy) << ": median questions " << p.stop_quartiles.median << "\n";
    }
    if (auto r = report.median_ratio(sim::Policy::adaptive, sim::Policy::random_order)) {
        std::cerr << "adaptive / random median ratio " << *r << "\n";
    }
    std::cout << out << "\n";
    return 0;
}

// ---- stopping flags shared by serve and take ----

struct StoppingFlags {
    std::optional<std::size_t> max_questions;
    std::optional<double> se_threshold, entropy_threshold, time_limit;
    std::string json_rule;

    cat::StoppingRule build() const {
        cat::StoppingRule r = json_rule.empty() ? cat::StoppingRule{} : cat::stopping_from_json(json::parse(json_rule));
        if (max_questions) r.also(cat::StoppingKind::max_questions, static_cast<double>(*max_questions));
        if (se_threshold) r.also(cat::StoppingKind::se_threshold, *se_threshold);
        if (entropy_threshold) r.also(cat::StoppingKind::entropy_threshold, *entropy_threshold);
        if (time_limit) r.also(cat::StoppingKind::time_limit, *time_limit);
        r.validate();
        return r;
    }
};

void add_stopping_options(CLI::App* app, StoppingFlags& f) {
    app->add_option("--max-questions", f.max_questions, "stop after this many questions");
    app->add_option("--se-threshold", f.se_threshold, "stop once the ability standard error is at most this");
    app->add_option("--entropy-threshold", f.entropy_threshold, "stop once the skill entropy is at most this");
    app->add_option("--time-limit", f.time_limit, "stop after this many seconds");
    app->add_option("--stopping", f.json_rule, "stopping rule as a JSON array");
}

// ---- serve ----

struct ServeOptions {
    std::string models_dir, bind = "127.0.0.1:8080", allow, config;
    StoppingFlags stopping;
    bool transcript_access = false;
};

int run_serve(const ServeOptions& o) {
    auto colon = o.bind.rfind(':');
    if (colon == std::string::npos) throw ValidationError("--bind must be host:port");
    std::string host = o.bind.substr(0, colon);
    int port = std::stoi(o.bind.substr(colon + 1));
    service::ServiceConfig cfg;
    cfg.default_stopping = o.stopping.build();
    cfg.transcript_access_mid_test = o.transcript_access;
    if (!o.allow.empty()) {
        cfg.allowed_stopping.clear();
        for (const auto& k : split_list(o.allow)) cfg.allowed_stopping.insert(cat::stopping_kind_from_string(k));
    }
    service::SessionService svc(service::SessionService::load_models_dir(o.models_dir), cfg);
    std::cerr << "serving " << svc.list_models().body["models"].size() << " models on " << o.bind << "\n";
    service::serve(svc, host, port);
    return 0;
}

// ---- take ----

struct TakeOptions {
    std::string model, bank, transcript, config;
    StoppingFlags stopping;
    bool hide_estimate = false;
};

void on_interrupt(int) {}

int run_take(const TakeOptions& o) {
    auto lm = persist::decode(persist::load_model(o.model));
    auto bank = o.bank.empty() ? lm.bank : std::make_shared<const QuestionBank>(load_bank(o.bank));
    cat::TestSession session(bank, lm.make_student(bank), o.stopping.build(), std::make_unique<cat::GreedyStrategy>(),
                             {true, {}});
    // No SA_RESTART: an interrupt breaks the pending read and finalizes the transcript.
    struct sigaction sa {};
    sa.sa_handler = on_interrupt;
    sigemptyset(&sa.sa_mask);
    sigaction(SIGINT, &sa, nullptr);
    std::cout << "adaptive test: " << lm.envelope.model_id << " (" << bank->size() << " questions)\n";
    auto t = cat::run_interactive(session, std::cin, std::cout, !o.hide_estimate);
    json doc = persist::transcript_to_json(t);
    if (o.transcript.empty()) {
        std::cout << doc.dump(2) << "\n";
    } else {
        persist::write_json_atomic(o.transcript, doc);
        std::cout << "transcript -> " << o.transcript << "\n";
    }
    return t.aborted ? 130 : 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Adaptive testing toolkit: psychometric analysis, model fitting, simulation and test delivery"};
    app.require_subcommand(1);

    AnalyzeOptions ao;
    auto* analyze = app.add_subcommand("analyze", "reliability, standardized scores and validity of a dataset");
    add_data_options(analyze, ao.in);
    analyze->add_option("--factors", ao.factors, "comma-separated info factors to correlate with the score");
    analyze->add_option("--subset", ao.subset, "comma-separated items forming a sub-score");
    analyze->add_option("--subset-name", ao.subset_name, "label of the sub-score");
    analyze->add_option("--groups", ao.groups, "also report quantile score groups");
    analyze->add_flag("--json", ao.json_out, "machine-readable output");
    analyze->add_option("--out", ao.out, "write the JSON report here");
    analyze->add_option("--config", ao.config, "JSON file with option defaults");

    CalibrateOptions co;
    auto* calibrate = app.add_subcommand("calibrate", "fit a 2PL/3PL item bank by marginal maximum likelihood");
    add_data_options(calibrate, co.in);
    calibrate->add_option("--out", co.out, "model envelope to write")->required();
    calibrate->add_option("--id", co.id, "model id");
    calibrate->add_option("--model", co.model, "2pl | 3pl")->check(CLI::IsMember({"2pl", "3pl"}));
    calibrate->add_option("--method", co.method, "ability estimator: eap | map | mle")->check(CLI::IsMember({"eap", "map", "mle"}));
    calibrate->add_option("--max-iters", co.max_iters, "EM iteration cap");
    calibrate->add_option("--tol", co.tol, "EM log-likelihood tolerance");
    calibrate->add_option("--min-students", co.min_students, "warn below this many students");
    calibrate->add_option("--seed", co.seed, "seed recorded in provenance");
    calibrate->add_flag("--embed-bank", co.embed_bank, "store the question bank in the model");
    calibrate->add_option("--config", co.config, "JSON file with option defaults");

    LearnBnOptions lo;
    auto* learn = app.add_subcommand("learn-bn", "learn Bayesian network parameters by EM");
    add_data_options(learn, lo.in);
    learn->add_option("--model", lo.model, "initial network JSON")->required();
    learn->add_option("--out", lo.out, "model envelope to write")->required();
    learn->add_option("--trace", lo.trace, "write the log-likelihood trace CSV here");
    learn->add_option("--id", lo.id, "model id");
    learn->add_option("--pseudocount", lo.pseudocount, "added to every expected count");
    learn->add_option("--tol", lo.tol, "EM tolerance");
    learn->add_option("--max-iters", lo.max_iters, "EM iteration cap");
    learn->add_option("--weights", lo.weights, "skill weights: keep | equal | equal_impact")
        ->check(CLI::IsMember({"keep", "equal", "equal_impact"}));
    learn->add_flag("--repair-ordinality", lo.repair, "project non-monotone question tables");
    learn->add_option("--seed", lo.seed, "seed recorded in provenance");
    learn->add_option("--config", lo.config, "JSON file with option defaults");

    TrainNnOptions to;
    auto* train = app.add_subcommand("train-nn", "train a feedforward score predictor");
    add_data_options(train, to.in);
    train->add_option("--out", to.out, "model envelope to write")->required();
    train->add_option("--id", to.id, "model id");
    train->add_option("--hidden", to.hidden, "comma-separated hidden layer widths");
    train->add_option("--activation", to.activation, "sigmoid | tanh")->check(CLI::IsMember({"sigmoid", "tanh"}));
    train->add_option("--encoding", to.encoding, "zero_one | neg_one | points")->check(CLI::IsMember({"zero_one", "neg_one", "points"}));
    train->add_option("--missing", to.missing, "zero_fill | item_mean")->check(CLI::IsMember({"zero_fill", "item_mean"}));
    train->add_option("--epochs", to.epochs, "training epochs");
    train->add_option("--lr", to.lr, "learning rate");
    train->add_option("--momentum", to.momentum, "momentum");
    train->add_option("--batch", to.batch, "mini-batch size");
    train->add_option("--validation", to.validation, "held-out fraction");
    train->add_option("--seed", to.seed, "initialization and shuffling seed");
    train->add_flag("--embed-bank", to.embed_bank, "store the question bank in the model");
    train->add_option("--config", to.config, "JSON file with option defaults");

    SimulateOptions so;
    auto* simulate = app.add_subcommand("simulate", "compare selection policies on a simulated cohort");
    simulate->add_option("--scenario", so.scenario, "scenario JSON")->required();
    simulate->add_option("--out", so.out, "report JSON (default: next to the scenario)");
    simulate->add_option("--series", so.series, "plot-ready CSV series");
    simulate->add_option("--seed", so.seed, "overrides the scenario seed");
    simulate->add_option("--threads", so.threads, "worker threads");
    simulate->add_option("--config", so.config, "JSON file with option defaults");

    ServeOptions sv;
    auto* serve = app.add_subcommand("serve", "HTTP session service");
    serve->add_option("--models-dir", sv.models_dir, "directory of model envelopes")->required();
    serve->add_option("--bind", sv.bind, "host:port");
    add_stopping_options(serve, sv.stopping);
    serve->add_option("--allow-stopping", sv.allow, "stopping kinds clients may request (comma-separated)");
    serve->add_flag("--transcript-access", sv.transcript_access, "allow transcript reads mid-test");
    serve->add_option("--config", sv.config, "JSON file with option defaults");

    TakeOptions tk;
    auto* take = app.add_subcommand("take", "take an adaptive test in the terminal");
    take->add_option("--model", tk.model, "model envelope")->required();
    take->add_option("--bank", tk.bank, "question bank JSON (default: the model's)");
    add_stopping_options(take, tk.stopping);
    take->add_option("--transcript", tk.transcript, "write the transcript JSON here");
    take->add_flag("--hide-estimate", tk.hide_estimate, "do not show the running estimate");
    take->add_option("--config", tk.config, "JSON file with option defaults");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitValidation;
    }

    try {
        if (*analyze) {
            apply_config(analyze, ao.config);
            return run_analyze(ao);
        }
        if (*calibrate) {
            apply_config(calibrate, co.config);
            return run_calibrate(co, calibrate);
        }
        if (*learn) {
            apply_config(learn, lo.config);
            return run_learn_bn(lo, learn);
        }
        if (*train) {
            apply_config(train, to.config);
            return run_train_nn(to, train);
        }
        if (*simulate) {
            apply_config(simulate, so.config);
            return run_simulate(so);
        }
        if (*serve) {
            apply_config(serve, sv.config);
            return run_serve(sv);
        }
        if (*take) {
            apply_config(take, tk.config);
            return run_take(tk);
        }
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitValidation;
}
