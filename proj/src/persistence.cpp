#include "adaptest/persistence.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

namespace adaptest::persist {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <typename T>
T field(const json& doc, const char* key) {
    if (!doc.is_object() || !doc.contains(key)) throw ValidationError(std::string("missing field '") + key + "'");
    try {
        return doc.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ValidationError(std::string("field '") + key + "': " + e.what());
    }
}

json numbers_to_json(const std::vector<double>& xs) {
    json arr = json::array();
    for (double x : xs) arr.push_back(number_to_json(x));
    return arr;
}

std::vector<double> numbers_from_json(const json& arr) {
    if (!arr.is_array()) throw ValidationError("expected an array of numbers");
    std::vector<double> out;
    for (const auto& x : arr) out.push_back(number_from_json(x));
    return out;
}

json opt_number(const std::optional<double>& x) { return x ? number_to_json(*x) : json(nullptr); }

std::optional<double> opt_number_from(const json& doc, const char* key) {
    if (!doc.contains(key) || doc.at(key).is_null()) return std::nullopt;
    return number_from_json(doc.at(key));
}

json grid_to_json(const irt::QuadratureGrid& g) {
    return {{"nodes", numbers_to_json(g.nodes())},
            {"weights", numbers_to_json(g.weights())},
            {"prior_mean", number_to_json(g.prior_mean())},
            {"prior_sd", number_to_json(g.prior_sd())}};
}

irt::QuadratureGrid grid_from_json(const json& doc) {
    return irt::QuadratureGrid(numbers_from_json(doc.at("nodes")), numbers_from_json(doc.at("weights")),
                               number_from_json(doc.at("prior_mean")), number_from_json(doc.at("prior_sd")));
}

json layer_to_json(const nn::Layer& l) {
    return {{"inputs", l.inputs}, {"outputs", l.outputs}, {"weights", numbers_to_json(l.weights)}, {"bias", numbers_to_json(l.bias)}};
}

nn::Layer layer_from_json(const json& doc) {
    return {field<std::size_t>(doc, "inputs"), field<std::size_t>(doc, "outputs"), numbers_from_json(doc.at("weights")),
            numbers_from_json(doc.at("bias"))};
}

QuestionBank derived_bank(const LoadedModel& lm) {
    if (auto p = std::get_if<std::shared_ptr<const irt::IrtModel>>(&lm.model)) return make_boolean_bank((*p)->item_ids);
    if (auto p = std::get_if<std::shared_ptr<const BnModel>>(&lm.model)) {
        std::vector<Item> items;
        for (auto q : (*p)->net.questions()) {
            const auto& var = (*p)->net.variable(q);
            Item item;
            item.id = var.id;
            item.answer_space = var.states;
            item.grade_points = static_cast<int>(var.cardinality()) - 1;
            items.push_back(std::move(item));
        }
        return QuestionBank(std::move(items));
    }
    const auto& m = *std::get<std::shared_ptr<const nn::NeuralModel>>(lm.model);
    if (m.mode == GradeMode::boolean) return make_boolean_bank(m.item_ids);
    std::vector<Item> items;
    for (std::size_t i = 0; i < m.item_ids.size(); ++i) {
        Item item;
        item.id = m.item_ids[i];
        int top = m.outcome_grades.at(i).empty() ? 1 : m.outcome_grades[i].back();
        item.grade_points = std::max(1, top);
        if (item.grade_points == 1) {
            item.answer_space = {"incorrect", "correct"};
        } else {
            for (int g = 0; g <= item.grade_points; ++g) item.answer_space.push_back(std::to_string(g));
        }
        items.push_back(std::move(item));
    }
    return QuestionBank(std::move(items));
}

ModelEnvelope wrap(ModelKind kind, json payload, const std::string& id, const Provenance& prov,
                   const std::optional<QuestionBank>& bank) {
    if (bank) payload["bank"] = bank_to_json(*bank);
    ModelEnvelope env;
    env.kind = kind;
    env.model_id = id;
    env.payload = std::move(payload);
    env.provenance = prov;
    if (env.provenance.created_at.empty()) env.provenance.created_at = utc_timestamp();
    return env;
}

}  // namespace

std::string to_string(ModelKind kind) {
    switch (kind) {
        case ModelKind::irt: return "irt";
        case ModelKind::bn: return "bn";
        case ModelKind::nn: return "nn";
    }
    return "irt";
}

ModelKind model_kind_from_string(const std::string& s) {
    if (s == "irt") return ModelKind::irt;
    if (s == "bn") return ModelKind::bn;
    if (s == "nn") return ModelKind::nn;
    throw ValidationError("unknown model kind '" + s + "'");
}

std::string sha256_hex(std::string_view data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) throw Error("SHA-256 digest failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 0xF]);
    }
    return out;
}

std::string json_digest(const json& doc) { return sha256_hex(doc.dump()); }

std::string file_digest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return sha256_hex(ss.str());
}

std::string utc_timestamp() {
    std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

json number_to_json(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    return x;
}

double number_from_json(const json& j) {
    if (j.is_number()) return j.get<double>();
    if (j.is_string()) {
        const auto& s = j.get_ref<const std::string&>();
        if (s == "inf") return std::numeric_limits<double>::infinity();
        if (s == "-inf") return -std::numeric_limits<double>::infinity();
        if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    }
    throw ValidationError("expected a number, got " + j.dump());
}

json envelope_to_json(const ModelEnvelope& env) {
    json doc;
    doc["format_version"] = env.format_version;
    doc["kind"] = to_string(env.kind);
    doc["model_id"] = env.model_id;
    doc["payload"] = env.payload;
    doc["provenance"] = {{"created_at", env.provenance.created_at},
                         {"seed", env.provenance.seed},
                         {"dataset_digest", env.provenance.dataset_digest},
                         {"config_digest", env.provenance.config_digest}};
    doc["digest"] = json_digest(doc);
    return doc;
}

ModelEnvelope envelope_from_json(const json& doc) {
    if (!doc.is_object()) throw ValidationError("model envelope must be a JSON object");
    int version = field<int>(doc, "format_version");
    if (version != kFormatVersion) {
        throw VersionError("unsupported format_version " + std::to_string(version) + " (supported: " +
                           std::to_string(kFormatVersion) + ")");
    }
    json body = doc;
    std::string digest = field<std::string>(doc, "digest");
    body.erase("digest");
    if (json_digest(body) != digest) throw DigestError("model envelope digest mismatch");
    ModelEnvelope env;
    env.format_version = version;
    env.kind = model_kind_from_string(field<std::string>(doc, "kind"));
    env.model_id = field<std::string>(doc, "model_id");
    env.payload = doc.at("payload");
    const json& p = doc.at("provenance");
    env.provenance = {field<std::string>(p, "created_at"), field<std::uint64_t>(p, "seed"),
                      field<std::string>(p, "dataset_digest"), field<std::string>(p, "config_digest")};
    return env;
}

void write_text_atomic(const std::string& path, const std::string& text) {
    fs::path target(path);
    fs::path dir = target.has_parent_path() ? target.parent_path() : fs::path(".");
    std::random_device rd;
    fs::path tmp = dir / ("." + target.filename().string() + ".tmp" + std::to_string(rd()));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write '" + tmp.string() + "'");
        out << text;
        out.flush();
        if (!out) throw IoError("write to '" + tmp.string() + "' failed");
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove(tmp);
        throw IoError("cannot move '" + tmp.string() + "' to '" + path + "': " + ec.message());
    }
}

void write_json_atomic(const std::string& path, const json& doc) { write_text_atomic(path, doc.dump(2) + "\n"); }

json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ValidationError("'" + path + "' is not valid JSON: " + e.what());
    }
}

void save_model(const ModelEnvelope& env, const std::string& path) { write_json_atomic(path, envelope_to_json(env)); }

ModelEnvelope load_model(const std::string& path) { return envelope_from_json(read_json(path)); }

json irt_to_json(const irt::IrtModel& model) {
    json items = json::array();
    for (std::size_t i = 0; i < model.item_ids.size(); ++i) {
        const auto& p = model.params.at(i);
        items.push_back({{"id", model.item_ids[i]}, {"a", number_to_json(p.a)}, {"b", number_to_json(p.b)}, {"c", number_to_json(p.c)}});
    }
    return {{"items", items}, {"grid", grid_to_json(model.grid)}, {"method", irt::to_string(model.method)}};
}

irt::IrtModel irt_from_json(const json& doc) {
    irt::IrtModel m;
    for (const auto& it : doc.at("items")) {
        m.item_ids.push_back(field<std::string>(it, "id"));
        irt::ItemParams p{number_from_json(it.at("a")), number_from_json(it.at("b")), number_from_json(it.at("c"))};
        irt::validate(p);
        m.params.push_back(p);
    }
    if (doc.contains("grid")) m.grid = grid_from_json(doc.at("grid"));
    if (doc.contains("method")) m.method = irt::estimation_method_from_string(field<std::string>(doc, "method"));
    return m;
}

json bn_to_json(const BnModel& model) {
    const auto& net = model.net;
    json vars = json::array();
    for (const auto& v : net.variables()) {
        json j{{"id", v.id}, {"role", bn::to_string(v.role)}, {"states", v.states}, {"ordinal", v.ordinal}};
        if (!v.state_values.empty()) j["state_values"] = numbers_to_json(v.state_values);
        vars.push_back(j);
    }
    json nodes = json::array();
    for (std::size_t v = 0; v < net.size(); ++v) {
        json j{{"variable", net.variable(v).id}};
        std::vector<std::string> parents;
        for (auto p : net.parents(v)) parents.push_back(net.variable(p).id);
        j["parents"] = parents;
        if (const auto* no = std::get_if<bn::NoisyOrNode>(&net.node(v))) {
            j["type"] = "noisy_or";
            j["link_probs"] = numbers_to_json(no->link_probs);
            j["leak"] = number_to_json(no->leak);
        } else {
            j["type"] = "cpt";
            j["table"] = numbers_to_json(std::get<bn::CptNode>(net.node(v)).table);
        }
        nodes.push_back(j);
    }
    json weights = json::object();
    for (const auto& [id, c] : model.weights.weights) weights[id] = number_to_json(c);
    return {{"variables", vars}, {"nodes", nodes}, {"skill_weights", weights}};
}

BnModel bn_from_json(const json& doc) {
    std::vector<bn::Variable> vars;
    for (const auto& j : doc.at("variables")) {
        bn::Variable v;
        v.id = field<std::string>(j, "id");
        v.role = bn::role_from_string(field<std::string>(j, "role"));
        v.states = field<std::vector<std::string>>(j, "states");
        v.ordinal = j.value("ordinal", false);
        if (j.contains("state_values")) v.state_values = numbers_from_json(j.at("state_values"));
        vars.push_back(std::move(v));
    }
    auto index = [&](const std::string& id) {
        for (std::size_t i = 0; i < vars.size(); ++i) {
            if (vars[i].id == id) return i;
        }
        throw ValidationError("node refers to unknown variable '" + id + "'");
    };
    std::vector<std::optional<bn::NodeModel>> slots(vars.size());
    for (const auto& j : doc.at("nodes")) {
        std::size_t v = index(field<std::string>(j, "variable"));
        if (slots[v]) throw ValidationError("variable '" + vars[v].id + "' has two node definitions");
        std::vector<std::size_t> parents;
        for (const auto& p : field<std::vector<std::string>>(j, "parents")) parents.push_back(index(p));
        std::string type = field<std::string>(j, "type");
        if (type == "cpt") {
            slots[v] = bn::CptNode{parents, numbers_from_json(j.at("table"))};
        } else if (type == "noisy_or") {
            slots[v] = bn::NoisyOrNode{parents, numbers_from_json(j.at("link_probs")), number_from_json(j.at("leak"))};
        } else {
            throw ValidationError("unknown node type '" + type + "'");
        }
    }
    std::vector<bn::NodeModel> nodes;
    for (std::size_t v = 0; v < vars.size(); ++v) {
        if (!slots[v]) throw ValidationError("variable '" + vars[v].id + "' has no node definition");
        nodes.push_back(std::move(*slots[v]));
    }
    BnModel m{bn::BayesNet(std::move(vars), std::move(nodes)), {}};
    if (doc.contains("skill_weights")) {
        for (const auto& [id, c] : doc.at("skill_weights").items()) {
            std::size_t v = m.net.require(id);
            if (m.net.variable(v).role != bn::Role::skill) throw ValidationError("weight given for non-skill '" + id + "'");
            m.weights.weights[id] = number_from_json(c);
        }
    } else {
        m.weights = bn::equal_weights(m.net);
    }
    return m;
}

json nn_to_json(const nn::NeuralModel& model) {
    json layers = json::array();
    for (const auto& l : model.weights.layers) layers.push_back(layer_to_json(l));
    json outcomes = json::array();
    for (std::size_t i = 0; i < model.outcome_grades.size(); ++i) {
        outcomes.push_back({{"grades", model.outcome_grades[i]}, {"probs", numbers_to_json(model.outcome_probs.at(i))}});
    }
    return {{"item_ids", model.item_ids},
            {"mode", std::string(to_string(model.mode))},
            {"spec",
             {{"input_size", model.spec.input_size},
              {"hidden_layers", model.spec.hidden_layers},
              {"activation", nn::to_string(model.spec.activation)}}},
            {"encoding",
             {{"scheme", nn::to_string(model.encoding.scheme)},
              {"missing_policy", nn::to_string(model.encoding.missing_policy)},
              {"item_means", numbers_to_json(model.encoding.item_means)}}},
            {"layers", layers},
            {"output_scale", number_to_json(model.output_scale)},
            {"outcomes", outcomes},
            {"training",
             {{"seed", model.metadata.seed},
              {"epochs", model.metadata.epochs},
              {"best_epoch", model.metadata.best_epoch},
              {"final_train_loss", number_to_json(model.metadata.final_train_loss)},
              {"final_validation_loss", number_to_json(model.metadata.final_validation_loss)}}}};
}

nn::NeuralModel nn_from_json(const json& doc) {
    nn::NeuralModel m;
    m.item_ids = field<std::vector<std::string>>(doc, "item_ids");
    m.mode = grade_mode_from_string(field<std::string>(doc, "mode"));
    const json& spec = doc.at("spec");
    m.spec.input_size = field<std::size_t>(spec, "input_size");
    m.spec.hidden_layers = field<std::vector<std::size_t>>(spec, "hidden_layers");
    m.spec.activation = nn::activation_from_string(field<std::string>(spec, "activation"));
    nn::validate(m.spec);
    if (m.spec.input_size != m.item_ids.size()) throw ValidationError("network input size does not match item_ids");
    const json& enc = doc.at("encoding");
    m.encoding.scheme = nn::encoding_scheme_from_string(field<std::string>(enc, "scheme"));
    m.encoding.missing_policy = nn::missing_policy_from_string(field<std::string>(enc, "missing_policy"));
    m.encoding.item_means = numbers_from_json(enc.at("item_means"));
    for (const auto& l : doc.at("layers")) m.weights.layers.push_back(layer_from_json(l));
    nn::check_shapes(m.spec, m.weights);
    m.output_scale = number_from_json(doc.at("output_scale"));
    for (const auto& o : doc.at("outcomes")) {
        m.outcome_grades.push_back(field<std::vector<int>>(o, "grades"));
        m.outcome_probs.push_back(numbers_from_json(o.at("probs")));
        if (m.outcome_grades.back().size() != m.outcome_probs.back().size()) {
            throw ValidationError("outcome grades and probabilities differ in length");
        }
    }
    if (m.outcome_grades.size() != m.item_ids.size()) throw ValidationError("one outcome distribution per item required");
    const json& t = doc.at("training");
    m.metadata = {field<std::uint64_t>(t, "seed"), field<int>(t, "epochs"), field<int>(t, "best_epoch"),
                  number_from_json(t.at("final_train_loss")), number_from_json(t.at("final_validation_loss"))};
    return m;
}

json estimate_to_json(const cat::EstimateView& e) {
    json doc{{"kind", cat::to_string(e.kind)},
             {"value", number_to_json(e.value)},
             {"uncertainty", opt_number(e.uncertainty)},
             {"expected_score", opt_number(e.expected_score)}};
    if (!e.skill_marginals.empty()) {
        json m = json::object();
        for (const auto& [id, dist] : e.skill_marginals) m[id] = numbers_to_json(dist);
        doc["skill_marginals"] = m;
    }
    return doc;
}

cat::EstimateView estimate_from_json(const json& doc) {
    cat::EstimateView e;
    e.kind = cat::estimate_kind_from_string(field<std::string>(doc, "kind"));
    e.value = number_from_json(doc.at("value"));
    e.uncertainty = opt_number_from(doc, "uncertainty");
    e.expected_score = opt_number_from(doc, "expected_score");
    if (doc.contains("skill_marginals")) {
        for (const auto& [id, dist] : doc.at("skill_marginals").items()) e.skill_marginals[id] = numbers_from_json(dist);
    }
    return e;
}

json transcript_to_json(const cat::Transcript& t) {
    json records = json::array();
    for (const auto& r : t.records) {
        json j{{"step", r.step},
               {"question_id", r.question_id},
               {"outcome", r.outcome},
               {"estimate", number_to_json(r.estimate)},
               {"uncertainty", opt_number(r.uncertainty)},
               {"expected_score", opt_number(r.expected_score)}};
        if (r.timestamp) j["timestamp"] = number_to_json(*r.timestamp);
        records.push_back(j);
    }
    return {{"model_kind", t.model_kind},
            {"records", records},
            {"final_estimate", estimate_to_json(t.final_estimate)},
            {"stop_reason", t.stop_reason},
            {"aborted", t.aborted}};
}

cat::Transcript transcript_from_json(const json& doc) {
    cat::Transcript t;
    t.model_kind = field<std::string>(doc, "model_kind");
    for (const auto& j : doc.at("records")) {
        cat::TranscriptRecord r;
        r.step = field<std::size_t>(j, "step");
        r.question_id = field<std::string>(j, "question_id");
        r.outcome = field<std::size_t>(j, "outcome");
        r.estimate = number_from_json(j.at("estimate"));
        r.uncertainty = opt_number_from(j, "uncertainty");
        r.expected_score = opt_number_from(j, "expected_score");
        r.timestamp = opt_number_from(j, "timestamp");
        t.records.push_back(std::move(r));
    }
    t.final_estimate = estimate_from_json(doc.at("final_estimate"));
    t.stop_reason = field<std::string>(doc, "stop_reason");
    t.aborted = field<bool>(doc, "aborted");
    return t;
}

std::unique_ptr<cat::StudentModel> LoadedModel::make_student(std::shared_ptr<const QuestionBank> bank_override) const {
    auto b = bank_override ? bank_override : bank;
    if (auto p = std::get_if<std::shared_ptr<const irt::IrtModel>>(&model)) return std::make_unique<cat::IrtStudentModel>(*p, b);
    if (auto p = std::get_if<std::shared_ptr<const BnModel>>(&model)) {
        return std::make_unique<cat::BnStudentModel>(std::shared_ptr<const bn::BayesNet>(*p, &(*p)->net), (*p)->weights, b);
    }
    return std::make_unique<cat::NnStudentModel>(std::get<std::shared_ptr<const nn::NeuralModel>>(model), b);
}

LoadedModel decode(const ModelEnvelope& env) {
    LoadedModel lm;
    lm.envelope = env;
    try {
        switch (env.kind) {
            case ModelKind::irt: lm.model = std::make_shared<const irt::IrtModel>(irt_from_json(env.payload)); break;
            case ModelKind::bn: lm.model = std::make_shared<const BnModel>(bn_from_json(env.payload)); break;
            case ModelKind::nn: lm.model = std::make_shared<const nn::NeuralModel>(nn_from_json(env.payload)); break;
        }
    } catch (const json::exception& e) {
        throw ValidationError("model '" + env.model_id + "': malformed payload: " + e.what());
    }
    lm.bank = std::make_shared<const QuestionBank>(env.payload.contains("bank") ? bank_from_json(env.payload.at("bank"))
                                                                                 : derived_bank(lm));
    return lm;
}

ModelEnvelope make_envelope(const irt::IrtModel& model, const std::string& id, const Provenance& prov,
                            const std::optional<QuestionBank>& bank) {
    return wrap(ModelKind::irt, irt_to_json(model), id, prov, bank);
}

ModelEnvelope make_envelope(const BnModel& model, const std::string& id, const Provenance& prov,
                            const std::optional<QuestionBank>& bank) {
    return wrap(ModelKind::bn, bn_to_json(model), id, prov, bank);
}

ModelEnvelope make_envelope(const nn::NeuralModel& model, const std::string& id, const Provenance& prov,
                            const std::optional<QuestionBank>& bank) {
    return wrap(ModelKind::nn, nn_to_json(model), id, prov, bank);
}

}  // namespace adaptest::persist
