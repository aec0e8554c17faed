#include "adaptest/service.hpp"

#include "adaptest/error.hpp"

#include <httplib.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <random>
#include <regex>

namespace adaptest::service {

using nlohmann::json;

Response error_response(int status, const std::string& code, const std::string& message, const json& detail) {
    return {status, {{"code", code}, {"message", message}, {"detail", detail}}};
}

SessionService::SessionService(std::vector<persist::LoadedModel> models, ServiceConfig config)
    : config_(std::move(config)) {
    for (auto& m : models) {
        std::string id = m.envelope.model_id;
        if (!models_.emplace(id, std::move(m)).second) throw ValidationError("duplicate model id '" + id + "'");
    }
    config_.default_stopping.validate();
    if (!config_.clock) config_.clock = cat::steady_clock();
}

std::vector<persist::LoadedModel> SessionService::load_models_dir(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw ValidationError("'" + dir + "' is not a directory");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<persist::LoadedModel> out;
    for (const auto& f : files) {
        try {
            out.push_back(persist::decode(persist::load_model(f.string())));
        } catch (const Error& e) {
            throw ValidationError("'" + f.string() + "': " + e.what());
        }
    }
    return out;
}

std::string SessionService::new_session_id() {
    std::random_device rd;
    std::uint64_t hi = (std::uint64_t{rd()} << 32) | rd();
    std::uint64_t lo = (std::uint64_t{rd()} << 32) | rd();
    char buf[33];
    std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(hi), static_cast<unsigned long long>(lo));
    return buf;
}

std::size_t SessionService::session_count() const {
    std::lock_guard lock(mutex_);
    return sessions_.size();
}

std::shared_ptr<SessionService::Entry> SessionService::find(const std::string& session_id) const {
    std::lock_guard lock(mutex_);
    auto it = sessions_.find(session_id);
    return it == sessions_.end() ? nullptr : it->second;
}

json SessionService::resource(const Entry& entry) const {
    const auto& s = *entry.session;
    json doc;
    doc["session_id"] = entry.id;
    doc["model_id"] = entry.model_id;
    doc["state"] = s.finished() ? "finished" : "running";
    if (entry.current && !s.finished()) {
        const Item& item = s.bank().item(*entry.current);
        doc["current_question"] = {{"id", item.id}, {"text", item.text}, {"answer_options", item.answer_space}};
    } else {
        doc["current_question"] = nullptr;
    }
    doc["progress"] = {{"asked", s.asked_count()}, {"total", s.bank().size()}};
    const auto& e = s.estimate();
    doc["estimate"] = {{"kind", cat::to_string(e.kind)},
                       {"value", persist::number_to_json(e.value)},
                       {"uncertainty", e.uncertainty ? persist::number_to_json(*e.uncertainty) : json(nullptr)},
                       {"expected_score", e.expected_score ? persist::number_to_json(*e.expected_score) : json(nullptr)}};
    doc["stop_reason"] = s.finished() ? json(s.stop_reason()) : json(nullptr);
    doc["transcript_available"] = s.finished() || config_.transcript_access_mid_test;
    return doc;
}

Response SessionService::create_session(const json& body) {
    if (!body.is_object()) return error_response(422, "invalid_request", "request body must be a JSON object");
    if (!body.contains("model_id") || !body.at("model_id").is_string()) {
        return error_response(422, "invalid_request", "model_id is required");
    }
    std::string model_id = body.at("model_id").get<std::string>();
    auto mit = models_.find(model_id);
    if (mit == models_.end()) return error_response(404, "unknown_model", "no model '" + model_id + "' is loaded");

    cat::StoppingRule stopping = config_.default_stopping;
    if (body.contains("stopping") && !body.at("stopping").is_null()) {
        try {
            stopping = cat::stopping_from_json(body.at("stopping"));
        } catch (const ValidationError& e) {
            return error_response(422, "invalid_stopping", e.what());
        }
        for (const auto& c : stopping.conditions) {
            if (c.kind != cat::StoppingKind::exhausted && !config_.allowed_stopping.count(c.kind)) {
                return error_response(422, "invalid_stopping", "stopping rule '" + cat::to_string(c.kind) + "' is not permitted");
            }
        }
    }

    auto entry = std::make_shared<Entry>();
    entry->model_id = model_id;
    try {
        cat::SessionOptions opts{config_.record_timestamps, config_.clock};
        entry->session = std::make_unique<cat::TestSession>(mit->second.bank, mit->second.make_student(), stopping,
                                                            std::make_unique<cat::GreedyStrategy>(), opts);
    } catch (const ValidationError& e) {
        return error_response(422, "invalid_model", e.what());
    }
    auto next = entry->session->next_question();
    if (next.question) {
        entry->current = next.question;
    } else {
        entry->session->mark_finished(next.stop_reason);
    }
    {
        std::lock_guard lock(mutex_);
        do {
            entry->id = new_session_id();
        } while (sessions_.count(entry->id));
        sessions_[entry->id] = entry;
    }
    return {201, resource(*entry)};
}

Response SessionService::submit_answer(const std::string& session_id, const json& body) {
    auto entry = find(session_id);
    if (!entry) return error_response(404, "unknown_session", "no session '" + session_id + "'");
    std::unique_lock lock(entry->mutex, std::try_to_lock);
    if (!lock.owns_lock()) return error_response(409, "session_busy", "another request is updating this session");

    if (!body.is_object() || !body.contains("question_id") || !body.at("question_id").is_string() ||
        !body.contains("outcome")) {
        return error_response(422, "invalid_request", "question_id and outcome are required");
    }
    auto& session = *entry->session;
    if (session.finished()) return error_response(409, "session_finished", "the test is already finished");
    const std::string qid = body.at("question_id").get<std::string>();
    const Item& item = session.bank().item(*entry->current);
    if (qid != item.id) {
        return error_response(409, "stale_question", "question '" + qid + "' is not the current question",
                              {{"current_question", item.id}});
    }
    std::optional<std::size_t> outcome;
    const json& o = body.at("outcome");
    if (o.is_number_integer()) {
        auto v = o.get<std::int64_t>();
        if (v >= 0 && static_cast<std::uint64_t>(v) < item.state_count()) outcome = static_cast<std::size_t>(v);
    } else if (o.is_string()) {
        for (std::size_t s = 0; s < item.answer_space.size(); ++s) {
            if (item.answer_space[s] == o.get<std::string>()) outcome = s;
        }
    }
    if (!outcome) {
        return error_response(422, "invalid_outcome", "outcome is not an answer option of '" + item.id + "'",
                              {{"answer_options", item.answer_space}});
    }
    try {
        session.submit_answer(*entry->current, *outcome);
    } catch (const InconsistentEvidence& e) {
        return error_response(422, "invalid_outcome", e.what());
    }
    auto next = session.next_question();
    if (next.question) {
        entry->current = next.question;
    } else {
        entry->current.reset();
        session.mark_finished(next.stop_reason);
    }
    return {200, resource(*entry)};
}

Response SessionService::get_session(const std::string& session_id) const {
    auto entry = find(session_id);
    if (!entry) return error_response(404, "unknown_session", "no session '" + session_id + "'");
    std::lock_guard lock(entry->mutex);
    return {200, resource(*entry)};
}

Response SessionService::get_transcript(const std::string& session_id) const {
    auto entry = find(session_id);
    if (!entry) return error_response(404, "unknown_session", "no session '" + session_id + "'");
    std::lock_guard lock(entry->mutex);
    if (!entry->session->finished() && !config_.transcript_access_mid_test) {
        return error_response(403, "transcript_unavailable", "the transcript is available once the test is finished");
    }
    return {200, persist::transcript_to_json(entry->session->transcript())};
}

Response SessionService::list_models() const {
    json models = json::array();
    for (const auto& [id, m] : models_) {
        models.push_back({{"model_id", id},
                          {"kind", persist::to_string(m.envelope.kind)},
                          {"items", m.bank->size()},
                          {"created_at", m.envelope.provenance.created_at}});
    }
    return {200, {{"models", models}}};
}

Response SessionService::handle(const std::string& method, const std::string& path, const std::string& body) {
    static const std::regex session_re("^/sessions/([0-9a-f]+)$");
    static const std::regex answers_re("^/sessions/([0-9a-f]+)/answers$");
    static const std::regex transcript_re("^/sessions/([0-9a-f]+)/transcript$");
    auto parse_body = [&](json& out) -> std::optional<Response> {
        try {
            out = body.empty() ? json::object() : json::parse(body);
            return std::nullopt;
        } catch (const json::parse_error& e) {
            return error_response(400, "bad_json", "request body is not valid JSON", e.what());
        }
    };
    std::smatch m;
    try {
        if (method == "GET" && path == "/models") return list_models();
        if (method == "POST" && path == "/sessions") {
            json doc;
            if (auto err = parse_body(doc)) return *err;
            return create_session(doc);
        }
        if (method == "POST" && std::regex_match(path, m, answers_re)) {
            json doc;
            if (auto err = parse_body(doc)) return *err;
            return submit_answer(m[1], doc);
        }
        if (method == "GET" && std::regex_match(path, m, transcript_re)) return get_transcript(m[1]);
        if (method == "GET" && std::regex_match(path, m, session_re)) return get_session(m[1]);
        if (path.rfind("/sessions/", 0) == 0) return error_response(404, "unknown_session", "no such session");
        return error_response(404, "not_found", "no route for " + method + " " + path);
    } catch (const ValidationError& e) {
        return error_response(422, "invalid_request", e.what());
    } catch (const std::exception& e) {
        return error_response(500, "internal_error", e.what());
    }
}

void serve(SessionService& service, const std::string& host, int port) {
    httplib::Server server;
    auto adapt = [&service](const httplib::Request& req, httplib::Response& res) {
        Response r = service.handle(req.method, req.path, req.body);
        res.status = r.status;
        res.set_header("Access-Control-Allow-Origin", "*");
        res.set_content(r.body.dump(), "application/json");
    };
    server.Get(R"(/.*)", adapt);
    server.Post(R"(/.*)", adapt);
    server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) {
        res.set_header("Access-Control-Allow-Origin", "*");
        res.set_header("Access-Control-Allow-Headers", "Content-Type");
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.status = 204;
    });
    if (!server.listen(host, port)) throw Error("cannot listen on " + host + ":" + std::to_string(port));
}

}  // namespace adaptest::service
