#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "adaptest/engine.hpp"
#include "adaptest/persistence.hpp"

namespace adaptest::service {

struct Response {
    int status = 200;
    nlohmann::json body;
};

struct ServiceConfig {
    // Applied when a client sends no stopping rule.
    cat::StoppingRule default_stopping;
    // Stopping kinds a client may request.
    std::set<cat::StoppingKind> allowed_stopping{cat::StoppingKind::max_questions, cat::StoppingKind::se_threshold,
                                                 cat::StoppingKind::entropy_threshold, cat::StoppingKind::time_limit};
    bool transcript_access_mid_test = false;
    bool record_timestamps = true;
    cat::Clock clock;  // defaults to the steady clock
};

// Transport-independent session API. Every method is safe to call from
// concurrent request threads; one mutation per session at a time, later
// ones are rejected with 409.
class SessionService {
public:
    SessionService(std::vector<persist::LoadedModel> models, ServiceConfig config = {});

    Response create_session(const nlohmann::json& body);
    Response submit_answer(const std::string& session_id, const nlohmann::json& body);
    Response get_session(const std::string& session_id) const;
    Response get_transcript(const std::string& session_id) const;
    Response list_models() const;

    // Routes a request by method and path; `body` is the raw request text.
    Response handle(const std::string& method, const std::string& path, const std::string& body);

    std::size_t session_count() const;

    // Every *.json envelope in `dir`, sorted by file name.
    static std::vector<persist::LoadedModel> load_models_dir(const std::string& dir);

private:
    struct Entry {
        std::string id;
        std::string model_id;
        std::unique_ptr<cat::TestSession> session;
        std::optional<std::size_t> current;
        mutable std::mutex mutex;
    };

    std::shared_ptr<Entry> find(const std::string& session_id) const;
    nlohmann::json resource(const Entry& entry) const;
    std::string new_session_id();

    std::map<std::string, persist::LoadedModel> models_;
    ServiceConfig config_;
    mutable std::mutex mutex_;
    std::map<std::string, std::shared_ptr<Entry>> sessions_;
};

Response error_response(int status, const std::string& code, const std::string& message,
                        const nlohmann::json& detail = nullptr);

// Blocks serving HTTP on host:port until the process is stopped.
void serve(SessionService& service, const std::string& host, int port);

}  // namespace adaptest::service
