#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>

#include <json.hpp>

#include "adaptest/bayesnet.hpp"
#include "adaptest/data_model.hpp"
#include "adaptest/engine.hpp"
#include "adaptest/error.hpp"
#include "adaptest/irt.hpp"
#include "adaptest/neuralnet.hpp"

namespace adaptest::persist {

inline constexpr int kFormatVersion = 1;

class IoError : public Error {
public:
    using Error::Error;
};

// Envelope written by a newer (or unknown) format version.
class VersionError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class DigestError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

enum class ModelKind { irt, bn, nn };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& s);

struct Provenance {
    std::string created_at;  // ISO 8601, UTC
    std::uint64_t seed = 0;
    std::string dataset_digest;
    std::string config_digest;

    bool operator==(const Provenance& other) const = default;
};

struct ModelEnvelope {
    int format_version = kFormatVersion;
    ModelKind kind = ModelKind::irt;
    std::string model_id;
    nlohmann::json payload;
    Provenance provenance;

    bool operator==(const ModelEnvelope& other) const = default;
};

std::string sha256_hex(std::string_view data);
// Digest of the compact, key-sorted serialization.
std::string json_digest(const nlohmann::json& doc);
std::string file_digest(const std::string& path);
std::string utc_timestamp();

nlohmann::json envelope_to_json(const ModelEnvelope& env);
// Checks the version before anything else, then the digest.
ModelEnvelope envelope_from_json(const nlohmann::json& doc);

void save_model(const ModelEnvelope& env, const std::string& path);
ModelEnvelope load_model(const std::string& path);

// Temp file + rename in the target directory.
void write_text_atomic(const std::string& path, const std::string& text);
void write_json_atomic(const std::string& path, const nlohmann::json& doc);
nlohmann::json read_json(const std::string& path);

// Doubles with full precision; non-finite values as "inf", "-inf", "nan".
nlohmann::json number_to_json(double x);
double number_from_json(const nlohmann::json& j);

nlohmann::json irt_to_json(const irt::IrtModel& model);
irt::IrtModel irt_from_json(const nlohmann::json& doc);

struct BnModel {
    bn::BayesNet net;
    bn::SkillWeights weights;

    bool operator==(const BnModel& other) const = default;
};

nlohmann::json bn_to_json(const BnModel& model);
BnModel bn_from_json(const nlohmann::json& doc);

nlohmann::json nn_to_json(const nn::NeuralModel& model);
nn::NeuralModel nn_from_json(const nlohmann::json& doc);

nlohmann::json estimate_to_json(const cat::EstimateView& e);
cat::EstimateView estimate_from_json(const nlohmann::json& doc);

nlohmann::json transcript_to_json(const cat::Transcript& t);
cat::Transcript transcript_from_json(const nlohmann::json& doc);

// A decoded envelope. The payload may embed the question bank under
// "bank"; otherwise one is derived from the model (boolean items).
struct LoadedModel {
    ModelEnvelope envelope;
    std::shared_ptr<const QuestionBank> bank;
    std::variant<std::shared_ptr<const irt::IrtModel>, std::shared_ptr<const BnModel>,
                 std::shared_ptr<const nn::NeuralModel>>
        model;

    std::unique_ptr<cat::StudentModel> make_student(std::shared_ptr<const QuestionBank> bank_override = nullptr) const;
};

LoadedModel decode(const ModelEnvelope& env);

ModelEnvelope make_envelope(const irt::IrtModel& model, const std::string& id, const Provenance& prov,
                            const std::optional<QuestionBank>& bank = std::nullopt);
ModelEnvelope make_envelope(const BnModel& model, const std::string& id, const Provenance& prov,
                            const std::optional<QuestionBank>& bank = std::nullopt);
ModelEnvelope make_envelope(const nn::NeuralModel& model, const std::string& id, const Provenance& prov,
                            const std::optional<QuestionBank>& bank = std::nullopt);

}  // namespace adaptest::persist
