#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace adaptest {

// Sentinel state for auxiliary factors the student did not report.
inline constexpr std::string_view kUnknown = "unknown";

// One question (subproblem) of the bank. Answer states are indexed; by
// convention a two-state item lists {"incorrect", "correct"} so that the
// state index equals the awarded points when grade_points == 1.
struct Item {
    std::string id;
    std::string text;
    std::vector<std::string> answer_space;
    int grade_points = 1;
    std::optional<std::string> parent_problem;
    // Points awarded per answer state. Empty means the default mapping:
    // index == points when there are grade_points + 1 states, otherwise
    // {0, grade_points} for two-state items.
    std::vector<int> state_points;

    int points_for(std::size_t state) const;
    std::size_t state_count() const { return answer_space.size(); }

    bool operator==(const Item& other) const = default;
};

class QuestionBank {
public:
    QuestionBank() = default;
    // Validates ids, answer spaces and subproblem grade sums. `problems`
    // maps a parent problem id to its grade; when present, the subproblems
    // of each listed parent must sum to that grade.
    explicit QuestionBank(std::vector<Item> items, std::map<std::string, int> problems = {});

    const std::vector<Item>& items() const { return items_; }
    const Item& item(std::size_t i) const { return items_.at(i); }
    std::size_t size() const { return items_.size(); }
    int max_score() const { return max_score_; }
    const std::map<std::string, int>& problems() const { return problems_; }
    std::optional<std::size_t> index_of(std::string_view id) const;

    bool operator==(const QuestionBank& other) const = default;

private:
    std::vector<Item> items_;
    std::map<std::string, int> problems_;
    int max_score_ = 0;
};

// Bank of `ids.size()` correct/incorrect items worth one point each.
QuestionBank make_boolean_bank(const std::vector<std::string>& ids);

QuestionBank bank_from_json(const nlohmann::json& doc);
nlohmann::json bank_to_json(const QuestionBank& bank);
QuestionBank load_bank(const std::string& path);

enum class GradeMode { numeric, boolean };

std::string_view to_string(GradeMode mode);
GradeMode grade_mode_from_string(std::string_view s);

struct StudentRecord {
    std::string id;
    std::vector<std::optional<int>> grades;  // aligned with ResponseDataset::item_ids
    std::map<std::string, std::string> info;  // every declared factor present; kUnknown when blank

    bool operator==(const StudentRecord& other) const = default;
};

struct ResponseDataset {
    GradeMode mode = GradeMode::numeric;
    std::vector<std::string> item_ids;
    std::vector<int> grade_points;  // per item column
    std::vector<std::string> info_names;
    std::vector<StudentRecord> students;

    std::size_t item_count() const { return item_ids.size(); }
    std::optional<std::size_t> column_of(std::string_view item_id) const;
    int max_score() const;

    bool operator==(const ResponseDataset& other) const = default;
};

// Parses the dataset CSV: `student_id,<item_id>...,info:<NAME>...`.
// Errors carry the 1-based row and column of the offending cell.
ResponseDataset parse_dataset(std::istream& in, const QuestionBank& bank, GradeMode mode,
                              std::string_view source = "<stream>");
ResponseDataset load_dataset(const std::string& path, const QuestionBank& bank, GradeMode mode);

void write_dataset(std::ostream& out, const ResponseDataset& dataset);
void save_dataset(const std::string& path, const ResponseDataset& dataset);

// Sum of the non-missing grades; missing cells earn nothing.
int raw_score(const StudentRecord& record);

std::vector<double> raw_scores(const ResponseDataset& dataset);

}  // namespace adaptest
