#include "adaptest/data_model.hpp"

#include "adaptest/error.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

namespace adaptest {

namespace {

std::string cell_position(std::string_view source, std::size_t row, std::size_t col) {
    std::ostringstream os;
    os << source << ": row " << row << ", column " << col;
    return os.str();
}

// Splits one CSV record. Quoted fields may contain commas and doubled quotes.
std::vector<std::string> split_csv_line(const std::string& line, std::string_view source,
                                        std::size_t row) {
    std::vector<std::string> cells;
    std::string cur;
    bool quoted = false;
    bool was_quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char ch = line[i];
        if (quoted) {
            if (ch == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(ch);
            }
        } else if (ch == '"') {
            if (!cur.empty()) {
                throw ValidationError(cell_position(source, row, cells.size() + 1) +
                                      ": stray quote inside unquoted cell");
            }
            quoted = true;
            was_quoted = true;
        } else if (ch == ',') {
            cells.push_back(std::move(cur));
            cur.clear();
            was_quoted = false;
        } else {
            if (was_quoted) {
                throw ValidationError(cell_position(source, row, cells.size() + 1) +
                                      ": text after closing quote");
            }
            cur.push_back(ch);
        }
    }
    if (quoted) {
        throw ValidationError(cell_position(source, row, cells.size() + 1) + ": unterminated quote");
    }
    cells.push_back(std::move(cur));
    return cells;
}

std::string quote_csv(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos && (s.empty() || s.front() != ' ')) {
        return s;
    }
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out.push_back('"');
        out.push_back(ch);
    }
    out.push_back('"');
    return out;
}

std::optional<int> parse_nonneg_int(std::string_view s) {
    int value = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc() || ptr != s.data() + s.size() || value < 0) return std::nullopt;
    return value;
}

constexpr std::string_view kInfoPrefix = "info:";

}  // namespace

int Item::points_for(std::size_t state) const {
    if (state >= answer_space.size()) {
        throw ValidationError("item '" + id + "': answer state " + std::to_string(state) +
                              " out of range");
    }
    if (!state_points.empty()) return state_points[state];
    if (answer_space.size() == static_cast<std::size_t>(grade_points) + 1) {
        return static_cast<int>(state);
    }
    return state == 0 ? 0 : grade_points;
}

QuestionBank::QuestionBank(std::vector<Item> items, std::map<std::string, int> problems)
    : items_(std::move(items)), problems_(std::move(problems)) {
    std::set<std::string> seen;
    std::map<std::string, int> parent_sums;
    max_score_ = 0;
    for (const Item& item : items_) {
        if (item.id.empty()) throw ValidationError("item with empty id");
        if (!seen.insert(item.id).second) throw ValidationError("duplicate item id '" + item.id + "'");
        if (item.answer_space.size() < 2) {
            throw ValidationError("item '" + item.id + "' needs at least two answer states");
        }
        if (item.grade_points < 0) {
            throw ValidationError("item '" + item.id + "' has negative grade_points");
        }
        if (!item.state_points.empty()) {
            if (item.state_points.size() != item.answer_space.size()) {
                throw ValidationError("item '" + item.id + "': state_points size mismatch");
            }
            for (int p : item.state_points) {
                if (p < 0 || p > item.grade_points) {
                    throw ValidationError("item '" + item.id + "': state points outside [0, grade_points]");
                }
            }
        } else if (item.answer_space.size() != static_cast<std::size_t>(item.grade_points) + 1 &&
                   item.answer_space.size() != 2) {
            throw ValidationError("item '" + item.id +
                                  "': answer states cannot be mapped to points; give state_points");
        }
        if (item.parent_problem) parent_sums[*item.parent_problem] += item.grade_points;
        max_score_ += item.grade_points;
    }
    for (const auto& [parent, grade] : problems_) {
        auto it = parent_sums.find(parent);
        int sum = it == parent_sums.end() ? 0 : it->second;
        if (sum != grade) {
            throw ValidationError("subproblems of '" + parent + "' sum to " + std::to_string(sum) +
                                  " points, parent grade is " + std::to_string(grade));
        }
    }
}

std::optional<std::size_t> QuestionBank::index_of(std::string_view id) const {
    for (std::size_t i = 0; i < items_.size(); ++i) {
        if (items_[i].id == id) return i;
    }
    return std::nullopt;
}

QuestionBank make_boolean_bank(const std::vector<std::string>& ids) {
    std::vector<Item> items;
    items.reserve(ids.size());
    for (const auto& id : ids) {
        Item item;
        item.id = id;
        item.text = id;
        item.answer_space = {"incorrect", "correct"};
        item.grade_points = 1;
        items.push_back(std::move(item));
    }
    return QuestionBank(std::move(items));
}

QuestionBank bank_from_json(const nlohmann::json& doc) {
    try {
        std::vector<Item> items;
        for (const auto& j : doc.at("items")) {
            Item item;
            item.id = j.at("id").get<std::string>();
            item.text = j.value("text", item.id);
            item.grade_points = j.value("grade_points", 1);
            if (j.contains("answer_space")) {
                item.answer_space = j.at("answer_space").get<std::vector<std::string>>();
            } else if (item.grade_points == 1) {
                item.answer_space = {"incorrect", "correct"};
            } else {
                for (int p = 0; p <= item.grade_points; ++p) item.answer_space.push_back(std::to_string(p));
            }
            if (j.contains("parent_problem") && !j.at("parent_problem").is_null()) {
                item.parent_problem = j.at("parent_problem").get<std::string>();
            }
            if (j.contains("state_points")) item.state_points = j.at("state_points").get<std::vector<int>>();
            items.push_back(std::move(item));
        }
        std::map<std::string, int> problems;
        if (doc.contains("problems")) {
            for (const auto& p : doc.at("problems")) {
                problems[p.at("id").get<std::string>()] = p.at("grade_points").get<int>();
            }
        }
        QuestionBank bank(std::move(items), std::move(problems));
        if (doc.contains("max_score") && doc.at("max_score").get<int>() != bank.max_score()) {
            throw ValidationError("bank max_score " + doc.at("max_score").dump() +
                                  " differs from item total " + std::to_string(bank.max_score()));
        }
        return bank;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("question bank: ") + e.what());
    }
}

nlohmann::json bank_to_json(const QuestionBank& bank) {
    nlohmann::json items = nlohmann::json::array();
    for (const Item& item : bank.items()) {
        nlohmann::json j = {{"id", item.id},
                            {"text", item.text},
                            {"answer_space", item.answer_space},
                            {"grade_points", item.grade_points}};
        if (item.parent_problem) j["parent_problem"] = *item.parent_problem;
        if (!item.state_points.empty()) j["state_points"] = item.state_points;
        items.push_back(std::move(j));
    }
    nlohmann::json doc = {{"items", items}, {"max_score", bank.max_score()}};
    if (!bank.problems().empty()) {
        nlohmann::json problems = nlohmann::json::array();
        for (const auto& [id, grade] : bank.problems()) {
            problems.push_back({{"id", id}, {"grade_points", grade}});
        }
        doc["problems"] = problems;
    }
    return doc;
}

QuestionBank load_bank(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open question bank '" + path + "'");
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("question bank '" + path + "': " + e.what());
    }
    return bank_from_json(doc);
}

std::string_view to_string(GradeMode mode) {
    return mode == GradeMode::numeric ? "numeric" : "boolean";
}

GradeMode grade_mode_from_string(std::string_view s) {
    if (s == "numeric") return GradeMode::numeric;
    if (s == "boolean") return GradeMode::boolean;
    throw ValidationError("unknown grade mode '" + std::string(s) + "'");
}

std::optional<std::size_t> ResponseDataset::column_of(std::string_view item_id) const {
    for (std::size_t i = 0; i < item_ids.size(); ++i) {
        if (item_ids[i] == item_id) return i;
    }
    return std::nullopt;
}

int ResponseDataset::max_score() const {
    if (mode == GradeMode::boolean) return static_cast<int>(item_ids.size());
    int total = 0;
    for (int g : grade_points) total += g;
    return total;
}

ResponseDataset parse_dataset(std::istream& in, const QuestionBank& bank, GradeMode mode,
                              std::string_view source) {
    ResponseDataset ds;
    ds.mode = mode;
    std::string line;
    if (!std::getline(in, line)) throw ValidationError(std::string(source) + ": empty dataset file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto header = split_csv_line(line, source, 1);
    if (header.empty() || header[0] != "student_id") {
        throw ValidationError(cell_position(source, 1, 1) + ": header must start with 'student_id'");
    }

    // Column kind per header cell: item index into ds.item_ids, or info index.
    struct Column {
        bool is_item;
        std::size_t index;
    };
    std::vector<Column> columns;
    std::set<std::string> seen;
    for (std::size_t c = 1; c < header.size(); ++c) {
        const std::string& name = header[c];
        if (!seen.insert(name).second) {
            throw ValidationError(cell_position(source, 1, c + 1) + ": duplicate column '" + name + "'");
        }
        if (name.rfind(kInfoPrefix, 0) == 0) {
            std::string info = name.substr(kInfoPrefix.size());
            if (info.empty()) throw ValidationError(cell_position(source, 1, c + 1) + ": empty info name");
            columns.push_back({false, ds.info_names.size()});
            ds.info_names.push_back(std::move(info));
        } else {
            auto idx = bank.index_of(name);
            if (!idx) {
                throw ValidationError(cell_position(source, 1, c + 1) + ": unknown item column '" + name + "'");
            }
            columns.push_back({true, ds.item_ids.size()});
            ds.item_ids.push_back(name);
            ds.grade_points.push_back(bank.item(*idx).grade_points);
        }
    }

    std::size_t row = 1;
    std::set<std::string> student_ids;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = split_csv_line(line, source, row);
        if (cells.size() != header.size()) {
            throw ValidationError(std::string(source) + ": row " + std::to_string(row) + " has " +
                                  std::to_string(cells.size()) + " cells, header has " +
                                  std::to_string(header.size()));
        }
        StudentRecord rec;
        rec.id = cells[0];
        if (rec.id.empty()) throw ValidationError(cell_position(source, row, 1) + ": empty student id");
        if (!student_ids.insert(rec.id).second) {
            throw ValidationError(cell_position(source, row, 1) + ": duplicate student id '" + rec.id + "'");
        }
        rec.grades.assign(ds.item_ids.size(), std::nullopt);
        for (std::size_t c = 1; c < cells.size(); ++c) {
            const std::string& cell = cells[c];
            const Column& col = columns[c - 1];
            if (!col.is_item) {
                rec.info[ds.info_names[col.index]] = cell.empty() ? std::string(kUnknown) : cell;
                continue;
            }
            if (cell.empty()) continue;
            if (mode == GradeMode::boolean) {
                if (cell == "1") {
                    rec.grades[col.index] = 1;
                } else if (cell == "0") {
                    rec.grades[col.index] = 0;
                } else {
                    throw ValidationError(cell_position(source, row, c + 1) + ": boolean cell must be 0, 1 or empty, got '" +
                                          cell + "'");
                }
                continue;
            }
            auto grade = parse_nonneg_int(cell);
            if (!grade) {
                throw ValidationError(cell_position(source, row, c + 1) + ": malformed grade '" + cell + "'");
            }
            if (*grade > ds.grade_points[col.index]) {
                throw ValidationError(cell_position(source, row, c + 1) + ": grade " + cell + " exceeds " +
                                      std::to_string(ds.grade_points[col.index]) + " points of item '" +
                                      ds.item_ids[col.index] + "'");
            }
            rec.grades[col.index] = *grade;
        }
        ds.students.push_back(std::move(rec));
    }
    return ds;
}

ResponseDataset load_dataset(const std::string& path, const QuestionBank& bank, GradeMode mode) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open dataset '" + path + "'");
    return parse_dataset(in, bank, mode, path);
}

void write_dataset(std::ostream& out, const ResponseDataset& dataset) {
    out << "student_id";
    for (const auto& id : dataset.item_ids) out << ',' << quote_csv(id);
    for (const auto& name : dataset.info_names) out << ',' << quote_csv(std::string(kInfoPrefix) + name);
    out << '\n';
    for (const auto& rec : dataset.students) {
        out << quote_csv(rec.id);
        for (const auto& g : rec.grades) {
            out << ',';
            if (g) out << *g;
        }
        for (const auto& name : dataset.info_names) {
            out << ',';
            auto it = rec.info.find(name);
            if (it != rec.info.end() && it->second != kUnknown) out << quote_csv(it->second);
        }
        out << '\n';
    }
}

void save_dataset(const std::string& path, const ResponseDataset& dataset) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write dataset '" + path + "'");
    write_dataset(out, dataset);
}

int raw_score(const StudentRecord& record) {
    int total = 0;
    for (const auto& g : record.grades) {
        if (g) total += *g;
    }
    return total;
}

std::vector<double> raw_scores(const ResponseDataset& dataset) {
    std::vector<double> out;
    out.reserve(dataset.students.size());
    for (const auto& rec : dataset.students) out.push_back(raw_score(rec));
    return out;
}

}  // namespace adaptest
