#include <gtest/gtest.h>

#include <sstream>

#include "adaptest/data_model.hpp"
#include "adaptest/error.hpp"

using namespace adaptest;

namespace {

QuestionBank small_bank() {
    std::vector<Item> items;
    items.push_back({"p1a", "first part", {"0", "1", "2"}, 2, std::string("p1"), {}});
    items.push_back({"p1b", "second part", {"0", "1"}, 1, std::string("p1"), {}});
    items.push_back({"q2", "boolean", {"incorrect", "correct"}, 4, std::nullopt, {}});
    return QuestionBank(items, {{"p1", 3}});
}

ResponseDataset parse(const std::string& text, GradeMode mode = GradeMode::numeric) {
    std::istringstream in(text);
    return parse_dataset(in, small_bank(), mode, "test.csv");
}

}  // namespace

TEST(ItemPoints, DefaultMappingFollowsStateCount) {
    auto bank = small_bank();
    EXPECT_EQ(bank.item(0).points_for(2), 2);
    EXPECT_EQ(bank.item(1).points_for(1), 1);
    // two states worth four points: all or nothing
    EXPECT_EQ(bank.item(2).points_for(0), 0);
    EXPECT_EQ(bank.item(2).points_for(1), 4);
    EXPECT_THROW(bank.item(2).points_for(2), ValidationError);
    EXPECT_EQ(bank.max_score(), 7);
}

TEST(QuestionBank, RejectsDuplicateIdsAndBadSubproblemSums) {
    std::vector<Item> dup{{"a", "", {"0", "1"}, 1, std::nullopt, {}}, {"a", "", {"0", "1"}, 1, std::nullopt, {}}};
    EXPECT_THROW(QuestionBank{dup}, ValidationError);
    std::vector<Item> parts{{"a", "", {"0", "1"}, 1, std::string("p"), {}}, {"b", "", {"0", "1"}, 1, std::string("p"), {}}};
    EXPECT_THROW(QuestionBank(parts, {{"p", 3}}), ValidationError);
    EXPECT_NO_THROW(QuestionBank(parts, {{"p", 2}}));
    std::vector<Item> single{{"a", "", {"only"}, 1, std::nullopt, {}}};
    EXPECT_THROW(QuestionBank{single}, ValidationError);
}

TEST(QuestionBank, JsonRoundTrip) {
    auto bank = small_bank();
    EXPECT_EQ(bank_from_json(bank_to_json(bank)), bank);
    auto doc = bank_to_json(bank);
    doc["max_score"] = 99;
    EXPECT_THROW(bank_from_json(doc), ValidationError);
}

TEST(ParseDataset, ReadsGradesInfoAndMissingCells) {
    auto ds = parse("student_id,p1a,p1b,q2,info:gender\ns1,2,1,4,female\ns2,,0,0,\n");
    ASSERT_EQ(ds.students.size(), 2u);
    EXPECT_EQ(ds.item_ids, (std::vector<std::string>{"p1a", "p1b", "q2"}));
    EXPECT_EQ(ds.students[0].grades[0], 2);
    EXPECT_FALSE(ds.students[1].grades[0].has_value());
    EXPECT_EQ(ds.students[1].info.at("gender"), kUnknown);
    EXPECT_EQ(raw_score(ds.students[0]), 7);
    EXPECT_EQ(raw_score(ds.students[1]), 0);
    EXPECT_EQ(ds.max_score(), 7);
}

TEST(ParseDataset, QuotedCells) {
    auto ds = parse("student_id,p1a,info:school\n\"s,1\",1,\"North, \"\"A\"\"\"\n");
    EXPECT_EQ(ds.students[0].id, "s,1");
    EXPECT_EQ(ds.students[0].info.at("school"), "North, \"A\"");
}

TEST(ParseDataset, Errors) {
    EXPECT_THROW(parse("student_id,zz\ns1,1\n"), ValidationError);
    EXPECT_THROW(parse("student_id,p1a\ns1,x\n"), ValidationError);
    EXPECT_THROW(parse("student_id,p1a\ns1,3\n"), ValidationError);
    EXPECT_THROW(parse("student_id,p1a\ns1,1\ns1,0\n"), ValidationError);
    EXPECT_THROW(parse("student_id,p1a\ns1,1,1\n"), ValidationError);
    EXPECT_THROW(parse("id,p1a\ns1,1\n"), ValidationError);
    EXPECT_THROW(parse("student_id,q2\ns1,2\n", GradeMode::boolean), ValidationError);
    try {
        parse("student_id,p1a,p1b\ns1,1,0\ns2,1,7\n");
        FAIL() << "expected a range error";
    } catch (const ValidationError& e) {
        std::string msg = e.what();
        EXPECT_NE(msg.find("row 3"), std::string::npos) << msg;
        EXPECT_NE(msg.find("column 3"), std::string::npos) << msg;
    }
}

TEST(ParseDataset, BooleanMode) {
    auto ds = parse("student_id,p1a,q2\ns1,1,0\ns2,,1\n", GradeMode::boolean);
    EXPECT_EQ(ds.max_score(), 2);
    EXPECT_EQ(raw_score(ds.students[1]), 1);
}

TEST(WriteDataset, RoundTrip) {
    auto ds = parse("student_id,p1a,p1b,q2,info:gender,info:school\ns1,2,1,4,female,\"A, B\"\ns2,,0,0,,x\n");
    std::ostringstream out;
    write_dataset(out, ds);
    EXPECT_EQ(parse(out.str()), ds);
}
