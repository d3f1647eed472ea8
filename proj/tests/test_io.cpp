#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "rebayes/io.hpp"

using namespace rebayes;
using namespace rebayes::io;

namespace {

Table parse(const std::string& text) {
    std::istringstream in(text);
    return parse_table(in, "t.tsv");
}

std::string error_of(const std::string& text) {
    try {
        parse(text);
    } catch (const DataError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST(ParseTable, HeaderRowsAndMissing) {
    const Table t = parse("gene\ta\tb\r\ng1\t1.5\tNA\n\ng2\t-2e-3\t7\n");
    EXPECT_EQ(t.corner, "gene");
    EXPECT_EQ(t.columns, (std::vector<std::string>{"a", "b"}));
    EXPECT_EQ(t.row_ids, (std::vector<std::string>{"g1", "g2"}));
    EXPECT_EQ(t.values(0, 0), 1.5);
    EXPECT_TRUE(std::isnan(t.values(0, 1)));
    EXPECT_EQ(t.values(1, 0), -0.002);
}

TEST(ParseTable, ErrorsCarryPositions) {
    EXPECT_NE(error_of("gene\ta\tb\ng1\t1\n").find("t.tsv:2: expected 3 fields, found 2"), std::string::npos);
    EXPECT_NE(error_of("gene\ta\ng1\t1\ng2\tabc\n").find("t.tsv:3:2"), std::string::npos);
    EXPECT_NE(error_of("gene\ta\ng1\t\n").find("empty field"), std::string::npos);
    EXPECT_NE(error_of("").find("empty"), std::string::npos);
    EXPECT_NE(error_of("gene\n").find("header"), std::string::npos);
}

TEST(ReadFiles, ExpressionAndDesign) {
    const auto dir = std::filesystem::temp_directory_path() / "rebayes_io_test";
    std::filesystem::create_directories(dir);
    {
        std::ofstream(dir / "e.tsv") << "id\ts1\ts2\ts3\ng1\t1\t2\t3\n";
        std::ofstream(dir / "d.tsv") << "sample\tIntercept\tB\ns1\t1\t0\ns2\t1\t1\ns3\t1\tNA\n";
    }
    const ExpressionSet e = read_expression(dir / "e.tsv");
    EXPECT_EQ(e.sample_ids.size(), 3u);
    EXPECT_EQ(e.gene_ids.front(), "g1");
    EXPECT_THROW(read_design(dir / "d.tsv"), DataError);
    EXPECT_THROW(read_table(dir / "missing.tsv"), DataError);
    std::filesystem::remove_all(dir);
}

TEST(FormatNumber, SpecialValues) {
    EXPECT_EQ(format_number(std::nan("")), "NA");
    EXPECT_EQ(format_number(HUGE_VAL), "Inf");
    EXPECT_EQ(format_number(-HUGE_VAL), "-Inf");
    EXPECT_EQ(format_number(0.123456789), "0.123457");
    EXPECT_EQ(format_number(1e-12), "1e-12");
}

TEST(WriteFileAtomic, ReplacesContentWithoutTemporary) {
    const auto dir = std::filesystem::temp_directory_path() / "rebayes_atomic_test";
    std::filesystem::create_directories(dir);
    const auto path = dir / "out.txt";
    write_file_atomic(path, "first");
    write_file_atomic(path, "second\n");
    std::ifstream in(path);
    std::string s((std::istreambuf_iterator<char>(in)), {});
    EXPECT_EQ(s, "second\n");
    EXPECT_FALSE(std::filesystem::exists(dir / "out.txt.tmp"));
    EXPECT_THROW(write_file_atomic(dir / "no" / "such" / "x.txt", "x"), DataError);
    std::filesystem::remove_all(dir);
}

TEST(TsvWriter, MixedCells) {
    TsvWriter w({"id", "x", "n"});
    w.row(std::string("g1"), 0.5, std::size_t{3});
    w.row("g2", std::nan(""), 4);
    EXPECT_EQ(w.str(), "id\tx\tn\ng1\t0.5\t3\ng2\tNA\t4\n");
}
