#include <gtest/gtest.h>

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "support.hpp"

using spherehead::testing::TempDir;
namespace cli = spherehead::cli;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(std::move(args), out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> tiny_train(const std::string& loss, const std::string& project, const std::string& out) {
  return {"train",    "--dataset", "blobs", "--loss",   loss,  "--project",    project, "--classes",
          "3",        "--n-per-class", "20", "--hidden", "8",   "--feature-dim", "3",     "--epochs",
          "4",        "--batch", "16",  "--lr",  "0.01", "--seeds", "1,2", "--out", out};
}

std::vector<std::vector<double>> read_rows(const std::string& text) {
  std::vector<std::vector<double>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<double> row;
    std::istringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(row);
  }
  return rows;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(CliProject, WorkedValues) {
  TempDir dir("cli-project");
  std::ofstream(dir / "in.csv") << "0,0\n3,4\n";
  const Outcome o = invoke({"project", "--in", (dir / "in.csv").string()});
  ASSERT_EQ(o.code, 0) << o.err;
  const auto rows = read_rows(o.out);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0], (std::vector<double>{0.0, 0.0, -1.0}));
  EXPECT_EQ(rows[1], (std::vector<double>{6.0 / 26.0, 8.0 / 26.0, 24.0 / 26.0}));
}

TEST(CliProject, WritesFileAndReportsBadInput) {
  TempDir dir("cli-project-file");
  std::ofstream(dir / "in.csv") << "1;1\n";
  ASSERT_EQ(invoke({"project", "--in", (dir / "in.csv").string(), "--delimiter", ";", "--out",
                    (dir / "out.csv").string()})
                .code,
            0);
  EXPECT_NE(slurp(dir / "out.csv").find(';'), std::string::npos);
  std::ofstream(dir / "bad.csv") << "1,2\n3,x\n";
  const Outcome bad = invoke({"project", "--in", (dir / "bad.csv").string()});
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.err.find("line 2"), std::string::npos) << bad.err;
  EXPECT_EQ(invoke({"project", "--in", (dir / "none.csv").string()}).code, 1);
}

TEST(CliUsage, InvalidInvocationsExitTwo) {
  EXPECT_EQ(invoke({}).code, 2);
  EXPECT_EQ(invoke({"frobnicate"}).code, 2);
  EXPECT_EQ(invoke({"train"}).code, 2);
  EXPECT_EQ(invoke({"train", "--loss", "softmax"}).code, 2);
  EXPECT_EQ(invoke({"train", "--loss", "sphereface", "--m", "0.35"}).code, 2);
  EXPECT_EQ(invoke({"train", "--loss", "cosface", "--queue", "8"}).code, 2);
  EXPECT_EQ(invoke({"train", "--loss", "cce", "--m", "0.2"}).code, 2);
  EXPECT_EQ(invoke({"train", "--loss", "cosface", "--project", "maybe"}).code, 2);
  EXPECT_EQ(invoke({"train", "--loss", "cosface", "--dataset", "mnist"}).code, 2);
  const Outcome o = invoke({"train", "--loss", "sphereface", "--m", "0.35"});
  EXPECT_NE(o.err.find("usage error"), std::string::npos);
}

TEST(CliUsage, HelpExitsZero) {
  const Outcome o = invoke({"--help"});
  EXPECT_EQ(o.code, 0);
  EXPECT_NE(o.out.find("export-embeddings"), std::string::npos);
}

TEST(CliWorkflow, TrainReportEvalExport) {
  TempDir dir("cli-flow");
  const std::string results = (dir / "results").string();
  const Outcome on = invoke(tiny_train("cosface", "on", results));
  ASSERT_EQ(on.code, 0) << on.err;
  EXPECT_NE(on.out.find("blobs-cosface-proj"), std::string::npos) << on.out;
  const Outcome off = invoke(tiny_train("cosface", "off", results));
  ASSERT_EQ(off.code, 0) << off.err;
  EXPECT_TRUE(std::filesystem::exists(dir / "results" / "blobs-cosface-noproj" / "2.txt"));

  const Outcome again = invoke(tiny_train("cosface", "on", results));
  EXPECT_EQ(again.code, 1);
  EXPECT_NE(again.err.find("refusing to overwrite"), std::string::npos) << again.err;

  const Outcome table = invoke({"report", "--results", results, "--out", (dir / "table.txt").string()});
  ASSERT_EQ(table.code, 0) << table.err;
  EXPECT_NE(table.out.find("CosFace"), std::string::npos) << table.out;
  EXPECT_EQ(slurp(dir / "table.txt"), table.out);

  const Outcome eval = invoke({"eval", "--run", (dir / "results" / "blobs-cosface-proj").string()});
  EXPECT_EQ(eval.code, 0) << eval.err;
  EXPECT_NE(eval.out.find("reproduced"), std::string::npos);

  const std::string run = (dir / "results" / "blobs-cosface-proj").string();
  const Outcome exp1 = invoke({"export-embeddings", "--run", run, "--seed", "2", "--out", "-"});
  ASSERT_EQ(exp1.code, 0) << exp1.err;
  const auto rows = read_rows(exp1.out);
  ASSERT_EQ(rows.size(), 18u);
  for (const auto& r : rows) {
    ASSERT_EQ(r.size(), 5u);
    double sq = 0;
    for (std::size_t c = 1; c < r.size(); ++c) sq += r[c] * r[c];
    EXPECT_NEAR(sq, 1.0, 1e-12);
  }
  const Outcome exp2 = invoke({"export-embeddings", "--run", run, "--seed", "2", "--out", "-"});
  EXPECT_EQ(exp1.out, exp2.out);
  const Outcome train_split = invoke({"export-embeddings", "--run", run, "--split", "train", "--out", "-"});
  EXPECT_EQ(read_rows(train_split.out).size(), 42u);
}

TEST(CliWorkflow, ReportErrors) {
  TempDir dir("cli-report");
  EXPECT_EQ(invoke({"report", "--results", (dir / "nothing").string()}).code, 1);
  EXPECT_EQ(invoke({"report", "--results", dir.path().string()}).code, 1);
  const std::string results = (dir / "results").string();
  ASSERT_EQ(invoke(tiny_train("arcface", "on", results)).code, 0);
  const Outcome unpaired = invoke({"report", "--results", results});
  EXPECT_EQ(unpaired.code, 1);
  EXPECT_NE(unpaired.err.find("lacks projection=off"), std::string::npos) << unpaired.err;
}

TEST(CliWorkflow, MissingRunIsAnError) {
  TempDir dir("cli-missing");
  const Outcome o = invoke({"export-embeddings", "--run", (dir / "absent").string(), "--out", "-"});
  EXPECT_EQ(o.code, 1);
  EXPECT_NE(o.err.find("error"), std::string::npos);
  EXPECT_EQ(invoke({"eval", "--run", (dir / "absent").string()}).code, 1);
}
