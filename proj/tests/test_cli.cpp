#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sys/wait.h>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

using Json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::string kSmall =
    " --preset two-moons --set dataset.n=300 --set teacher.m=2 --set teacher.hidden=8 --set teacher.max_epochs=5"
    " --set student.hidden=8 --set student.epochs=5 --set run.replications=2 --set ood.n=50";

fs::path fresh(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("ensdistill_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int run(const std::string& args, const fs::path& log = "/dev/null") {
  const std::string cmd = std::string(ENSDISTILL_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Json json_at(const fs::path& p) { return Json::parse(slurp(p)); }

/// Every regular file under `root` keyed by its relative path.
std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = slurp(e.path());
  }
  return out;
}

fs::path only_run(const fs::path& out) {
  for (const auto& e : fs::directory_iterator(out)) return e.path();
  return {};
}

}  // namespace

TEST(Cli, HelpAndShowConfig) {
  EXPECT_EQ(run("--help"), 0);
  const auto dir = fresh("show");
  EXPECT_EQ(run("show-config --preset blobs-k4 --set teacher.m=3", dir / "log"), 0);
  const auto text = slurp(dir / "log");
  EXPECT_NE(text.find("teacher.m = 3"), std::string::npos);
  EXPECT_NE(text.find("# recipes:"), std::string::npos);
}

TEST(Cli, ConfigErrorsExitTwo) {
  const auto dir = fresh("cfgerr");
  EXPECT_EQ(run("show-config --set bogus.key=1", dir / "log"), 2);
  EXPECT_NE(slurp(dir / "log").find("error=config"), std::string::npos);
  EXPECT_EQ(run("show-config --preset no-such-preset"), 2);
  EXPECT_EQ(run("reproduce fig9"), 2);
  EXPECT_EQ(run("train-teacher --no-such-flag"), 2);
}

TEST(Cli, DistillWithoutTeacherExitsThree) {
  const auto dir = fresh("noteacher");
  EXPECT_EQ(run("distill" + kSmall + " --out " + dir.string(), dir / "log"), 3);
  EXPECT_NE(slurp(dir / "log").find("error=missing_artifact"), std::string::npos);
  EXPECT_EQ(run("evaluate" + kSmall + " --model " + (dir / "missing.weights").string()), 3);
}

TEST(Cli, DivergenceExitsFour) {
  const auto dir = fresh("diverge");
  EXPECT_EQ(run("train-teacher" + kSmall + " --set teacher.lr=1e300 --out " + dir.string(), dir / "log"), 4);
  EXPECT_NE(slurp(dir / "log").find("error=divergence"), std::string::npos);
}

TEST(Cli, TrainDistillEvaluateEndToEnd) {
  const auto out = fresh("e2e");
  ASSERT_EQ(run("train-teacher" + kSmall + " --out " + out.string()), 0);
  const auto rundir = only_run(out);
  ASSERT_TRUE(fs::exists(rundir / "teacher" / "manifest.json"));
  EXPECT_TRUE(fs::exists(rundir / "teacher" / "member_1.weights"));
  ASSERT_EQ(run("distill" + kSmall + " --out " + out.string()), 0);

  const auto manifest = json_at(rundir / "manifest.json");
  EXPECT_EQ(manifest["config_digest"].get<std::string>().size(), 64u);
  for (const auto& rel : manifest["reports"]) EXPECT_TRUE(fs::exists(rundir / rel.get<std::string>())) << rel;

  const auto teacher = json_at(rundir / "reports" / "teacher_test.json");
  const auto student = json_at(rundir / "students" / "vanilla" / "r0" / "reports" / "student_test.json");
  EXPECT_EQ(teacher["dataset_id"], student["dataset_id"]);
  EXPECT_EQ(student["histogram"]["counts"].size(), 30u);
  EXPECT_TRUE(fs::exists(rundir / "students" / "vanilla" / "r1" / "student.weights"));
  EXPECT_TRUE(fs::exists(rundir / "students" / "vanilla" / "r0" / "history.csv"));

  const auto ood = json_at(rundir / "students" / "vanilla" / "r0" / "reports" / "student_ood.json");
  EXPECT_TRUE(ood["nll"].is_null());
  EXPECT_TRUE(ood["error"].is_null());
  EXPECT_TRUE(ood["brier"].is_null());

  const auto evals = out / "evals";
  const auto weights = rundir / "students" / "vanilla" / "r0" / "student.weights";
  ASSERT_EQ(run("evaluate" + kSmall + " --bins 7 --name s --out " + evals.string() + " --model " + weights.string()),
            0);
  EXPECT_EQ(json_at(evals / "s.json")["histogram"]["counts"].size(), 7u);
  const auto hist = slurp(evals / "s_hist.csv");
  EXPECT_EQ(hist.rfind("bin_left,bin_right,count\n", 0), 0u);
  EXPECT_EQ(std::count(hist.begin(), hist.end(), '\n'), 8);
  ASSERT_EQ(run("evaluate" + kSmall + " --name s --out " + evals.string() + " --model " + weights.string()), 0);
  EXPECT_EQ(json_at(evals / "s.json"), student);

  ASSERT_EQ(run("ood-eval" + kSmall + " --name o --out " + evals.string() + " --model " + (rundir / "teacher").string()),
            0);
  EXPECT_EQ(json_at(evals / "o.json"), json_at(rundir / "reports" / "teacher_ood.json"));

  // Rerunning without --force refuses; with --force the artifacts are identical.
  const auto before = tree(rundir);
  EXPECT_EQ(run("distill" + kSmall + " --out " + out.string()), 2);
  ASSERT_EQ(run("train-teacher" + kSmall + " --force --out " + out.string()), 0);
  ASSERT_EQ(run("distill" + kSmall + " --force --out " + out.string()), 0);
  const auto after = tree(rundir);
  ASSERT_EQ(before.size(), after.size());
  for (const auto& [rel, bytes] : before) {
    if (rel == "manifest.json") continue;  // carries a timestamp
    EXPECT_EQ(bytes, after.at(rel)) << rel;
  }
}

TEST(Cli, CorruptWeightsExitFive) {
  const auto out = fresh("corrupt");
  ASSERT_EQ(run("train-teacher" + kSmall + " --set teacher.m=1 --out " + out.string()), 0);
  const auto rundir = only_run(out);
  const auto member = rundir / "teacher" / "member_0.weights";
  std::string bytes = slurp(member);
  bytes[bytes.size() / 2] = static_cast<char>(bytes[bytes.size() / 2] ^ 0x10);
  std::ofstream(member, std::ios::binary | std::ios::trunc) << bytes;
  EXPECT_EQ(run("evaluate" + kSmall + " --out " + (out / "e").string() + " --model " + member.string(), out / "log"), 5);
  EXPECT_NE(slurp(out / "log").find("error=corrupt_artifact"), std::string::npos);
  EXPECT_EQ(run("distill" + kSmall + " --set teacher.m=1 --out " + out.string()), 5);
}

TEST(Cli, SingleMemberTeacherMatchesItsMember) {
  const auto out = fresh("m1");
  ASSERT_EQ(run("train-teacher" + kSmall + " --set teacher.m=1 --out " + out.string()), 0);
  const auto reports = only_run(out) / "reports";
  EXPECT_EQ(slurp(reports / "teacher_test.json"), slurp(reports / "member_0_test.json"));
}

TEST(Cli, AlphaSweepWithOneReplicationHasNoStd) {
  const auto out = fresh("sweep");
  ASSERT_EQ(run("train-teacher" + kSmall + " --out " + out.string()), 0);
  ASSERT_EQ(run("distill" + kSmall + " --set run.replications=1 --set 'sweep.alpha=0;0.1;0.2;0.3' --out " +
                out.string()),
            0);
  const auto rundir = only_run(out);
  const auto agg = json_at(rundir / "reports" / "student_aggregate.json");
  ASSERT_EQ(agg["rows"].size(), 5u);  // teacher plus four sweep rows
  for (std::size_t i = 1; i < 5; ++i) {
    EXPECT_TRUE(agg["rows"][i]["nll"]["std"].is_null());
    EXPECT_EQ(agg["rows"][i]["nll"]["n"], 1);
  }
  const auto csv = slurp(rundir / "reports" / "student_aggregate.csv");
  EXPECT_NE(csv.find("alpha=0.3,1,"), std::string::npos);
  EXPECT_NE(csv.find(",NA"), std::string::npos);
  for (const char* label : {"alpha=0", "alpha=0.1", "alpha=0.2", "alpha=0.3"}) {
    EXPECT_TRUE(fs::exists(rundir / "students" / label / "r0" / "student.weights")) << label;
  }
}

TEST(Cli, ReproduceIsByteIdentical) {
  const auto a = fresh("repro_a"), b = fresh("repro_b");
  const std::string small =
      " --set dataset.n=300 --set teacher.m=2 --set teacher.max_epochs=5 --set student.epochs=5"
      " --set run.replications=2 --set ood.n=50";
  ASSERT_EQ(run("reproduce tab1" + small + " --out " + a.string()), 0);
  ASSERT_EQ(run("reproduce tab1" + small + " --jobs 2 --out " + b.string()), 0);
  const auto ta = tree(a / "tab1"), tb = tree(b / "tab1");
  ASSERT_FALSE(ta.empty());
  EXPECT_EQ(ta, tb);
  EXPECT_TRUE(ta.count("summary.txt"));
  EXPECT_EQ(run("reproduce tab1" + small + " --out " + a.string()), 2);
}
