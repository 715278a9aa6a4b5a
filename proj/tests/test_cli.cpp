#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code = -1;
    std::string out;
};

Outcome lab(const std::string& args, const fs::path& out_root) {
    const std::string cmd =
        "FEDSKD_LAB_OUT='" + out_root.string() + "' '" + FEDSKD_LAB_BINARY + "' " + args + " 2>/dev/null";
    Outcome o;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (pipe == nullptr) return o;
    std::array<char, 4096> buf{};
    std::size_t n = 0;
    while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) o.out.append(buf.data(), n);
    const int status = pclose(pipe);
    o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return o;
}

std::string read_file(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

fs::path dir_from(const std::string& out, const std::string& prefix) {
    const auto at = out.find(prefix);
    if (at == std::string::npos) return {};
    const auto start = at + prefix.size();
    return out.substr(start, out.find('\n', start) - start);
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> lines;
    std::istringstream is(text);
    for (std::string line; std::getline(is, line);) {
        if (!line.empty()) lines.push_back(line);
    }
    return lines;
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

const std::string tiny =
    "--quiet --set rounds=2 --set n_clients=2 --set data.samples_per_client=60 --set batch_size=4 "
    "--set iters_per_round=3 --set skd.row_eps=1e-12 --set seed=5 --set lr=0.001";

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        root_ = fs::temp_directory_path() /
                ("fedskd_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(root_);
        fs::create_directories(root_);
    }
    void TearDown() override { fs::remove_all(root_); }
    fs::path root_;
};

}  // namespace

TEST_F(Cli, InvalidMethodExitsWithConfigError) {
    const auto o = lab("run --quiet --set method=fedsdk", root_);
    EXPECT_EQ(o.code, 2);
    EXPECT_EQ(lab("run --quiet --set skd.start_fraction=1", root_).code, 2);
    EXPECT_EQ(lab("run /nonexistent/desk.cfg", root_).code, 2);
    EXPECT_TRUE(fs::is_empty(root_));
}

TEST_F(Cli, ZeroRoundsWritesInitialCheckpoints) {
    const auto o = lab("run " + tiny + " --set rounds=0", root_);
    ASSERT_EQ(o.code, 0) << o.out;
    const auto dir = dir_from(o.out, "run directory: ");
    ASSERT_TRUE(fs::exists(dir / "checkpoints" / "client0.ckpt"));
    ASSERT_TRUE(fs::exists(dir / "checkpoints" / "client1.ckpt"));
    const auto rows = lines_of(read_file(dir / "metrics.csv"));
    ASSERT_GT(rows.size(), 1u);
    for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_EQ(split(rows[i])[1], "0");
}

TEST_F(Cli, RepeatedRunsAreByteIdentical) {
    const auto a = lab("run " + tiny, root_);
    const auto b = lab("run " + tiny, root_);
    ASSERT_EQ(a.code, 0);
    ASSERT_EQ(b.code, 0);
    const auto da = dir_from(a.out, "run directory: ");
    const auto db = dir_from(b.out, "run directory: ");
    ASSERT_NE(da, db);
    EXPECT_EQ(read_file(da / "metrics.csv"), read_file(db / "metrics.csv"));
    EXPECT_EQ(read_file(da / "config.resolved"), read_file(db / "config.resolved"));
    EXPECT_EQ(read_file(da / "checkpoints" / "client1.ckpt"), read_file(db / "checkpoints" / "client1.ckpt"));
}

TEST_F(Cli, WorkersDoNotChangeResults) {
    const auto a = lab("run " + tiny, root_);
    const auto b = lab("run " + tiny + " --workers 2", root_);
    ASSERT_EQ(a.code, 0);
    ASSERT_EQ(b.code, 0);
    EXPECT_EQ(read_file(dir_from(a.out, "run directory: ") / "metrics.csv"),
              read_file(dir_from(b.out, "run directory: ") / "metrics.csv"));
}

TEST_F(Cli, EvaluateReproducesFinalMetrics) {
    const auto o = lab("run " + tiny, root_);
    ASSERT_EQ(o.code, 0);
    const auto dir = dir_from(o.out, "run directory: ");
    const auto stored = lines_of(read_file(dir / "metrics.csv"));
    const auto e = lab("evaluate '" + dir.string() + "'", root_);
    ASSERT_EQ(e.code, 0);
    const auto fresh = lines_of(e.out);
    ASSERT_EQ(fresh.size(), 1 + 2 * 2u);
    EXPECT_EQ(fresh[0], stored[0]);

    std::size_t matched = 0;
    for (std::size_t i = 1; i < fresh.size(); ++i) {
        const auto f = split(fresh[i]);
        for (std::size_t j = 1; j < stored.size(); ++j) {
            const auto s = split(stored[j]);
            if (s[1] != "2" || s[2] != f[2] || s[3] != f[3]) continue;
            ASSERT_EQ(f[4].empty(), s[4].empty());
            if (!f[4].empty()) {
                EXPECT_NEAR(std::stod(f[4]), std::stod(s[4]), 1e-6);
            }
            ++matched;
        }
    }
    EXPECT_EQ(matched, fresh.size() - 1);

    const auto local = lines_of(lab("evaluate '" + dir.string() + "' --scope local", root_).out);
    ASSERT_EQ(local.size(), 3u);
    for (std::size_t i = 1; i < local.size(); ++i) EXPECT_EQ(split(local[i])[3], "local");
    const auto global = lines_of(lab("evaluate '" + dir.string() + "' --scope global", root_).out);
    ASSERT_EQ(global.size(), 3u);
    for (std::size_t i = 1; i < global.size(); ++i) EXPECT_EQ(split(global[i])[3], "global");
    EXPECT_EQ(lab("evaluate '" + dir.string() + "' --scope sideways", root_).code, 2);

    fs::remove(dir / "checkpoints" / "client1.ckpt");
    const auto missing = lab("evaluate '" + dir.string() + "'", root_);
    EXPECT_NE(missing.code, 0);
}

TEST_F(Cli, AblationSummaryRowCounts) {
    const auto layers = lab("ablate layers " + tiny + " --set rounds=1", root_);
    ASSERT_EQ(layers.code, 0);
    const auto ldir = dir_from(layers.out, "ablation directory: ");
    EXPECT_EQ(lines_of(read_file(ldir / "summary.csv")).size(), 1 + 4 * 2 * 2u);

    const auto comps = lab("ablate components " + tiny + " --set rounds=1", root_);
    ASSERT_EQ(comps.code, 0);
    const auto cdir = dir_from(comps.out, "ablation directory: ");
    const auto rows = lines_of(read_file(cdir / "summary.csv"));
    EXPECT_EQ(rows.size(), 1 + 7 * 2 * 2u);
    EXPECT_EQ(rows[0], "axis,variant,method,round,client,scope,auc,fairness_gap,seed,fold");

    EXPECT_EQ(lab("ablate nonsense " + tiny, root_).code, 2);
}
