#include <catch2/catch.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "rhomix/rng.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct RunResult {
    int exit_code;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

RunResult run_cli(const std::string& args, const fs::path& dir) {
    fs::create_directories(dir);
    fs::path out = dir / "stdout.txt", err = dir / "stderr.txt";
    std::string cmd = std::string(RHOMIX_CLI_PATH) + " " + args + " > " + out.string() + " 2> " +
                      err.string();
    int status = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

fs::path scratch_dir() {
    auto dir = fs::temp_directory_path() / "rhomix_cli_tests";
    fs::create_directories(dir);
    return dir;
}

fs::path write_gaussian_data(std::size_t n, std::uint64_t seed) {
    auto p = scratch_dir() / ("data_" + std::to_string(seed) + ".txt");
    std::ofstream f(p);
    f << "# seeded standard normal sample\n";
    rhomix::RngStream rng(seed);
    f.precision(17);
    for (std::size_t i = 0; i < n; ++i) f << rng.normal() << "\n";
    return p;
}

}  // namespace

TEST_CASE("help lists the global flags", "[cli]") {
    auto dir = scratch_dir() / "help";
    auto r = run_cli("--help", dir);
    CHECK(r.exit_code == 0);
    for (const char* flag : {"--config", "--seed", "--threads", "--out"})
        CHECK(r.out.find(flag) != std::string::npos);
    auto r2 = run_cli("fit --help", dir);
    CHECK(r2.exit_code == 0);
    CHECK(r2.out.find("--delta") != std::string::npos);

    auto bad = run_cli("fit --no-such-flag", dir);
    CHECK(bad.exit_code != 0);
}

TEST_CASE("fit recovers a seeded gaussian location", "[cli]") {
    auto data = write_gaussian_data(1000, 2024);
    auto dir = scratch_dir() / "fit";
    auto r = run_cli("--seed 7 --out " + dir.string() + " fit --data " + data.string() +
                         " --K 1 --family gaussian --locations 21 --scales 7",
                     dir);
    REQUIRE(r.exit_code == 0);
    auto rep = json::parse(slurp(dir / "fit_report.json"));
    double loc = rep["chosen"]["components"][0]["location"].get<double>();
    CHECK(std::abs(loc) < 0.1);
    CHECK(rep["search_mode"].is_string());
}

TEST_CASE("config errors exit with code 3", "[cli]") {
    auto dir = scratch_dir() / "errors";
    fs::create_directories(dir);

    auto empty = dir / "empty.txt";
    std::ofstream(empty) << "# only a comment\n";
    auto r1 = run_cli("fit --data " + empty.string() + " --K 1", dir);
    CHECK(r1.exit_code == 3);

    auto data = write_gaussian_data(50, 1);
    auto r2 = run_cli("fit --data " + data.string() + " --K 2 --delta 0.7", dir);
    CHECK(r2.exit_code == 3);
    CHECK(r2.err.find("1/K") != std::string::npos);

    auto r3 = run_cli("study --kind no-such-study", dir);
    CHECK(r3.exit_code == 3);

    auto r4 = run_cli("study --kind spike --alpha 1.5", dir);
    CHECK(r4.exit_code == 3);

    auto r5 = run_cli("fit --K 1", dir);  // neither data nor generator
    CHECK(r5.exit_code == 3);
}

TEST_CASE("smoke study runs quickly and reproduces byte-identical records", "[cli]") {
    auto dir1 = scratch_dir() / "study1";
    auto dir2 = scratch_dir() / "study2";
    std::string base =
        "study --kind rate-gmm --preset smoke --n-grid 150,300 --reps 3";
    auto t0 = std::chrono::steady_clock::now();
    auto r1 = run_cli("--seed 11 --threads 2 --out " + dir1.string() + " " + base, dir1);
    double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    REQUIRE(r1.exit_code != 3);
    CHECK(secs < 60.0);
    auto r2 = run_cli("--seed 11 --threads 1 --out " + dir2.string() + " " + base, dir2);
    REQUIRE(r2.exit_code != 3);
    CHECK(slurp(dir1 / "records.csv") == slurp(dir2 / "records.csv"));
    CHECK(fs::exists(dir1 / "summary.json"));
    CHECK(fs::exists(dir1 / "timings.csv"));
    CHECK(fs::exists(dir1 / "plotdata" / "h2.dat"));
}

TEST_CASE("select-k runs on generated data", "[cli]") {
    auto dir = scratch_dir() / "selk";
    auto r = run_cli("--seed 5 --out " + dir.string() +
                         " select-k --generate \"1 gaussian 0 1\" --generate-n 400 "
                         "--kmin 1 --kmax 2 --locations 7 --scales 3",
                     dir);
    REQUIRE(r.exit_code == 0);
    auto rep = json::parse(slurp(dir / "selection_report.json"));
    CHECK(rep["K_hat"].get<int>() >= 1);
    CHECK(rep["models"].size() == 2);
}
