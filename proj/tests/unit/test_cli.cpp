#include "doctest.h"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("ivrlab_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

std::string read_file(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

// Runs ivrlab with a config body; stdout and stderr go to dir/log.txt.
int run(const fs::path& dir, const std::string& command, const std::string& config, const std::string& out = "out") {
    write_file(dir / "run.yaml", config);
    const std::string cmd = std::string(IVRLAB_PATH) + " --config " + (dir / "run.yaml").string() + " --out " +
                            (dir / out).string() + " " + command + " > " + (dir / "log.txt").string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("exit codes") {
    const fs::path dir = scratch("exit");
    CHECK(run(dir, "solve", "solve: {env: random}\n") == 0);
    CHECK(fs::exists(dir / "out" / "values.csv"));
    CHECK(fs::exists(dir / "out" / "kkt.json"));
    CHECK(run(dir, "solve", "solve: {model: empirical, dataset: /nonexistent/data.txt}\n") == 2);
    CHECK(read_file(dir / "log.txt").find("parse error") != std::string::npos);
    CHECK(run(dir, "solve", "solve: {unknown_key: 1}\n") == 2);
    CHECK(run(dir, "solve", "solve: [unclosed\n") == 2);
    CHECK(read_file(dir / "log.txt").find("parse error") != std::string::npos);
    CHECK(run(dir, "solve", "solve: {env: random, max_iter: 3}\n") == 3);
    CHECK(run(dir, "fourrooms", "fourrooms: {algos: sql, seeds: 0, steps: 50, lr_v: 1e9, lr_q: 1e9}\n") == 1);
    CHECK(read_file(dir / "log.txt").find("failed cell") != std::string::npos);
}

TEST_CASE("solve tables satisfy the softmax identity") {
    const fs::path dir = scratch("softmax");
    REQUIRE(run(dir, "solve", "solve: {env: random, states: 6, regularizer: reverse_kl, alpha: 0.5}\n") == 0);
    std::ifstream in(dir / "out" / "actions.csv");
    std::string line;
    std::vector<std::vector<double>> q(6), pi(6);
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#' || line.rfind("state", 0) == 0) continue;
        std::stringstream row(line);
        std::string cell;
        std::vector<double> v;
        while (std::getline(row, cell, ',')) v.push_back(std::stod(cell));
        q[static_cast<std::size_t>(v[0])].push_back(v[2]);
        pi[static_cast<std::size_t>(v[0])].push_back(v[3]);
    }
    for (std::size_t s = 0; s < 6; ++s) {
        REQUIRE(q[s].size() == 3);
        double z = 0.0;
        for (double x : q[s]) z += std::exp(x / 0.5);
        for (std::size_t a = 0; a < 3; ++a) CHECK(pi[s][a] == doctest::Approx(std::exp(q[s][a] / 0.5) / z).epsilon(1e-8));
    }
}

TEST_CASE("identical configs give identical bytes") {
    const fs::path dir = scratch("determinism");
    const std::string toy = "toy: {n_points: 500, bins: 10, seeds: 4}\n";
    REQUIRE(run(dir, "toy", toy, "a") == 0);
    REQUIRE(run(dir, "toy", toy, "b") == 0);
    CHECK(read_file(dir / "a" / "toy.csv") == read_file(dir / "b" / "toy.csv"));

    const std::string rooms = "fourrooms: {algos: [sql, iql], seeds: 1, steps: 300}\n";
    REQUIRE(run(dir, "fourrooms", rooms, "c") == 0);
    REQUIRE(run(dir, "fourrooms", rooms, "d") == 0);
    CHECK(read_file(dir / "c" / "fourrooms.csv") == read_file(dir / "d" / "fourrooms.csv"));
}

TEST_CASE("sweep resumes without recomputing finished cells") {
    const fs::path dir = scratch("sweep");
    const std::string base = "sweep:\n  seeds: 0\n  steps: 300\n";
    REQUIRE(run(dir, "sweep", base + "  alphas: 0.5\n") == 0);
    const std::string first = read_file(dir / "out" / "sweep.csv");
    REQUIRE(run(dir, "sweep", base + "  alphas: [0.5, 2]\n") == 0);
    CHECK(read_file(dir / "log.txt").find("1 new cells") != std::string::npos);
    const std::string second = read_file(dir / "out" / "sweep.csv");
    // The earlier row survives verbatim.
    const std::string old_row = first.substr(first.rfind('\n', first.size() - 2) + 1);
    CHECK(second.find(old_row) != std::string::npos);
    REQUIRE(run(dir, "sweep", base + "  alphas: [0.5, 2]\n") == 0);
    CHECK(read_file(dir / "log.txt").find("0 new cells") != std::string::npos);
}
