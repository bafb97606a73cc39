#include "doctest.h"

#include "ivr/config.hpp"

#include <cmath>

using namespace ivr;

TEST_CASE("sections, lists and comments") {
    const Config c = Config::parse(
        "seed: 3\n"
        "fourrooms:\n"
        "  alpha: 0.5   # temperature\n"
        "  algos: [sql, eql, iql]\n"
        "  seeds:\n"
        "    - 0\n"
        "    - 1\n"
        "    - 2\n"
        "  double_q: on\n"
        "  learner:\n"
        "    steps: 100\n");
    CHECK(c.get_int("seed", 0) == 3);
    CHECK(c.get_double("fourrooms.alpha", 0.0) == 0.5);
    CHECK(c.get_strings("fourrooms.algos", {}) == std::vector<std::string>{"sql", "eql", "iql"});
    CHECK(c.get_seeds("fourrooms.seeds", {}) == std::vector<std::uint64_t>{0, 1, 2});
    CHECK(c.get_bool("fourrooms.double_q", false));
    CHECK(c.get_int("fourrooms.learner.steps", 0) == 100);
    CHECK(c.get_double("missing", 7.0) == 7.0);
    CHECK(c.section("fourrooms").get_double("alpha", 0.0) == 0.5);
    CHECK(Config::parse("").entries().empty());
    CHECK(Config::parse("toy: {bins: 10, alphas: [1, 0.5]}").get_doubles("toy.alphas", {}) ==
          std::vector<double>{1.0, 0.5});
}

TEST_CASE("malformed input reports the line") {
    try {
        Config::parse("a: 1\nb: [1, 2\n");
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() >= 2);
    }
    try {
        Config::parse("solve:\n  alpha: 1\n  alpha: 2\n");
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 3);
    }
    CHECK_THROWS_AS(Config::parse("- just\n- a list\n"), ParseError);
    CHECK_THROWS_AS(Config::parse("solve:\n  alpha:\n"), ParseError);
    CHECK_THROWS_AS(Config::parse("x: [[1, 2]]\n"), ParseError);
    CHECK_THROWS_AS(Config::parse("x: abc\n").get_double("x", 0.0), InvalidArgument);
    CHECK_THROWS_AS(Config::parse("x: -1\n").get_seeds("x", {}), InvalidArgument);
    CHECK_THROWS_AS(Config::parse("x: maybe\n").get_bool("x", false), InvalidArgument);
    CHECK_THROWS_AS(Config::load("/nonexistent/ivr.yaml"), InvalidArgument);
}

TEST_CASE("unknown keys are rejected") {
    const Config c = Config::parse("sweep:\n  alphas: 0.1\n  bogus: 1\n");
    CHECK_THROWS_AS(c.require_known({{"sweep", {"alphas"}}}), InvalidArgument);
    CHECK_NOTHROW(c.require_known({{"sweep", {"alphas", "bogus"}}}));
    CHECK_THROWS_AS(c.require_known({{"other", {"alphas", "bogus"}}}), InvalidArgument);
}

TEST_CASE("hash follows content, not layout") {
    const Config a = Config::parse("s:\n  x: 1\n  y: 2\n");
    const Config b = Config::parse("# reordered\ns: {y: 2, x: 1}\n");
    const Config c = Config::parse("s:\n  x: 1\n  y: 3\n");
    CHECK(a.hash() == b.hash());
    CHECK(a.hash() != c.hash());
    CHECK(a.canonical() == "s.x=1\ns.y=2\n");
}

TEST_CASE("number parsing") {
    CHECK(parse_double("1e-3") == 1e-3);
    CHECK(parse_double(" +2.5 ") == 2.5);
    CHECK(std::isinf(parse_double("inf")));
    CHECK_THROWS_AS(parse_double("1.5x"), InvalidArgument);
    CHECK(parse_int("-12") == -12);
    CHECK_THROWS_AS(parse_int("1.0"), InvalidArgument);
    CHECK(split_list(" a, ,b ") == std::vector<std::string>{"a", "b"});
}
