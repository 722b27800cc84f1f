#include "twinforge/config.hpp"

#include <doctest.h>

#include <sstream>

using twinforge::Config;
using twinforge::ConfigError;

TEST_CASE("config parsing")
{
    const Config c = Config::parse_string("# header\nexperiment = bayes-ma\nseed=7\n\n[bayes-ma]\n  lr = 0.5  \n"
                                          "kappa_grid = 0, 0.5,0.9\nname = a = b\nempty =\n");
    CHECK(c.get("", "experiment") == "bayes-ma");
    CHECK(c.get_int("", "seed") == 7);
    CHECK(c.get_double("bayes-ma", "lr") == 0.5);
    CHECK(c.get_list("bayes-ma", "kappa_grid") == std::vector<double>{0.0, 0.5, 0.9});
    CHECK(c.get("bayes-ma", "name") == "a = b");
    CHECK(c.get("bayes-ma", "empty").empty());
    CHECK(c.get_or("bayes-ma", "missing", "x") == "x");
    CHECK(c.get_int_or("bayes-ma", "missing", 3) == 3);
    CHECK(c.has_section("bayes-ma"));
    CHECK_FALSE(c.has("bayes-ma", "missing"));
}

TEST_CASE("config round-trips through its canonical text")
{
    Config c = Config::parse_string("a = 1\n[s]\nb = 2, 3\n[t.u]\nc = x y\n");
    c.set("s", "d", "4");
    c.set("new", "e", "5");
    c.set("", "a", "9");
    const Config back = Config::parse_string(c.serialize());
    CHECK(back == c);
    CHECK(back.get("", "a") == "9");
    CHECK(back.get_double("new", "e") == 5.0);
    CHECK(Config::parse_string(back.serialize()).serialize() == back.serialize());
}

TEST_CASE("config errors carry line numbers")
{
    CHECK_THROWS_WITH_AS(Config::parse_string("a = 1\nbogus line\n"), doctest::Contains("line 2"), ConfigError);
    CHECK_THROWS_WITH_AS(Config::parse_string("[s]\nx = 1\nx = 2\n"), doctest::Contains("line 3"), ConfigError);
    CHECK_THROWS_WITH_AS(Config::parse_string("[s]\n[s]\n"), doctest::Contains("line 2"), ConfigError);
    CHECK_THROWS_WITH_AS(Config::parse_string("[bad name]\n"), doctest::Contains("line 1"), ConfigError);
    CHECK_THROWS_WITH_AS(Config::parse_string("\n\n[open\n"), doctest::Contains("line 3"), ConfigError);

    const Config c = Config::parse_string("[s]\nx = abc\ny = 1.5\nz = 1,,2\n");
    CHECK_THROWS_AS(c.get_double("s", "x"), ConfigError);
    CHECK_THROWS_AS(c.get_int("s", "y"), ConfigError);
    CHECK_THROWS_AS(c.get_list("s", "z"), ConfigError);
    CHECK_THROWS_WITH_AS(c.get("s", "w"), doctest::Contains("w"), ConfigError);
    CHECK_THROWS_AS(Config::load("/nonexistent/config.ini"), ConfigError);
}
