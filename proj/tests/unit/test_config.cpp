#include <doctest.h>

#include <string>

#include "vitalloc/error.hpp"
#include "vitalloc/kv_config.hpp"

using namespace vitalloc;

TEST_CASE("key-value parsing") {
  const auto kv = KeyValueConfig::parse(
      "# comment\n"
      "agent_clip_ratio = 2   # trailing\n"
      "\n"
      "  trains_per_epoch=20\n"
      "name = a b c\n"
      "flag = yes\n"
      "trains_per_epoch = 30\n");
  CHECK(kv.get_double("agent_clip_ratio", 0) == 2.0);
  CHECK(kv.get_int("trains_per_epoch", 0) == 30);
  CHECK(kv.get_string("name", "") == "a b c");
  CHECK(kv.get_bool("flag", false));
  CHECK(kv.get_int("missing", 7) == 7);
  CHECK_FALSE(kv.get("missing").has_value());
}

TEST_CASE("parse errors carry the line number") {
  try {
    KeyValueConfig::parse("a = 1\nnot a pair\n", "run.cfg");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kParse);
    CHECK(std::string(e.what()).find("run.cfg:2") != std::string::npos);
  }
}

TEST_CASE("typed getters reject bad values") {
  const auto kv = KeyValueConfig::parse("n = 12x\nx = abc\nb = maybe\n");
  CHECK_THROWS_AS(kv.get_int("n", 0), Error);
  CHECK_THROWS_AS(kv.get_double("x", 0), Error);
  CHECK_THROWS_AS(kv.get_bool("b", false), Error);
}

TEST_CASE("split and trim") {
  const auto parts = split("a,,b, c", ',');
  REQUIRE(parts.size() == 4);
  CHECK(parts[1].empty());
  CHECK(trim(parts[3]) == "c");
  CHECK(trim("  \t x y \n") == "x y");
}

TEST_CASE("missing file") {
  try {
    KeyValueConfig::load("/nonexistent/run.cfg");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kIo);
  }
}
