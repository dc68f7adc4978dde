#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "tmlm/metrics.hpp"

using namespace tmlm;

TEST_CASE("exact_match") {
  CHECK(exact_match(" Rome\n", "rome") == 1);
  CHECK(exact_match("Paris", "Rome") == 0);
  CHECK(exact_match("New  Delhi", "New Delhi") == 1);
  CHECK(exact_match("Rome.", "rome") == 1);
  CHECK(exact_match("", "") == 1);
  CHECK(normalize_answer("  Hello,\tWorld!  ") == "hello, world");
}

TEST_CASE("rouge1") {
  const auto same = rouge1("the cat sat", "the cat sat");
  CHECK(same.precision == 1.0);
  CHECK(same.recall == 1.0);
  CHECK(same.f1 == 1.0);

  const auto r = rouge1("the cat sat", "the cat ran");
  CHECK(r.precision == doctest::Approx(2.0 / 3.0));
  CHECK(r.recall == doctest::Approx(2.0 / 3.0));
  CHECK(r.f1 == doctest::Approx(2.0 / 3.0));

  const auto none = rouge1("a b", "c d");
  CHECK(none.f1 == 0.0);
  CHECK(none.precision == 0.0);

  // Repeated tokens are clipped by the reference count.
  const auto clipped = rouge1("the the the", "the cat");
  CHECK(clipped.precision == doctest::Approx(1.0 / 3.0));
  CHECK(clipped.recall == doctest::Approx(0.5));
}

TEST_CASE("rougeL") {
  const auto same = rougeL("x y z", "x y z");
  CHECK(same.f1 == 1.0);
  const auto r = rougeL("a b c d", "a c b d");
  CHECK(r.precision == doctest::Approx(0.75));
  CHECK(r.recall == doctest::Approx(0.75));
  CHECK(r.f1 == doctest::Approx(0.75));
  const auto empty = rougeL("", "a b");
  CHECK(empty.precision == 0.0);
  CHECK(empty.recall == 0.0);
  CHECK(empty.f1 == 0.0);
}

TEST_CASE("rouge tokenization") {
  CHECK(rouge_tokens("Hello, World! it's") == std::vector<std::string>{"hello", "world", "its"});
  CHECK(rouge_tokens(" -- ").empty());
  CHECK(first_line("abc\ndef") == "abc");
  CHECK(first_line("abc") == "abc");
}
