#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "biaslens/diagnostics.hpp"
#include "support/temp_dir.hpp"

using namespace biaslens;
using biaslens::testing::TempDir;

namespace {

TabularProvider two_option_table(double logprob_a, int tokens_a,
                                 double logprob_b, int tokens_b) {
  TabularProvider provider;
  std::vector<double> ta(tokens_a, logprob_a / tokens_a);
  std::vector<double> tb(tokens_b, logprob_b / tokens_b);
  provider.set("C", " a", logprob_a, ta);
  provider.set("C", " b", logprob_b, tb);
  return provider;
}

}  // namespace

TEST_SUITE("diagnostics.preference") {
  TEST_CASE("per-token margins compare mean logprobs") {
    TabularProvider provider = two_option_table(-1.0, 2, -3.0, 2);
    const PreferenceResult result = preference("C", " a", " b", provider);
    CHECK(result.ordering == PreferenceOrdering::APreferred);
    CHECK(result.margin == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(result.a_score == doctest::Approx(-0.5));
    CHECK(result.b_score == doctest::Approx(-1.5));
  }

  TEST_CASE("identical scores tie") {
    TabularProvider provider = two_option_table(-2.0, 2, -2.0, 2);
    const PreferenceResult result = preference("C", " a", " b", provider);
    CHECK(result.ordering == PreferenceOrdering::Tie);
    CHECK(result.margin == doctest::Approx(0.0));
  }

  TEST_CASE("identical strings are a precondition error") {
    TabularProvider provider = two_option_table(-1.0, 1, -2.0, 1);
    CHECK_THROWS_AS(preference("C", " a", " a", provider), ValidationError);
  }

  TEST_CASE("length normalization can be turned off") {
    // Unnormalized, b wins: -3.0 > -4.0. Normalized, a wins: -1.5 < -1.0.
    TabularProvider provider;
    provider.set("C", " a", -4.0, std::vector<double>{-1.0, -1.0, -1.0, -1.0});
    provider.set("C", " b", -3.0, std::vector<double>{-1.5, -1.5});
    const PreferenceResult normalized = preference("C", " a", " b", provider);
    CHECK(normalized.ordering == PreferenceOrdering::APreferred);
    CHECK(normalized.margin == doctest::Approx(0.5));
    const PreferenceResult raw =
        preference("C", " a", " b", provider, /*length_normalize=*/false);
    CHECK(raw.ordering == PreferenceOrdering::BPreferred);
    CHECK(raw.margin == doctest::Approx(-1.0));
  }

  TEST_CASE("preference is antisymmetric") {
    std::mt19937 rng(31);
    std::uniform_real_distribution<double> logp(-8.0, -0.5);
    std::uniform_int_distribution<int> token_count(1, 4);
    for (int round = 0; round < 50; ++round) {
      const int ta = token_count(rng);
      const int tb = token_count(rng);
      TabularProvider provider =
          two_option_table(logp(rng) * ta, ta, logp(rng) * tb, tb);
      const PreferenceResult forward = preference("C", " a", " b", provider);
      const PreferenceResult backward = preference("C", " b", " a", provider);
      CHECK(forward.margin == doctest::Approx(-backward.margin).epsilon(1e-12));
      switch (forward.ordering) {
        case PreferenceOrdering::APreferred:
          CHECK(backward.ordering == PreferenceOrdering::BPreferred);
          break;
        case PreferenceOrdering::BPreferred:
          CHECK(backward.ordering == PreferenceOrdering::APreferred);
          break;
        case PreferenceOrdering::Tie:
          CHECK(backward.ordering == PreferenceOrdering::Tie);
          break;
      }
    }
  }
}

TEST_SUITE("diagnostics.flip_rate") {
  TEST_CASE("agreeing pairs have flip rate zero") {
    TabularProvider provider;
    provider.set("C", " a1", -1.0);
    provider.set("C", " a2", -1.2);
    provider.set("C", " b1", -3.0);
    provider.set("C", " b2", -3.2);
    AssociationCase c{"agree", "C", {" a1", " a2"}, {" b1", " b2"}};
    const FlipReport report = flip_rate(c, provider);
    CHECK(report.flip_rate == 0.0);
    CHECK(report.verdicts.size() == 2);
  }

  TEST_CASE("orderings A,B,A give a flip rate of one half") {
    TabularProvider provider;
    provider.set("C", " a1", -1.0);
    provider.set("C", " b1", -2.0);  // A preferred
    provider.set("C", " a2", -2.0);
    provider.set("C", " b2", -1.0);  // B preferred: flip
    provider.set("C", " a3", -1.0);
    provider.set("C", " b3", -2.0);  // A preferred
    AssociationCase c{"half", "C", {" a1", " a2", " a3"},
                      {" b1", " b2", " b3"}};
    const FlipReport report = flip_rate(c, provider);
    CHECK(report.flip_rate == doctest::Approx(0.5));
    CHECK(report.verdicts[0].result.ordering ==
          PreferenceOrdering::APreferred);
    CHECK(report.verdicts[1].result.ordering ==
          PreferenceOrdering::BPreferred);
  }

  TEST_CASE("a constructed paraphrase flip is detected") {
    // Pair 1 prefers the stereotype; the paraphrase in pair 2 flips it.
    TabularProvider provider;
    provider.set("C", " s original", -2.0, std::vector<double>{-1.0, -1.0});
    provider.set("C", " n original", -4.0, std::vector<double>{-2.0, -2.0});
    provider.set("C", " s reworded", -6.0, std::vector<double>{-3.0, -3.0});
    provider.set("C", " n reworded", -4.0, std::vector<double>{-2.0, -2.0});
    AssociationCase c{"flip", "C", {" s original", " s reworded"},
                      {" n original", " n reworded"}};
    const FlipReport report = flip_rate(c, provider);
    CHECK(report.flip_rate == doctest::Approx(1.0));  // 1 flip / 1 comparison
  }

  TEST_CASE("copies of one pair never flip") {
    TabularProvider provider;
    provider.set("C", " x", -1.0);
    provider.set("C", " y", -2.0);
    AssociationCase c{"copies", "C", {" x", " x", " x"}, {" y", " y", " y"}};
    CHECK(flip_rate(c, provider).flip_rate == 0.0);
  }

  TEST_CASE("unequal lists compare all pairs") {
    TabularProvider provider;
    provider.set("C", " a1", -1.0);
    provider.set("C", " a2", -1.0);
    provider.set("C", " b1", -2.0);
    provider.set("C", " b2", -2.0);
    provider.set("C", " b3", -0.5);
    AssociationCase c{"cross", "C", {" a1", " a2"}, {" b1", " b2", " b3"}};
    const FlipReport report = flip_rate(c, provider);
    CHECK(report.verdicts.size() == 6);
    // Pairs with b3 prefer B; the other four prefer A. First pair prefers A.
    CHECK(report.flip_rate == doctest::Approx(2.0 / 5.0));
  }

  TEST_CASE("fewer than two pairs is a validation error") {
    TabularProvider provider;
    provider.set("C", " a", -1.0);
    provider.set("C", " b", -2.0);
    AssociationCase c{"single", "C", {" a"}, {" b"}};
    CHECK_THROWS_AS(flip_rate(c, provider), ValidationError);
  }

  TEST_CASE("case files load and validate") {
    TempDir dir;
    const auto path = dir.file("cases.json");
    std::ofstream(path) << R"([{
      "name": "demo",
      "context": "C",
      "option_a": [" a1", " a2"],
      "option_b": [" b1", " b2"]
    }])";
    const std::vector<AssociationCase> cases = load_association_cases(path);
    REQUIRE(cases.size() == 1);
    CHECK(cases[0].name == "demo");
    CHECK(cases[0].option_a.size() == 2);

    std::ofstream(path) << "[]";
    CHECK_THROWS_AS(load_association_cases(path), ValidationError);
    std::ofstream(path) << R"([{"context": "C", "option_a": [], "option_b": ["x"]}])";
    CHECK_THROWS_AS(load_association_cases(path), ValidationError);
    std::ofstream(path) << "not json";
    CHECK_THROWS_AS(load_association_cases(path), IoError);
  }
}
