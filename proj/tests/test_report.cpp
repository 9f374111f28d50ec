#include <catch2/catch_amalgamated.hpp>

#include "lenlab/report.hpp"

using namespace lenlab;

namespace {

std::map<std::string, double> em_only(double v) { return {{"em", v}}; }

// Two schemes, one metric, every cell filled with hand-checkable values.
GeneralizationMatrix fixture_matrix() {
  GeneralizationMatrix m({"sinusoidal", "t5"}, {"em"});
  const std::string h = "deadbeef01020304";
  // sinusoidal: tested-on-short row reproduces a published row shape
  m.set_cell("sinusoidal", "short", "short", em_only(10.81), h);
  m.set_cell("sinusoidal", "medium", "short", em_only(2.91), h);
  m.set_cell("sinusoidal", "long", "short", em_only(0.50), h);
  m.set_cell("sinusoidal", "short", "medium", em_only(1.0), h);
  m.set_cell("sinusoidal", "medium", "medium", em_only(8.0), h);
  m.set_cell("sinusoidal", "long", "medium", em_only(2.0), h);
  m.set_cell("sinusoidal", "short", "long", em_only(0.5), h);
  m.set_cell("sinusoidal", "medium", "long", em_only(1.5), h);
  m.set_cell("sinusoidal", "long", "long", em_only(6.0), h);
  m.set_cell("sinusoidal", "mix", "short", em_only(9.85), h);
  m.set_cell("sinusoidal", "mix", "medium", em_only(8.0), h);
  m.set_cell("sinusoidal", "mix", "long", em_only(3.0), h);

  m.set_cell("t5", "short", "short", em_only(42.97), h);
  m.set_cell("t5", "medium", "short", em_only(20.0), h);
  m.set_cell("t5", "long", "short", em_only(10.0), h);
  m.set_cell("t5", "short", "medium", em_only(10.0), h);
  m.set_cell("t5", "medium", "medium", em_only(20.0), h);
  m.set_cell("t5", "long", "medium", em_only(10.0), h);
  m.set_cell("t5", "short", "long", em_only(5.0), h);
  m.set_cell("t5", "medium", "long", em_only(10.0), h);
  m.set_cell("t5", "long", "long", em_only(20.0), h);
  m.set_cell("t5", "mix", "short", em_only(45.47), h);
  m.set_cell("t5", "mix", "medium", em_only(20.0), h);
  m.set_cell("t5", "mix", "long", em_only(0.0), h);
  return m;
}

}  // namespace

TEST_CASE("matrix cells, deltas, and completeness") {
  auto m = fixture_matrix();
  REQUIRE(m.complete());
  REQUIRE(m.missing_cells().empty());
  REQUIRE(m.score("sinusoidal", "medium", "short", "em") == 2.91);
  REQUIRE(m.config_hash() == "deadbeef01020304");

  REQUIRE(*m.avg_delta_cell("sinusoidal", "short", "em") ==
          Catch::Approx(84.2275).margin(5e-3));
  REQUIRE(*m.avg_delta_cell("t5", "medium", "em") == Catch::Approx(50.0));
  REQUIRE(*m.mix_delta_cell("t5", "short", "em") ==
          Catch::Approx(5.8180).margin(5e-3));
  REQUIRE(*m.mix_delta_cell("sinusoidal", "short", "em") ==
          Catch::Approx(-8.8807).margin(5e-3));
  REQUIRE(*m.mix_delta_cell("sinusoidal", "medium", "em") == 0.0);

  REQUIRE_THROWS_AS(m.score("t5", "short", "short", "bleu"), ContractError);
  REQUIRE_THROWS_AS(m.score("alibi", "short", "short", "em"), ContractError);
}

TEST_CASE("incomplete matrices name their missing cells") {
  GeneralizationMatrix m({"sinusoidal"}, {"em"});
  m.set_cell("sinusoidal", "short", "short", em_only(1.0), "h1");
  REQUIRE_FALSE(m.complete());
  auto missing = m.missing_cells();
  REQUIRE(missing.size() == 11);
  REQUIRE(missing.front() == "sinusoidal/short/medium");

  REQUIRE_THROWS_WITH(m.render_markdown(),
                      Catch::Matchers::ContainsSubstring("matrix incomplete") &&
                          Catch::Matchers::ContainsSubstring("sinusoidal/mix/long"));
  REQUIRE_THROWS_WITH(m.to_csv(),
                      Catch::Matchers::ContainsSubstring("sinusoidal/medium/short"));
}

TEST_CASE("mixing config hashes is rejected") {
  GeneralizationMatrix m({"sinusoidal"}, {"em"});
  m.set_cell("sinusoidal", "short", "short", em_only(1.0), "aaaa");
  REQUIRE_THROWS_AS(
      m.set_cell("sinusoidal", "medium", "short", em_only(1.0), "bbbb"),
      ConfigError);
  REQUIRE_THROWS_AS(
      m.set_cell("sinusoidal", "week", "short", em_only(1.0), "aaaa"),
      ConfigError);
  REQUIRE_THROWS_AS(
      m.set_cell("sinusoidal", "short", "short", {{"bleu", 1.0}}, "aaaa"),
      ContractError);
}

TEST_CASE("markdown rendering matches the golden fixture") {
  const std::string expected = R"(# Generalization matrix

## em

| Test bucket | Scheme | Train short | Train medium | Train long | Avg Δ |
| --- | --- | --- | --- | --- | --- |
| short | sinusoidal | **10.81** | 2.91 | 0.50 | 84.23% |
| short | t5 | **42.97** | 20.00 | 10.00 | 65.09% |
| medium | sinusoidal | 1.00 | **8.00** | 2.00 | 81.25% |
| medium | t5 | 10.00 | **20.00** | 10.00 | 50.00% |
| long | sinusoidal | 0.50 | 1.50 | **6.00** | 83.33% |
| long | t5 | 5.00 | 10.00 | **20.00** | 62.50% |

### em, mix-trained

| Scheme | Row | Test short | Test medium | Test long |
| --- | --- | --- | --- | --- |
| sinusoidal | mix | 9.85 | 8.00 | 3.00 |
| sinusoidal | Δ | -8.88% | 0.00% | -50.00% |
| t5 | mix | 45.47 | 20.00 | 0.00 |
| t5 | Δ | +5.82% | 0.00% | -100.00% |
)";
  REQUIRE(fixture_matrix().render_markdown() == expected);
}

TEST_CASE("avg delta renders n/a when the matched score is zero") {
  GeneralizationMatrix m({"sinusoidal"}, {"em"});
  const std::string h = "h";
  for (const auto& tr : train_bucket_names())
    for (const auto& te : test_bucket_names())
      m.set_cell("sinusoidal", tr, te, em_only(0.0), h);
  auto md = m.render_markdown();
  REQUIRE_FALSE(m.avg_delta_cell("sinusoidal", "short", "em").has_value());
  REQUIRE(md.find("n/a") != std::string::npos);
  // ties: every train cell is the row maximum
  REQUIRE(md.find("**0.00** | **0.00** | **0.00**") != std::string::npos);
}

TEST_CASE("csv layout and value fidelity") {
  auto m = fixture_matrix();
  auto csv = m.to_csv();
  REQUIRE(csv.rfind("scheme,train_bucket,test_bucket,metric,score\n", 0) == 0);
  REQUIRE(std::count(csv.begin(), csv.end(), '\n') == 1 + 2 * 4 * 3);
  REQUIRE(csv.find("sinusoidal,short,short,em,10.81\n") != std::string::npos);
  REQUIRE(csv.find("t5,mix,short,em,45.47\n") != std::string::npos);
  REQUIRE(csv.find("t5,mix,long,em,0\n") != std::string::npos);
}

TEST_CASE("matrix json round trip") {
  auto m = fixture_matrix();
  auto back = GeneralizationMatrix::from_json(m.to_json());
  REQUIRE(back.config_hash() == m.config_hash());
  REQUIRE(back.complete());
  for (const auto& s : m.schemes())
    for (const auto& tr : train_bucket_names())
      for (const auto& te : test_bucket_names())
        REQUIRE(back.score(s, tr, te, "em") == m.score(s, tr, te, "em"));
  REQUIRE(back.render_markdown() == m.render_markdown());

  REQUIRE_THROWS_AS(GeneralizationMatrix::from_json("{"), ParseError);
  REQUIRE_THROWS_AS(GeneralizationMatrix::from_json("{\"cells\":[]}"), ParseError);
}
