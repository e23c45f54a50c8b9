#include <doctest.h>

#include <cmath>
#include <random>

#include "dedupkit/error.hpp"
#include "dedupkit/prototypes.hpp"
#include "oracles.hpp"

using namespace dedupkit;

TEST_SUITE("prototypes") {

TEST_CASE("shipped concept list expands to 330 captions") {
  const auto spec = ConceptSpec::from_json_file(DEDUPKIT_DATA_DIR "/concepts_default.json");
  CHECK(spec.concepts.size() == 110);
  CHECK(spec.templates.size() == 3);
  const auto caps = expand_captions(spec);
  CHECK(caps.size() == 330);
  CHECK(caps.front().text == "A photo of a " + spec.concepts.front());
  CHECK(caps.back().id() == "c109:t2");
}

TEST_CASE("caption enumeration is concept-major") {
  const auto one = expand_captions(ConceptSpec{{"woman"}, {"A {concept}"}});
  REQUIRE(one.size() == 1);
  CHECK(one[0].concept_index == 0);
  CHECK(one[0].text == "A woman");
  const auto four = expand_captions(ConceptSpec{{"a", "b"}, {"x {concept}", "{concept} y"}});
  REQUIRE(four.size() == 4);
  CHECK(four[0].text == "x a");
  CHECK(four[1].text == "a y");
  CHECK(four[2].text == "x b");
  CHECK(four[3].text == "b y");
  CHECK(four[2].id() == "c1:t0");
}

TEST_CASE("concept spec validation") {
  CHECK_THROWS_AS(ConceptSpec({}, {"{concept}"}).validate(), ValidationError);
  CHECK_THROWS_AS(ConceptSpec({"a", "a"}, {"{concept}"}).validate(), ValidationError);
  CHECK_THROWS_AS(ConceptSpec({"a"}, {"no placeholder"}).validate(), ValidationError);
  CHECK_THROWS_AS(ConceptSpec({"a"}, {"{concept} and {concept}"}).validate(), ValidationError);
  CHECK_THROWS_AS(ConceptSpec::from_json_text("{\"concepts\": 3}"), ValidationError);
  CHECK_THROWS_AS(ConceptSpec::from_json_text("{nope"), FormatError);
}

TEST_CASE("prototype is the renormalized template mean") {
  const ConceptSpec spec{{"p", "q"}, {"A {concept}", "B {concept}"}};
  EmbeddingMatrix caps(2, {1, 0, 0, 1, 2, 2, 1, 1}, {"c0:t0", "c0:t1", "c1:t0", "c1:t1"});
  const auto protos = build_prototypes(spec, caps);
  REQUIRE(protos.size() == 2);
  CHECK(protos.names()[1] == "q");
  CHECK(protos.vector(0)[0] == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-7));
  CHECK(protos.vector(0)[1] == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-7));
  CHECK(protos.vector(1)[0] == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-7));

  EmbeddingMatrix opposite(2, {1, 0, -1, 0, 1, 0, 1, 0}, {"c0:t0", "c0:t1", "c1:t0", "c1:t1"});
  CHECK_THROWS_AS(build_prototypes(spec, opposite), DegenerateConceptError);
  EmbeddingMatrix too_few(2, {1, 0, 0, 1}, {"a", "b"});
  CHECK_THROWS_AS(build_prototypes(spec, too_few), ValidationError);
}

TEST_CASE("prototypes are invariant to template order") {
  std::mt19937_64 gen(3);
  oracle::Rows rows;
  for (int i = 0; i < 6; ++i) rows.push_back(oracle::random_unit(gen, 5));
  const ConceptSpec spec{{"a", "b"}, {"1 {concept}", "2 {concept}", "3 {concept}"}};
  const auto base = build_prototypes(spec, oracle::matrix_of(rows, 5));
  oracle::Rows permuted{rows[2], rows[0], rows[1], rows[4], rows[5], rows[3]};
  const auto perm = build_prototypes(spec, oracle::matrix_of(permuted, 5));
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t t = 0; t < 5; ++t) {
      CHECK(perm.vector(c)[t] == doctest::Approx(base.vector(c)[t]).epsilon(1e-6));
    }
  }
  const auto identical = build_prototypes(
      spec, oracle::matrix_of({rows[0], rows[0], rows[0], rows[1], rows[1], rows[1]}, 5));
  for (std::size_t t = 0; t < 5; ++t) {
    CHECK(identical.vector(0)[t] == doctest::Approx(rows[0][t]).epsilon(1e-6));
  }
}

TEST_CASE("concept similarities are cosines") {
  EmbeddingMatrix images(2, {1, 0, 0, 1, 5, 0}, {"i0", "i1", "i2"});
  const auto protos = ConceptPrototypeSet::from_matrix(EmbeddingMatrix(2, {1, 0, 1, 1}, {"x", "y"}));
  const auto s = concept_similarities(images, protos, 2);
  REQUIRE(s.rows == 3);
  REQUIRE(s.cols == 2);
  CHECK(s.at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.at(1, 0) == 0.0);
  CHECK(s.at(0, 1) == doctest::Approx(0.70711).epsilon(1e-5));
  CHECK(s.at(2, 1) == s.at(0, 1));  // rescaled row
  const auto wrong = ConceptPrototypeSet::from_matrix(EmbeddingMatrix(3, {1, 0, 0}, {"z"}));
  CHECK_THROWS_AS(concept_similarities(images, wrong), DimensionError);
}

}  // TEST_SUITE
