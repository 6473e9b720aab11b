#include <doctest.h>

#include "distillrank/error.hpp"
#include "distillrank/index.hpp"
#include "support.hpp"

using namespace distillrank;
using namespace testing;

namespace {

const SimilarityMode kModes[] = {SimilarityMode::dot, SimilarityMode::cosine, SimilarityMode::maxsim};

/// Full sort by similarity, ties by doc_id.
std::vector<std::string> brute_force(const EncoderModel& m, const Corpus& c, const Query& q) {
  std::vector<std::pair<double, std::string>> all;
  for (const auto& d : c.docs()) all.emplace_back(similarity(m, q, d), d.id);
  std::sort(all.begin(), all.end(),
            [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
  std::vector<std::string> ids;
  for (const auto& [_, id] : all) ids.push_back(id);
  return ids;
}

}  // namespace

TEST_CASE("index covers every document") {
  const auto c = random_corpus(1, 100, 3);
  const auto m = random_model(c.vocabulary().size(), SimilarityMode::dot, 1);
  const auto idx = build_index(m, c);
  CHECK(idx.size() == 100);
  CHECK(idx.fingerprint() == m.fingerprint());
  CHECK(build_index(m, c).fingerprint() == idx.fingerprint());
  CHECK(build_index(m, c) == idx);
}

TEST_CASE("fingerprint changes after a parameter update") {
  const auto c = random_corpus(2, 30, 3);
  auto m = random_model(c.vocabulary().size(), SimilarityMode::dot, 2);
  const auto before = build_index(m, c).fingerprint();
  const auto g = backward(m, c.queries()[0], c.docs()[1], 1.0);
  m.query_table() -= 0.1 * g.query;
  CHECK(build_index(m, c).fingerprint() != before);
}

TEST_CASE("retrieve returns the argmax and clamps k") {
  const auto c = random_corpus(3, 20, 5);
  const auto m = random_model(c.vocabulary().size(), SimilarityMode::dot, 3);
  const auto idx = build_index(m, c);
  for (const auto& q : c.queries()) {
    const auto expected = brute_force(m, c, q);
    const auto top1 = retrieve(idx, m, q, 1);
    REQUIRE(top1.entries.size() == 1);
    CHECK(top1.entries[0].doc_id == expected[0]);
    CHECK(top1.entries[0].score == similarity(m, q, c.doc(expected[0])));
    const auto all = retrieve(idx, m, q, 1000);
    CHECK(all.entries.size() == 20);
    CHECK_NOTHROW(all.validate());
  }
  CHECK_THROWS_AS(retrieve(idx, m, c.queries()[0], 0), ValidationError);
}

TEST_CASE("retrieval matches a brute-force sort in every mode") {
  const auto c = random_corpus(4, 500, 20);
  for (auto mode : kModes) {
    const auto m = random_model(c.vocabulary().size(), mode, 4);
    const auto idx = build_index(m, c);
    for (const auto& q : c.queries()) {
      const auto expected = brute_force(m, c, q);
      const auto run = retrieve(idx, m, q, 10);
      REQUIRE(run.entries.size() == 10);
      for (std::size_t r = 0; r < 10; ++r) {
        CHECK(run.entries[r].doc_id == expected[r]);
        CHECK(run.entries[r].rank == static_cast<int>(r + 1));
      }
    }
  }
}

TEST_CASE("ties are broken by doc_id") {
  // Identical texts give identical scores; the input order is scrambled.
  auto c = Corpus::from_records({{"d3", "a b"}, {"d1", "a b"}, {"d2", "a b"}, {"d0", "c"}}, {{"q1", "a"}});
  const auto m = random_model(c.vocabulary().size(), SimilarityMode::dot, 5);
  const auto idx = build_index(m, c);
  const auto run = retrieve(idx, m, c.queries()[0], 4);
  std::vector<std::string> tied;
  for (const auto& e : run.entries)
    if (e.doc_id != "d0") tied.push_back(e.doc_id);
  CHECK(tied == std::vector<std::string>{"d1", "d2", "d3"});
  CHECK(retrieve(idx, m, c.queries()[0], 4) == run);
}

TEST_CASE("stale index is detected") {
  const auto c = random_corpus(6, 20, 2);
  auto m = random_model(c.vocabulary().size(), SimilarityMode::dot, 6);
  const auto idx = build_index(m, c);
  m.query_table()(0, 0) += 1e-3;
  CHECK_THROWS_AS(retrieve(idx, m, c.queries()[0], 5), StaleIndexError);
  CHECK_THROWS_AS(build_index(m, Corpus()), ValidationError);
}

TEST_CASE("parallel retrieval and indexing match the serial result") {
  const auto c = random_corpus(7, 200, 40);
  for (auto mode : kModes) {
    const auto m = random_model(c.vocabulary().size(), mode, 7);
    const auto serial = build_index(m, c, 1);
    const auto parallel = build_index(m, c, 4);
    CHECK(serial == parallel);
    CHECK(retrieve_all(serial, m, c.queries(), 15, 1) == retrieve_all(parallel, m, c.queries(), 15, 4));
  }
}

TEST_CASE("index files round-trip") {
  const auto c = random_corpus(8, 50, 2);
  const auto dir = temp_dir("index");
  for (auto mode : kModes) {
    const auto m = random_model(c.vocabulary().size(), mode, 8);
    const auto idx = build_index(m, c);
    save_index(idx, dir / "i.idx");
    const auto back = load_index(dir / "i.idx");
    CHECK(back == idx);
    CHECK(retrieve(back, m, c.queries()[0], 7) == retrieve(idx, m, c.queries()[0], 7));
  }
}
