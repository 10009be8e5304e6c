// Copyright (c) 2026 The dolg authors
// SPDX-License-Identifier: Apache-2.0
//
#include "helpers.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "dolg/evaluation.hpp"
#include "dolg/selftest.hpp"

using namespace dolg;

namespace {

DescriptorStore store_from(const std::vector<std::pair<std::string, std::vector<double>>>& rows) {
  DescriptorStore s(rows.front().second.size());
  for (const auto& [id, v] : rows) s.add(id, normalize_unit(Tensor::vector(std::vector<double>(v))));
  return s;
}

}  // namespace

TEST_CASE("rank puts the query itself first and breaks ties by id") {
  DescriptorStore db(2);
  db.add("b_dup", Tensor::vector({1.0, 0.0}));
  db.add("a_dup", Tensor::vector({1.0, 0.0}));
  db.add("ortho", Tensor::vector({0.0, 1.0}));
  const auto ranked = rank(Tensor::vector({1.0, 0.0}), db);
  REQUIRE(ranked == std::vector<std::string>{"a_dup", "b_dup", "ortho"});
}

TEST_CASE("2-d toy ranking") {
  DescriptorStore db(2);
  db.add("a", Tensor::vector({1.0, 0.0}));
  db.add("b", Tensor::vector({0.0, 1.0}));
  REQUIRE(rank(Tensor::vector({1.0, 0.0}), db) == std::vector<std::string>{"a", "b"});
}

TEST_CASE("rank matches an exhaustive sort oracle and is a permutation") {
  Rng rng(1);
  DescriptorStore db(8);
  std::vector<std::pair<std::string, Tensor>> raw;
  for (int i = 0; i < 1000; ++i) {
    char name[16];
    std::snprintf(name, sizeof(name), "id%04d", i);
    Tensor v = normalize_unit(rng.normal_tensor({8}, 1.0));
    db.add(name, v);
    raw.emplace_back(name, v);
  }
  const Tensor q = normalize_unit(rng.normal_tensor({8}, 1.0));
  const auto got = rank(q, db);

  // independent oracle: recompute similarities from the float32 rows and sort
  std::vector<std::pair<double, std::string>> oracle;
  for (std::size_t i = 0; i < db.count(); ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < 8; ++k) s += q[k] * static_cast<double>(db.row(i)[k]);
    oracle.emplace_back(s, db.ids()[i]);
  }
  std::sort(oracle.begin(), oracle.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (std::size_t i = 0; i < oracle.size(); ++i) REQUIRE(got[i] == oracle[i].second);

  std::set<std::string> unique(got.begin(), got.end());
  REQUIRE(unique.size() == db.count());
}

TEST_CASE("rank rejects mismatched dimensions naming both") {
  DescriptorStore db(8);
  db.add("a", normalize_unit(Tensor::full({8}, 1.0)));
  try {
    rank(Tensor::vector({1.0, 0.0, 0.0, 0.0}), db);
    FAIL("expected shape_error");
  } catch (const shape_error& e) {
    const std::string msg = e.what();
    REQUIRE(msg.find("4") != std::string::npos);
    REQUIRE(msg.find("8") != std::string::npos);
  }
  DescriptorStore empty(4);
  REQUIRE_THROWS_AS(rank(Tensor::vector({1.0, 0.0, 0.0, 0.0}), empty), invalid_input_error);
}

TEST_CASE("average precision closed forms") {
  const std::vector<std::string> ranked = {"a", "b", "c", "d"};
  // all positives ranked first
  REQUIRE(*average_precision(ranked, {"a", "b"}, {}) == 1.0);
  // one positive at filtered rank 2 of 2
  REQUIRE(*average_precision({"n", "p"}, {"p"}, {}) == 0.5);
  // junk removed before ranks are assigned
  REQUIRE(*average_precision({"j", "p", "n"}, {"p"}, {"j"}) == 1.0);
  // positives absent from the ranking contribute zero: (1/1 + 0) / 2
  REQUIRE(*average_precision({"a", "b"}, {"a", "ghost"}, {}) == 0.5);
  // empty positives: excluded
  REQUIRE(!average_precision(ranked, {}, {}).has_value());
}

TEST_CASE("AP is invariant to reshuffling below the last positive") {
  const std::set<std::string> pos = {"p1", "p2"};
  const std::set<std::string> junk = {"j"};
  const std::vector<std::string> a = {"p1", "n1", "p2", "n2", "n3", "j", "n4"};
  const std::vector<std::string> b = {"p1", "n1", "p2", "n4", "j", "n3", "n2"};
  REQUIRE(*average_precision(a, pos, junk) == *average_precision(b, pos, junk));
}

TEST_CASE("AP oracle equivalence and junk invariance on random instances") {
  const CheckResult r = selftest::check_ap_oracle(200);
  INFO(r.detail);
  REQUIRE(r.pass);
}

TEST_CASE("evaluate on a hand-computed six-image instance") {
  // similarities against q: a 1.0 (easy), b 0.8 (hard), c 0.6 (junk),
  // d 0.4 (neg), e 0.2 (hard), f 0.0 (neg)
  auto unit2 = [](double x) { return std::vector<double>{x, std::sqrt(1.0 - x * x), 0.0, 0.0}; };
  DescriptorStore db = store_from({{"a", unit2(1.0)},
                                   {"b", unit2(0.8)},
                                   {"c", unit2(0.6)},
                                   {"d", unit2(0.4)},
                                   {"e", unit2(0.2)},
                                   {"f", unit2(0.0)}});
  DescriptorStore queries = store_from({{"q", unit2(1.0)}});

  RetrievalGroundTruth gt;
  gt.database = {"a", "b", "c", "d", "e", "f"};
  QueryGt q;
  q.id = "q";
  q.easy = {"a"};
  q.hard = {"b", "e"};
  q.junk = {"c"};
  gt.queries.push_back(q);

  const EvalReport rep = evaluate(gt, db, queries);
  // medium: positives {a,b,e}, junked {c}: filtered ranking a,b,d,e,f
  //   AP = (1/1 + 2/2 + 3/4) / 3 = 11/12
  REQUIRE_THAT(rep.map_medium, Catch::Matchers::WithinAbs(11.0 / 12.0, 1e-12));
  // hard: positives {b,e}, junked {a,c}: filtered b,d,e,f -> (1 + 2/3)/2 = 5/6
  REQUIRE_THAT(rep.map_hard, Catch::Matchers::WithinAbs(5.0 / 6.0, 1e-12));
  // easy: positives {a}, junked {b,c,e}: filtered a,d,f -> AP 1
  REQUIRE_THAT(rep.map_easy, Catch::Matchers::WithinAbs(1.0, 1e-12));
  // mP@10 with filtered lists shorter than 10: medium 3/5, hard 2/4, easy 1/3
  REQUIRE_THAT(rep.mp10_medium, Catch::Matchers::WithinAbs(0.6, 1e-12));
  REQUIRE_THAT(rep.mp10_hard, Catch::Matchers::WithinAbs(0.5, 1e-12));
  REQUIRE_THAT(rep.mp10_easy, Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-12));

  const nlohmann::json j = rep.to_json();
  for (const char* key : {"map_medium", "map_hard", "mp10_medium", "mp10_hard", "per_query"})
    REQUIRE(j.contains(key));
}

TEST_CASE("queries with no positives under a protocol are excluded and noted") {
  auto unit2 = [](double x) { return std::vector<double>{x, std::sqrt(1.0 - x * x)}; };
  DescriptorStore db = store_from({{"a", unit2(1.0)}, {"b", unit2(0.5)}, {"c", unit2(0.0)}});
  DescriptorStore queries = store_from({{"q1", unit2(1.0)}, {"q2", unit2(0.9)}});

  RetrievalGroundTruth gt;
  gt.database = {"a", "b", "c"};
  QueryGt q1;
  q1.id = "q1";
  q1.easy = {"a"};
  q1.hard = {"b"};
  QueryGt q2;  // only easy ids: excluded from the hard split
  q2.id = "q2";
  q2.easy = {"a", "b"};
  gt.queries = {q1, q2};

  const EvalReport rep = evaluate(gt, db, queries);
  REQUIRE(!rep.per_query[1].ap_hard.has_value());
  bool noted = false;
  for (const std::string& n : rep.notes)
    noted = noted || (n.find("q2") != std::string::npos && n.find("hard") != std::string::npos);
  REQUIRE(noted);
  // hard mean comes from q1 alone
  REQUIRE_THAT(rep.map_hard, Catch::Matchers::WithinAbs(*rep.per_query[0].ap_hard, 1e-15));

  // the aggregate equals the mean of the included per-query values
  double sum = 0.0;
  int n = 0;
  for (const auto& pq : rep.per_query)
    if (pq.ap_medium) {
      sum += *pq.ap_medium;
      ++n;
    }
  REQUIRE_THAT(rep.map_medium, Catch::Matchers::WithinAbs(sum / n, 1e-12));
}

TEST_CASE("unresolvable ids are named in the error") {
  auto unit2 = [](double x) { return std::vector<double>{x, std::sqrt(1.0 - x * x)}; };
  DescriptorStore db = store_from({{"a", unit2(1.0)}});
  DescriptorStore queries = store_from({{"q", unit2(1.0)}});

  RetrievalGroundTruth gt;
  gt.database = {"a", "missing_item"};
  QueryGt q;
  q.id = "q";
  q.easy = {"a"};
  gt.queries.push_back(q);
  try {
    evaluate(gt, db, queries);
    FAIL("expected data_error");
  } catch (const data_error& e) {
    REQUIRE(std::string(e.what()).find("missing_item") != std::string::npos);
  }

  gt.database = {"a"};
  gt.queries[0].id = "ghost_query";
  try {
    evaluate(gt, db, queries);
    FAIL("expected data_error");
  } catch (const data_error& e) {
    REQUIRE(std::string(e.what()).find("ghost_query") != std::string::npos);
  }

  DescriptorStore db4(4);
  db4.add("a", Tensor::vector({1.0, 0.0, 0.0, 0.0}));
  RetrievalGroundTruth gt2;
  gt2.database = {"a"};
  gt2.queries.push_back(QueryGt{"q", std::nullopt, {"a"}, {}, {}});
  REQUIRE_THROWS_AS(evaluate(gt2, db4, queries), shape_error);
}

TEST_CASE("removing a junk id from the database never changes AP") {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 5 + rng.index(10);
    std::vector<std::string> ranked;
    for (std::size_t i = 0; i < n; ++i) ranked.push_back("x" + std::to_string(i));
    rng.shuffle(ranked);
    std::set<std::string> pos = {ranked[rng.index(n)]};
    std::string junk_id = ranked[rng.index(n)];
    while (pos.count(junk_id)) junk_id = ranked[rng.index(n)];

    const auto with_junk = average_precision(ranked, pos, {junk_id});
    std::vector<std::string> without;
    for (const auto& id : ranked)
      if (id != junk_id) without.push_back(id);
    const auto removed = average_precision(without, pos, {});
    REQUIRE(*with_junk == *removed);
  }
}
