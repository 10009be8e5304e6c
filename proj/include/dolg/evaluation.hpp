// Copyright (c) 2026 The dolg authors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "dolg/extraction.hpp"
#include "dolg/ground_truth.hpp"
#include "dolg/tensor.hpp"

namespace dolg {

/// Ranks every store id by descending dot product against a unit query.
/// Exact similarity ties are broken by ascending id so results are
/// reproducible across platforms.
inline std::vector<std::string> rank(const Tensor& query, const DescriptorStore& store) {
  if (query.numel() != store.dim())
    throw shape_error("rank: query dim " + std::to_string(query.numel()) + " vs store dim " +
                      std::to_string(store.dim()));
  if (store.count() == 0) throw invalid_input_error("rank: store is empty");
  struct Entry {
    double sim;
    const std::string* id;
  };
  std::vector<Entry> entries;
  entries.reserve(store.count());
  for (std::size_t i = 0; i < store.count(); ++i) {
    double s = 0.0;
    const float* row = store.row(i);
    for (std::size_t k = 0; k < store.dim(); ++k) s += query[k] * static_cast<double>(row[k]);
    entries.push_back({s, &store.ids()[i]});
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.sim != b.sim) return a.sim > b.sim;
    return *a.id < *b.id;
  });
  std::vector<std::string> out;
  out.reserve(entries.size());
  for (const Entry& e : entries) out.push_back(*e.id);
  return out;
}

/// Average precision on a junk-filtered ranking. Junk ids are removed before
/// rank positions are assigned (they count as neither hits nor misses);
/// AP = (sum over retrieved positives of precision at their filtered rank)
/// divided by the total number of positives. Returns nullopt when the
/// positive set is empty (query excluded).
inline std::optional<double> average_precision(const std::vector<std::string>& ranked,
                                               const std::set<std::string>& positives,
                                               const std::set<std::string>& junk) {
  if (positives.empty()) return std::nullopt;
  std::size_t filtered_rank = 0, hits = 0;
  double sum = 0.0;
  for (const std::string& id : ranked) {
    if (junk.count(id)) continue;
    ++filtered_rank;
    if (positives.count(id)) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(filtered_rank);
    }
  }
  return sum / static_cast<double>(positives.size());
}

/// Precision among the first min(10, filtered length) junk-filtered results.
inline std::optional<double> precision_at_10(const std::vector<std::string>& ranked,
                                             const std::set<std::string>& positives,
                                             const std::set<std::string>& junk) {
  if (positives.empty()) return std::nullopt;
  std::size_t filtered = 0, hits = 0;
  for (const std::string& id : ranked) {
    if (junk.count(id)) continue;
    ++filtered;
    if (filtered > 10) {
      filtered = 10;
      break;
    }
    if (positives.count(id)) ++hits;
  }
  if (filtered == 0) return std::nullopt;
  return static_cast<double>(hits) / static_cast<double>(std::min<std::size_t>(filtered, 10));
}

struct PerQueryResult {
  std::string id;
  std::optional<double> ap_easy, ap_medium, ap_hard;
  std::optional<double> p10_easy, p10_medium, p10_hard;
};

struct EvalReport {
  double map_easy = 0.0, map_medium = 0.0, map_hard = 0.0;
  double mp10_easy = 0.0, mp10_medium = 0.0, mp10_hard = 0.0;
  std::vector<PerQueryResult> per_query;
  std::vector<std::string> notes;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["map_easy"] = map_easy;
    j["map_medium"] = map_medium;
    j["map_hard"] = map_hard;
    j["mp10_easy"] = mp10_easy;
    j["mp10_medium"] = mp10_medium;
    j["mp10_hard"] = mp10_hard;
    j["per_query"] = nlohmann::json::array();
    auto opt = [](const std::optional<double>& v) {
      return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
    };
    for (const PerQueryResult& q : per_query) {
      j["per_query"].push_back({{"id", q.id},
                                {"ap_easy", opt(q.ap_easy)},
                                {"ap_medium", opt(q.ap_medium)},
                                {"ap_hard", opt(q.ap_hard)},
                                {"p10_easy", opt(q.p10_easy)},
                                {"p10_medium", opt(q.p10_medium)},
                                {"p10_hard", opt(q.p10_hard)}});
    }
    j["notes"] = notes;
    return j;
  }
};

/// Runs the three revisited-benchmark style protocols:
///   Easy:   positives = easy,        junked = hard + junk
///   Medium: positives = easy + hard, junked = junk
///   Hard:   positives = hard,        junked = easy + junk
/// Queries whose positive set is empty under a protocol are excluded from that
/// protocol's means and recorded in the notes.
inline EvalReport evaluate(const RetrievalGroundTruth& gt, const DescriptorStore& db,
                           const DescriptorStore& queries) {
  gt.validate();
  if (queries.dim() != db.dim())
    throw shape_error("evaluate: query store dim " + std::to_string(queries.dim()) +
                      " vs database store dim " + std::to_string(db.dim()));
  for (const std::string& id : gt.database)
    if (db.find(id) < 0) throw data_error("evaluate: database id '" + id + "' missing from store");

  EvalReport report;
  struct Acc {
    double ap_sum = 0.0, p10_sum = 0.0;
    std::size_t n = 0;
  };
  Acc acc_easy, acc_medium, acc_hard;

  for (const QueryGt& q : gt.queries) {
    const long qi = queries.find(q.id);
    if (qi < 0) throw data_error("evaluate: query id '" + q.id + "' missing from query store");
    const std::vector<std::string> ranked = rank(queries.vector_at(static_cast<std::size_t>(qi)), db);

    const std::set<std::string> easy(q.easy.begin(), q.easy.end());
    const std::set<std::string> hard(q.hard.begin(), q.hard.end());
    const std::set<std::string> junk(q.junk.begin(), q.junk.end());

    std::set<std::string> medium_pos = easy;
    medium_pos.insert(hard.begin(), hard.end());
    std::set<std::string> easy_junk = hard;
    easy_junk.insert(junk.begin(), junk.end());
    std::set<std::string> hard_junk = easy;
    hard_junk.insert(junk.begin(), junk.end());

    PerQueryResult r;
    r.id = q.id;
    r.ap_easy = average_precision(ranked, easy, easy_junk);
    r.ap_medium = average_precision(ranked, medium_pos, junk);
    r.ap_hard = average_precision(ranked, hard, hard_junk);
    r.p10_easy = precision_at_10(ranked, easy, easy_junk);
    r.p10_medium = precision_at_10(ranked, medium_pos, junk);
    r.p10_hard = precision_at_10(ranked, hard, hard_junk);

    auto fold = [&](const char* split, const std::optional<double>& ap,
                    const std::optional<double>& p10, Acc& acc) {
      if (ap) {
        acc.ap_sum += *ap;
        acc.p10_sum += p10.value_or(0.0);
        ++acc.n;
      } else {
        report.notes.push_back("query '" + q.id + "' excluded from " + split +
                               " split (no positives)");
      }
    };
    fold("easy", r.ap_easy, r.p10_easy, acc_easy);
    fold("medium", r.ap_medium, r.p10_medium, acc_medium);
    fold("hard", r.ap_hard, r.p10_hard, acc_hard);
    report.per_query.push_back(std::move(r));
  }

  auto mean = [](double sum, std::size_t n) { return n ? sum / static_cast<double>(n) : 0.0; };
  report.map_easy = mean(acc_easy.ap_sum, acc_easy.n);
  report.map_medium = mean(acc_medium.ap_sum, acc_medium.n);
  report.map_hard = mean(acc_hard.ap_sum, acc_hard.n);
  report.mp10_easy = mean(acc_easy.p10_sum, acc_easy.n);
  report.mp10_medium = mean(acc_medium.p10_sum, acc_medium.n);
  report.mp10_hard = mean(acc_hard.p10_sum, acc_hard.n);
  return report;
}

}  // namespace dolg
