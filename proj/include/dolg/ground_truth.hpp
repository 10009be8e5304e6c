// Copyright (c) 2026 The dolg authors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <array>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "dolg/error.hpp"

namespace dolg {

/// Per-query relevance lists; `crop` is (x, y, w, h) applied to the query
/// image before extraction when present.
struct QueryGt {
  std::string id;
  std::optional<std::array<std::size_t, 4>> crop;
  std::vector<std::string> easy;
  std::vector<std::string> hard;
  std::vector<std::string> junk;
};

struct RetrievalGroundTruth {
  std::vector<QueryGt> queries;
  std::vector<std::string> database;

  void validate() const {
    std::set<std::string> db(database.begin(), database.end());
    if (db.size() != database.size()) throw data_error("ground truth: duplicate database ids");
    for (const QueryGt& q : queries) {
      std::set<std::string> seen;
      auto check = [&](const std::vector<std::string>& ids, const char* kind) {
        for (const std::string& id : ids) {
          if (!db.count(id))
            throw data_error("ground truth: query '" + q.id + "' references unknown " + kind +
                             " id '" + id + "'");
          if (!seen.insert(id).second)
            throw data_error("ground truth: query '" + q.id + "' lists id '" + id +
                             "' in more than one set");
        }
      };
      check(q.easy, "easy");
      check(q.hard, "hard");
      check(q.junk, "junk");
    }
  }
};

inline nlohmann::json to_json(const RetrievalGroundTruth& gt) {
  nlohmann::json j;
  j["database"] = gt.database;
  j["queries"] = nlohmann::json::array();
  for (const QueryGt& q : gt.queries) {
    nlohmann::json qj;
    qj["id"] = q.id;
    if (q.crop) qj["crop"] = {(*q.crop)[0], (*q.crop)[1], (*q.crop)[2], (*q.crop)[3]};
    qj["easy"] = q.easy;
    qj["hard"] = q.hard;
    qj["junk"] = q.junk;
    j["queries"].push_back(qj);
  }
  return j;
}

inline RetrievalGroundTruth ground_truth_from_json(const nlohmann::json& j) {
  RetrievalGroundTruth gt;
  try {
    gt.database = j.at("database").get<std::vector<std::string>>();
    for (const auto& qj : j.at("queries")) {
      QueryGt q;
      q.id = qj.at("id").get<std::string>();
      if (qj.contains("crop") && !qj["crop"].is_null()) {
        auto c = qj["crop"].get<std::vector<std::size_t>>();
        if (c.size() != 4) throw data_error("ground truth: crop must be [x,y,w,h]");
        q.crop = std::array<std::size_t, 4>{c[0], c[1], c[2], c[3]};
      }
      q.easy = qj.value("easy", std::vector<std::string>{});
      q.hard = qj.value("hard", std::vector<std::string>{});
      q.junk = qj.value("junk", std::vector<std::string>{});
      gt.queries.push_back(std::move(q));
    }
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("ground truth: malformed JSON: ") + e.what());
  }
  gt.validate();
  return gt;
}

inline RetrievalGroundTruth load_ground_truth(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open ground truth: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw data_error("ground truth " + path + ": " + e.what());
  }
  return ground_truth_from_json(j);
}

inline void save_ground_truth(const std::string& path, const RetrievalGroundTruth& gt) {
  std::ofstream out(path);
  if (!out) throw data_error("cannot write ground truth: " + path);
  out << to_json(gt).dump(2) << "\n";
}

}  // namespace dolg
