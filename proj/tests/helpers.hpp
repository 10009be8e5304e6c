// Copyright (c) 2026 The dolg authors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <string>

#include "dolg/gradcheck.hpp"
#include "dolg/tensor.hpp"

namespace testutil {

/// Fresh per-test scratch directory under the system temp dir.
inline std::string scratch_dir(const std::string& tag) {
  const auto dir = std::filesystem::temp_directory_path() / ("dolg-tests-" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

inline double rel_diff(double a, double b, double floor = 1e-12) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace testutil
