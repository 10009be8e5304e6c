// Copyright (c) 2026 The dolg authors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dolg {

/// Base class for all library errors.
struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Input data violates an operation precondition (bad sizes, non-finite values).
struct invalid_input_error : error {
  using error::error;
};

/// Tensor/parameter shapes do not line up.
struct shape_error : error {
  using error::error;
};

/// A configuration value is out of range, unknown, or inconsistent.
struct config_error : error {
  using error::error;
};

/// The global descriptor is (numerically) zero, so projection is undefined.
struct degenerate_global_error : error {
  using error::error;
};

/// An index (label, step, ...) is out of range.
struct index_error : error {
  using error::error;
};

/// A referenced identifier or record cannot be resolved.
struct data_error : error {
  using error::error;
};

/// A serialized file is malformed; `offset` is the byte position of the problem.
struct format_error : error {
  format_error(const std::string& msg, std::size_t byte_offset)
      : error(msg + " (byte offset " + std::to_string(byte_offset) + ")"),
        offset(byte_offset) {}
  std::size_t offset;
};

}  // namespace dolg
