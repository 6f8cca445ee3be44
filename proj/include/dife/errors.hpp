// Copyright 2026 The DIFE Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace dife {

/// Error categories. The numeric values double as CLI exit codes where the
/// category maps onto one (config/data -> 2, numerical -> 3).
enum class ErrorKind {
  kDimension = 10,
  kContract = 11,
  kConfig = 2,
  kData = 12,
  kFormat = 13,
  kNumeric = 3,
  kOracle = 14,
  kDegenerate = 15,
  kIo = 16,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what)
      : Error(ErrorKind::kDimension, "dimension error: " + what) {}
};

class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what)
      : Error(ErrorKind::kContract, "contract error: " + what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what)
      : Error(ErrorKind::kConfig, "config error: " + what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what)
      : Error(ErrorKind::kData, "data error: " + what) {}
};

class FormatError : public Error {
 public:
  FormatError(const std::string& what, long long byte_offset)
      : Error(ErrorKind::kFormat, "format error at byte " +
                                      std::to_string(byte_offset) + ": " +
                                      what),
        offset_(byte_offset) {}
  long long offset() const noexcept { return offset_; }

 private:
  long long offset_;
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what)
      : Error(ErrorKind::kNumeric, "numerical failure: " + what) {}
};

class OracleError : public Error {
 public:
  explicit OracleError(const std::string& what)
      : Error(ErrorKind::kOracle, "oracle error: " + what) {}
};

/// Raised when an input admits no meaningful answer (e.g. k-means with fewer
/// distinct values than clusters). Callers usually recover from it.
class DegenerateInputError : public Error {
 public:
  explicit DegenerateInputError(const std::string& what)
      : Error(ErrorKind::kDegenerate, "degenerate input: " + what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what)
      : Error(ErrorKind::kIo, "i/o error: " + what) {}
};

}  // namespace dife
