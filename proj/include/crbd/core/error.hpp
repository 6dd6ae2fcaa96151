// Copyright 2026 The crbd Authors.
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

namespace crbd {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller-supplied argument is out of its documented domain.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// An experiment, model or selector configuration is inconsistent.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Encoding or decoding through an image codec failed.
class CodecError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values showed up during optimization.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A poisoning request asks for more source images than exist.
class CapacityError : public Error {
 public:
  using Error::Error;
};

/// An internal contract between modules was violated (missing keys etc).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A trigger asset does not fit inside the image at the requested position.
class PlacementError : public Error {
 public:
  using Error::Error;
};

/// Dataset files are not present and could not be fetched.
class DatasetUnavailable : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace crbd
