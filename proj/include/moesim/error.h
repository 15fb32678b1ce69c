/* Copyright 2026 The moesim Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef MOESIM_ERROR_H_
#define MOESIM_ERROR_H_

#include <stdexcept>
#include <string>

namespace moesim {

// Bad user input: invalid specs, malformed config, inconsistent options.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Failure while executing an otherwise valid request (I/O, malformed trace
// data, trace/model shape mismatch).
class RuntimeError : public std::runtime_error {
 public:
  explicit RuntimeError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace moesim

#endif  // MOESIM_ERROR_H_
