/*
 * facelab - analysis-by-neural-synthesis 3D face reconstruction.
 *
 * File: include/facelab/core/errors.hpp
 *
 * Copyright 2026 The facelab contributors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <stdexcept>
#include <string>

namespace facelab {

/// Bad user-supplied configuration (CLI exit code 2).
class ConfigError : public std::runtime_error
{
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Caller violated a documented precondition.
class ContractViolation : public std::logic_error
{
public:
    explicit ContractViolation(const std::string& what) : std::logic_error(what) {}
};

/// Filesystem / encoding failure (CLI exit code 3).
class IoError : public std::runtime_error
{
public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

/// An optimization loop stopped making progress.
class DivergenceError : public std::runtime_error
{
public:
    explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

/// Non-finite loss encountered during training (CLI exit code 3).
class TrainingAbort : public std::runtime_error
{
public:
    explicit TrainingAbort(const std::string& what) : std::runtime_error(what) {}
};

} // namespace facelab
