// Copyright 2026 The rmppi Authors
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

#include <Eigen/Dense>

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace rmppi {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using State = Vector;
using Control = Vector;
// Columns are time steps: column t holds u_t.
using ControlSequence = Matrix;

using VectorRef = Eigen::Ref<Vector>;
using ConstVectorRef = Eigen::Ref<const Vector>;

// Violated preconditions: bad dimensions, invalid parameters.
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Every sample in a batch crashed or the softmax weights vanished.
class DegenerateSampling : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractViolation(message);
}

inline void require_dims(const ConstVectorRef& v, Eigen::Index n,
                         const char* what) {
  if (v.size() != n) {
    throw ContractViolation(std::string(what) + ": expected dimension " +
                            std::to_string(n) + ", got " +
                            std::to_string(v.size()));
  }
}

// SplitMix64 finalizer.
inline std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Independent stream seeds derived from (seed, tag, index). Every consumer of
// randomness gets its own stream so results do not depend on evaluation
// order or worker count.
enum class StreamTag : std::uint64_t {
  kRollout = 1,
  kNominalSearch = 2,
  kEstimatorSpread = 3,
  kPlantNoise = 4,
  kPlantDisturbance = 5,
  kDomain = 6,
  kInitialState = 7,
};

inline std::uint64_t stream_seed(std::uint64_t seed, StreamTag tag,
                                 std::uint64_t index) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ static_cast<std::uint64_t>(tag));
  return splitmix64(h ^ splitmix64(index));
}

using Engine = std::mt19937_64;

// Runs fn(i) for i in [0, n) on up to `workers` threads using a static
// contiguous partition. fn must only write to storage owned by index i.
template <class Fn>
void parallel_for(std::size_t n, unsigned workers, Fn&& fn) {
  if (n == 0) return;
  const std::size_t threads =
      std::max<std::size_t>(1, std::min<std::size_t>(workers, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  pool.reserve(threads);
  const std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t w = 0; w < threads; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    pool.emplace_back([&, w, begin, end] {
      try {
        for (std::size_t i = begin; i < end; ++i) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// Left shift by one step with a zero tail.
inline ControlSequence shift_left(const ControlSequence& u) {
  ControlSequence out = ControlSequence::Zero(u.rows(), u.cols());
  if (u.cols() > 1) out.leftCols(u.cols() - 1) = u.rightCols(u.cols() - 1);
  return out;
}

inline bool all_finite(const ConstVectorRef& v) { return v.allFinite(); }

// sqrt(v' W v); an empty W means the Euclidean norm.
inline double weighted_norm(const ConstVectorRef& v, const Matrix& weight) {
  if (weight.size() == 0) return v.norm();
  return std::sqrt(std::max(0.0, v.dot(weight * v)));
}

}  // namespace rmppi
