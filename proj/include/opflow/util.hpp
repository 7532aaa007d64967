// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace opflow {

// Input that fails a schema or structural check. Maps to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// NaN/Inf in training or numerics. Maps to exit code 3.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

uint64_t fnv1a64(std::string_view s, uint64_t h = 0xcbf29ce484222325ULL);
uint64_t splitmix64(uint64_t& state);
uint64_t mix64(uint64_t a, uint64_t b);

// Seeded generator with portable distributions; std::uniform_real_distribution
// output is implementation defined so we derive doubles ourselves.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}
  uint64_t next() { return eng_(); }
  double uniform();                        // [0, 1)
  double uniform(double lo, double hi);
  double uniform_open();                   // (0, 1)
  double gumbel();
  uint64_t below(uint64_t n);
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::mt19937_64 eng_;
};

std::string to_lower(std::string_view s);
std::vector<std::string> split_ws(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
std::string join(const std::vector<std::string>& v, std::string_view sep);
std::string trim(std::string_view s);
// shortest round-trip representation
std::string fmt_double(double x);
std::string hex64(uint64_t x);

// little-endian binary helpers
void put_u32(std::ostream& os, uint32_t v);
void put_u64(std::ostream& os, uint64_t v);
void put_f32(std::ostream& os, float v);
void put_f64(std::ostream& os, double v);
uint32_t get_u32(std::istream& is);
uint64_t get_u64(std::istream& is);
float get_f32(std::istream& is);
double get_f64(std::istream& is);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& data);

}  // namespace opflow
