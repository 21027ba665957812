#pragma once

#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace clv {

// ---------------------------------------------------------------------------
// Errors

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parameter or argument outside the domain of a function.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Input that cannot support the requested computation (too few customers,
/// degenerate spends, invalid split windows, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

/// An iterative numerical kernel failed to reach its tolerance.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

/// Tensor or feature width mismatch.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Training diverged or produced non-finite values.
class TrainingError : public Error {
 public:
  using Error::Error;
};

enum class ParseErrorKind { kUnreadableFile, kMissingColumn, kMalformedDate, kMalformedNumber, kMalformedRow };

class ParseError : public Error {
 public:
  ParseError(ParseErrorKind kind, std::size_t row, const std::string& message);
  ParseErrorKind kind() const { return kind_; }
  /// 1-based line number in the file (header is line 1); 0 when not row-specific.
  std::size_t row() const { return row_; }

 private:
  ParseErrorKind kind_;
  std::size_t row_;
};

// ---------------------------------------------------------------------------
// Calendar dates at day resolution

struct Date {
  int days = 0;  // days since 1970-01-01

  friend auto operator<=>(const Date&, const Date&) = default;
  Date operator+(int d) const { return Date{days + d}; }
  Date operator-(int d) const { return Date{days - d}; }
  friend int operator-(const Date& a, const Date& b) { return a.days - b.days; }
};

/// Parses strict ISO `YYYY-MM-DD`; nullopt for anything else, including
/// impossible calendar dates.
std::optional<Date> parse_date(std::string_view text);
std::string format_date(Date date);

// ---------------------------------------------------------------------------
// Numbers

/// Shortest round-trip decimal representation.
std::string format_double(double value);
std::optional<double> parse_double(std::string_view text);

// ---------------------------------------------------------------------------
// Deterministic randomness

using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x);
/// FNV-1a; stable across platforms, used to key substreams by customer id.
std::uint64_t stable_hash(std::string_view text);
/// Independent generator for (seed, key); identical regardless of the order
/// in which substreams are created.
Rng substream(std::uint64_t seed, std::uint64_t key);

// ---------------------------------------------------------------------------
// Deterministic parallelism

void set_thread_count(int threads);
int thread_count();

/// Runs fn(i) for i in [0, n) over statically partitioned blocks. The first
/// exception thrown by any worker is rethrown on the caller's thread.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

/// Pairwise (tree) summation with a fixed reduction order.
double pairwise_sum(std::span<const double> values);

}  // namespace clv
