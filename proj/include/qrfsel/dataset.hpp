#pragma once

#include <cstddef>
#include <filesystem>
#include <initializer_list>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace qrfsel {

// Ingestion errors. Each failure class has its own type so callers (and the
// CLI exit codes) can tell them apart.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class MissingFileError : public DataError {
 public:
  using DataError::DataError;
};
class MissingColumnError : public DataError {
 public:
  using DataError::DataError;
};
class DuplicateColumnError : public DataError {
 public:
  using DataError::DataError;
};
class MissingValueError : public DataError {
 public:
  using DataError::DataError;
};
class NonNumericCellError : public DataError {
 public:
  using DataError::DataError;
};

/// Insertion-ordered set of covariate indices.
class IndexSet {
 public:
  IndexSet() = default;
  IndexSet(std::initializer_list<std::size_t> items);
  explicit IndexSet(std::vector<std::size_t> items);

  /// Appends `index`; throws std::invalid_argument on a duplicate.
  void insert(std::size_t index);
  bool contains(std::size_t index) const;
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  std::size_t operator[](std::size_t pos) const { return items_[pos]; }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }
  const std::vector<std::size_t>& items() const { return items_; }

  /// Copy with `index` appended.
  IndexSet with(std::size_t index) const;
  /// Elements in increasing order.
  std::vector<std::size_t> sorted() const;
  /// Throws std::out_of_range unless every element is < d.
  void validate(std::size_t d) const;

  /// Same elements regardless of order.
  bool same_elements(const IndexSet& other) const;
  friend bool operator==(const IndexSet&, const IndexSet&) = default;

 private:
  std::vector<std::size_t> items_;
};

/// {0, ..., d-1} minus J, increasing.
IndexSet complement(const IndexSet& set, std::size_t d);

/// Response vector plus an n x d covariate matrix stored column-major.
/// Immutable once built.
class Dataset {
 public:
  Dataset(std::vector<double> y, std::vector<std::vector<double>> columns, std::vector<std::string> names,
          std::string response_name = "y");

  std::size_t n() const { return y_.size(); }
  std::size_t d() const { return names_.size(); }

  double y(std::size_t i) const { return y_[i]; }
  double x(std::size_t i, std::size_t j) const { return x_[j * y_.size() + i]; }

  std::span<const double> response() const { return y_; }
  std::span<const double> column(std::size_t j) const { return {x_.data() + j * y_.size(), y_.size()}; }
  std::vector<double> row(std::size_t i) const;

  const std::vector<std::string>& names() const { return names_; }
  const std::string& response_name() const { return response_name_; }
  std::vector<std::string> names_of(const IndexSet& set) const;
  /// Column index by name; throws MissingColumnError.
  std::size_t index_of(const std::string& name) const;

  bool operator==(const Dataset& other) const = default;

 private:
  std::vector<double> y_;
  std::vector<double> x_;
  std::vector<std::string> names_;
  std::string response_name_;
};

/// Reads a comma-separated file with a header row. The response column is
/// extracted; every other column becomes a covariate, in file order.
Dataset load_csv(const std::filesystem::path& path, const std::string& response);

/// Writes the response first, then covariates. Values use the shortest
/// decimal form that reads back to the same double.
void write_csv(const Dataset& data, const std::filesystem::path& path);
void write_csv(const Dataset& data, std::ostream& out);

/// Shortest round-trip decimal form of a double.
std::string format_double(double value);

}  // namespace qrfsel
