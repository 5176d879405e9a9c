#include "qrfsel/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

namespace qrfsel {

IndexSet::IndexSet(std::initializer_list<std::size_t> items) {
  for (auto i : items) insert(i);
}

IndexSet::IndexSet(std::vector<std::size_t> items) {
  for (auto i : items) insert(i);
}

void IndexSet::insert(std::size_t index) {
  if (contains(index)) throw std::invalid_argument("duplicate index " + std::to_string(index) + " in index set");
  items_.push_back(index);
}

bool IndexSet::contains(std::size_t index) const {
  return std::find(items_.begin(), items_.end(), index) != items_.end();
}

IndexSet IndexSet::with(std::size_t index) const {
  IndexSet out = *this;
  out.insert(index);
  return out;
}

std::vector<std::size_t> IndexSet::sorted() const {
  auto out = items_;
  std::sort(out.begin(), out.end());
  return out;
}

void IndexSet::validate(std::size_t d) const {
  for (auto i : items_)
    if (i >= d)
      throw std::out_of_range("index " + std::to_string(i) + " out of range for dimension " + std::to_string(d));
}

bool IndexSet::same_elements(const IndexSet& other) const { return sorted() == other.sorted(); }

IndexSet complement(const IndexSet& set, std::size_t d) {
  std::vector<char> taken(d, 0);
  for (auto i : set)
    if (i < d) taken[i] = 1;
  IndexSet out;
  for (std::size_t i = 0; i < d; ++i)
    if (!taken[i]) out.insert(i);
  return out;
}

Dataset::Dataset(std::vector<double> y, std::vector<std::vector<double>> columns, std::vector<std::string> names,
                 std::string response_name)
    : y_(std::move(y)), names_(std::move(names)), response_name_(std::move(response_name)) {
  if (y_.empty()) throw DataError("dataset needs at least one observation");
  if (columns.empty()) throw DataError("dataset needs at least one covariate");
  if (columns.size() != names_.size()) throw DataError("covariate count does not match name count");
  std::unordered_set<std::string> seen;
  for (const auto& name : names_)
    if (!seen.insert(name).second) throw DuplicateColumnError("duplicate column name '" + name + "'");
  x_.reserve(columns.size() * y_.size());
  for (std::size_t j = 0; j < columns.size(); ++j) {
    if (columns[j].size() != y_.size())
      throw DataError("column '" + names_[j] + "' has " + std::to_string(columns[j].size()) + " rows, expected " +
                      std::to_string(y_.size()));
    x_.insert(x_.end(), columns[j].begin(), columns[j].end());
  }
  auto finite = [](double v) { return std::isfinite(v); };
  if (!std::all_of(y_.begin(), y_.end(), finite) || !std::all_of(x_.begin(), x_.end(), finite))
    throw NonNumericCellError("dataset contains a non-finite value");
}

std::vector<double> Dataset::row(std::size_t i) const {
  std::vector<double> out(d());
  for (std::size_t j = 0; j < d(); ++j) out[j] = x(i, j);
  return out;
}

std::vector<std::string> Dataset::names_of(const IndexSet& set) const {
  std::vector<std::string> out;
  out.reserve(set.size());
  for (auto i : set) out.push_back(names_.at(i));
  return out;
}

std::size_t Dataset::index_of(const std::string& name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw MissingColumnError("covariate '" + name + "' not found");
  return static_cast<std::size_t>(it - names_.begin());
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path, const std::string& response) {
  std::ifstream in(path);
  if (!in) throw MissingFileError("cannot open file '" + path.string() + "'");

  std::string line;
  if (!std::getline(in, line)) throw DataError("file '" + path.string() + "' has no header row");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = split_line(line);
  for (auto& h : header) h = trim(h);

  std::unordered_set<std::string> seen;
  for (const auto& h : header)
    if (!seen.insert(h).second) throw DuplicateColumnError("duplicate column name '" + h + "'");

  auto it = std::find(header.begin(), header.end(), response);
  if (it == header.end()) throw MissingColumnError("response column not found: '" + response + "'");
  const auto response_col = static_cast<std::size_t>(it - header.begin());

  std::vector<double> y;
  std::vector<std::vector<double>> columns(header.size() - 1);
  std::vector<std::string> names;
  for (std::size_t c = 0; c < header.size(); ++c)
    if (c != response_col) names.push_back(header[c]);

  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    ++row;
    auto cells = split_line(line);
    if (cells.size() != header.size())
      throw DataError("row " + std::to_string(row) + " has " + std::to_string(cells.size()) + " cells, expected " +
                      std::to_string(header.size()));
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const auto cell = trim(cells[c]);
      if (cell.empty())
        throw MissingValueError("missing value at row " + std::to_string(row) + ", column " + header[c]);
      double value = 0.0;
      const char* first = cell.data();
      const char* last = cell.data() + cell.size();
      if (*first == '+') ++first;
      auto [ptr, ec] = std::from_chars(first, last, value);
      if (ec != std::errc() || ptr != last || !std::isfinite(value))
        throw NonNumericCellError("non-numeric value '" + cell + "' at row " + std::to_string(row) + ", column " +
                                  header[c]);
      if (c == response_col)
        y.push_back(value);
      else
        columns[c < response_col ? c : c - 1].push_back(value);
    }
  }
  if (y.empty()) throw DataError("file '" + path.string() + "' has no data rows");
  if (names.empty()) throw DataError("file '" + path.string() + "' has no covariate columns");
  return Dataset(std::move(y), std::move(columns), std::move(names), response);
}

std::string format_double(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

void write_csv(const Dataset& data, std::ostream& out) {
  out << data.response_name();
  for (const auto& name : data.names()) out << ',' << name;
  out << '\n';
  for (std::size_t i = 0; i < data.n(); ++i) {
    out << format_double(data.y(i));
    for (std::size_t j = 0; j < data.d(); ++j) out << ',' << format_double(data.x(i, j));
    out << '\n';
  }
}

void write_csv(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw MissingFileError("cannot write file '" + path.string() + "'");
  write_csv(data, out);
}

}  // namespace qrfsel
