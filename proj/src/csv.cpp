#include "nima/csv.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "nima/error.hpp"

namespace nima {

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) {
      cell.pop_back();
    }
    std::size_t start = cell.find_first_not_of(' ');
    out.push_back(start == std::string::npos ? std::string() : cell.substr(start));
  }
  if (!line.empty() && line.back() == ',') {
    out.emplace_back();
  }
  return out;
}

double parse_number(const std::string& cell, const std::filesystem::path& path, std::size_t line_no) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) {
    if (cell == "nan" || cell == "inf" || cell == "-inf") {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": non-finite value '" + cell + "'");
    }
    throw DataError(path.string() + ":" + std::to_string(line_no) + ": cannot parse '" + cell + "'");
  }
  return v;
}

}  // namespace

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) {
      return i;
    }
  }
  throw DataError("missing CSV column '" + name + "'");
}

CsvTable read_csv(const std::filesystem::path& path, const std::vector<std::string>& expected_header) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) {
    throw DataError(path.string() + ": empty file");
  }
  table.header = split(line);
  if (!expected_header.empty() && table.header != expected_header) {
    std::string want;
    for (const auto& h : expected_header) {
      want += (want.empty() ? "" : ",") + h;
    }
    throw DataError(path.string() + ": unexpected header, want '" + want + "'");
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") {
      continue;
    }
    auto cells = split(line);
    if (cells.size() != table.header.size()) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                      std::to_string(table.header.size()) + " columns, got " + std::to_string(cells.size()));
    }
    std::vector<double> row;
    row.reserve(cells.size());
    for (const auto& c : cells) {
      row.push_back(parse_number(c, path, line_no));
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::string format_number(double value) {
  if (value == 0.0) {
    return "0";  // folds -0
  }
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) {
    throw DataError("cannot format number");
  }
  return std::string(buf, ptr);
}

std::vector<std::string> expand_header(const std::string& prefix, std::initializer_list<const char*> suffixes) {
  std::vector<std::string> out;
  for (const char* s : suffixes) {
    out.push_back(prefix + s);
  }
  return out;
}

CsvWriter::CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header)
    : out_(path), width_(header.size()), path_(path) {
  if (!out_) {
    throw IoError("cannot write " + path.string());
  }
  for (std::size_t i = 0; i < header.size(); ++i) {
    out_ << (i ? "," : "") << header[i];
  }
  out_ << '\n';
}

void CsvWriter::row(std::span<const double> values) {
  if (values.size() != width_) {
    throw DataError(path_.string() + ": row width " + std::to_string(values.size()) + " != header width " +
                    std::to_string(width_));
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) {
      out_ << ',';
    }
    out_ << format_number(values[i]);
  }
  out_ << '\n';
}

void CsvWriter::close() {
  out_.close();
  if (out_.fail()) {
    throw IoError("failed writing " + path_.string());
  }
}

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows) {
  CsvWriter w(path, header);
  for (const auto& r : rows) {
    w.row(r);
  }
  w.close();
}

}  // namespace nima
