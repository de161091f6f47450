#pragma once

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace nima {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  /// Column index by name; throws DataError when absent.
  std::size_t column(const std::string& name) const;
};

/// Reads a numeric CSV. When expected_header is non-empty the file header must
/// match it exactly. Throws IoError / DataError.
CsvTable read_csv(const std::filesystem::path& path,
                  const std::vector<std::string>& expected_header = {});

/// Shortest round-trip representation; locale independent.
std::string format_number(double value);

std::vector<std::string> expand_header(const std::string& prefix, std::initializer_list<const char*> suffixes);

/// Streaming writer; the header is written on construction.
class CsvWriter {
public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header);

  void row(std::span<const double> values);
  void row(std::initializer_list<double> values) { row(std::span<const double>(values.begin(), values.size())); }
  void close();

private:
  std::ofstream out_;
  std::size_t width_;
  std::filesystem::path path_;
};

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);

}  // namespace nima
