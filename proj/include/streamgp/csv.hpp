#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace streamgp {

/// Shortest decimal representation that parses back to the same double.
std::string format_double(double value);

struct NumericTable {
  std::vector<std::string> header;
  Eigen::MatrixXd values;
};

/// Reads a comma-separated file with one header row followed by numeric
/// rows. Every data row must have as many fields as the header; violations
/// raise ParseError naming the 1-based line number.
NumericTable read_numeric_csv(const std::filesystem::path& path);

void write_numeric_csv(const std::filesystem::path& path,
                       const std::vector<std::string>& header,
                       const Eigen::MatrixXd& values);

}  // namespace streamgp
