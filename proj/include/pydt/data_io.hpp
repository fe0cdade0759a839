#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pydt/errors.hpp"

namespace pydt {

enum class Likelihood { Gaussian, Probit };

Likelihood parse_likelihood(const std::string& name);
std::string to_string(Likelihood likelihood);

/// Observations, one row per data point. Missing cells are NaN.
struct Dataset {
  Eigen::MatrixXd values;
  Likelihood likelihood = Likelihood::Gaussian;
  std::vector<std::string> header;

  int rows() const { return static_cast<int>(values.rows()); }
  int dim() const { return static_cast<int>(values.cols()); }
};

/// Comma-separated values with an optional header row (detected when any
/// cell of the first row is non-numeric). Empty cells are missing values.
/// Throws DataError on ragged rows, non-numeric cells, or non-binary cells
/// for probit data.
Dataset parse_csv(std::istream& in, Likelihood likelihood = Likelihood::Gaussian);
Dataset read_csv(const std::filesystem::path& path, Likelihood likelihood = Likelihood::Gaussian);

void write_csv(std::ostream& out, const Eigen::MatrixXd& values, const std::vector<std::string>& header = {});
void write_csv(const std::filesystem::path& path, const Eigen::MatrixXd& values,
               const std::vector<std::string>& header = {});

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

}  // namespace pydt
