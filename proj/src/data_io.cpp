#include "pydt/data_io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace pydt {

namespace {

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_number(const std::string& cell, double& out) {
  const std::string t = trim(cell);
  if (t.empty()) {
    out = std::numeric_limits<double>::quiet_NaN();
    return true;
  }
  const char* first = t.data();
  const char* last = t.data() + t.size();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last && std::isfinite(out);
}

}  // namespace

Likelihood parse_likelihood(const std::string& name) {
  if (name == "gaussian") return Likelihood::Gaussian;
  if (name == "probit") return Likelihood::Probit;
  throw std::invalid_argument("unknown likelihood '" + name + "' (expected gaussian or probit)");
}

std::string to_string(Likelihood likelihood) { return likelihood == Likelihood::Probit ? "probit" : "gaussian"; }

Dataset parse_csv(std::istream& in, Likelihood likelihood) {
  Dataset data;
  data.likelihood = likelihood;
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t width = 0;
  int line_no = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (first && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    if (trim(line).empty()) continue;
    const std::vector<std::string> cells = split_row(line);
    std::vector<double> values(cells.size());
    bool numeric = true;
    for (std::size_t i = 0; i < cells.size(); ++i) numeric &= parse_number(cells[i], values[i]);
    if (first) {
      first = false;
      width = cells.size();
      if (!numeric) {
        for (const auto& c : cells) data.header.push_back(trim(c));
        continue;
      }
    }
    if (cells.size() != width)
      throw DataError("line " + std::to_string(line_no) + ": expected " + std::to_string(width) + " columns, found " +
                      std::to_string(cells.size()));
    if (!numeric) throw DataError("line " + std::to_string(line_no) + ": non-numeric cell");
    if (likelihood == Likelihood::Probit) {
      for (double v : values)
        if (!(std::isnan(v) || v == 0.0 || v == 1.0))
          throw DataError("line " + std::to_string(line_no) + ": probit data must be 0 or 1");
    }
    rows.push_back(std::move(values));
  }
  if (rows.empty()) throw DataError("no data rows");
  data.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t d = 0; d < width; ++d)
      data.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = rows[i][d];
  return data;
}

Dataset read_csv(const std::filesystem::path& path, Likelihood likelihood) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return parse_csv(in, likelihood);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::string format_double(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

void write_csv(std::ostream& out, const Eigen::MatrixXd& values, const std::vector<std::string>& header) {
  if (!header.empty()) {
    for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
    out << '\n';
  }
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    for (Eigen::Index d = 0; d < values.cols(); ++d) out << (d ? "," : "") << format_double(values(i, d));
    out << '\n';
  }
}

void write_csv(const std::filesystem::path& path, const Eigen::MatrixXd& values, const std::vector<std::string>& header) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  write_csv(out, values, header);
}

}  // namespace pydt
