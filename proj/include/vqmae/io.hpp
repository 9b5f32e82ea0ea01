#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace vqmae {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void write_matrix_csv(const std::string& path, const double* data, std::int64_t rows,
                             std::int64_t cols) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << std::setprecision(17);
  for (std::int64_t i = 0; i < rows; ++i) {
    for (std::int64_t j = 0; j < cols; ++j) out << (j ? "," : "") << data[i * cols + j];
    out << "\n";
  }
}

// 8-bit binary PGM, log-compressed to the data range; row-major
inline void write_pgm_log(const std::string& path, const double* data, std::int64_t rows,
                          std::int64_t cols) {
  std::vector<double> lg(static_cast<size_t>(rows * cols));
  for (size_t i = 0; i < lg.size(); ++i) lg[i] = std::log1p(std::max(data[i], 0.0));
  double lo = lg.empty() ? 0.0 : *std::min_element(lg.begin(), lg.end());
  double hi = lg.empty() ? 0.0 : *std::max_element(lg.begin(), lg.end());
  const double span = hi > lo ? hi - lo : 1.0;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "P5\n" << cols << " " << rows << "\n255\n";
  for (double v : lg) {
    int byte = static_cast<int>(std::lround(255.0 * (v - lo) / span));
    unsigned char b = static_cast<unsigned char>(std::clamp(byte, 0, 255));
    out.write(reinterpret_cast<const char*>(&b), 1);
  }
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << text;
}

// minimal CSV splitter (no quoting; fields in this project never contain commas)
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace vqmae
