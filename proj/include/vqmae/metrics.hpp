#pragma once

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vqmae/io.hpp"

namespace vqmae {

struct ConfusionMatrix {
  std::int64_t classes = 0;
  std::vector<std::int64_t> counts;  // [true, predicted]

  explicit ConfusionMatrix(std::int64_t c = 0)
      : classes(c), counts(static_cast<size_t>(c * c), 0) {}

  void add(std::int64_t truth, std::int64_t pred) {
    counts[static_cast<size_t>(truth * classes + pred)]++;
  }

  std::int64_t at(std::int64_t truth, std::int64_t pred) const {
    return counts[static_cast<size_t>(truth * classes + pred)];
  }

  std::int64_t total() const {
    std::int64_t t = 0;
    for (auto c : counts) t += c;
    return t;
  }

  double accuracy() const {
    const std::int64_t t = total();
    if (t == 0) return 0.0;
    std::int64_t hit = 0;
    for (std::int64_t c = 0; c < classes; ++c) hit += at(c, c);
    return static_cast<double>(hit) / static_cast<double>(t);
  }

  // macro-averaged f1; a class with no true or predicted examples scores 0
  double macro_f1() const {
    double sum = 0.0;
    for (std::int64_t c = 0; c < classes; ++c) {
      const double tp = static_cast<double>(at(c, c));
      double fp = 0.0, fn = 0.0;
      for (std::int64_t o = 0; o < classes; ++o) {
        if (o != c) {
          fp += static_cast<double>(at(o, c));
          fn += static_cast<double>(at(c, o));
        }
      }
      const double denom = 2.0 * tp + fp + fn;
      sum += denom > 0.0 ? 2.0 * tp / denom : 0.0;
    }
    return sum / static_cast<double>(classes);
  }

  void write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    for (std::int64_t i = 0; i < classes; ++i) {
      for (std::int64_t j = 0; j < classes; ++j) out << (j ? "," : "") << at(i, j);
      out << "\n";
    }
  }
};

// per-epoch metrics rows: epoch, split, loss, acc, f1 (acc/f1 empty when not
// applicable, e.g. reconstruction-only phases)
class MetricsLog {
 public:
  struct Row {
    std::int64_t epoch;
    std::string split;
    double loss;
    double acc;  // negative = not applicable
    double f1;   // negative = not applicable
  };

  void add(std::int64_t epoch, const std::string& split, double loss, double acc = -1.0,
           double f1 = -1.0) {
    rows_.push_back({epoch, split, loss, acc, f1});
  }

  const std::vector<Row>& rows() const { return rows_; }

  std::string to_csv() const {
    std::ostringstream out;
    out << std::setprecision(17);
    out << "epoch,split,loss,acc,f1\n";
    for (const auto& r : rows_) {
      out << r.epoch << "," << r.split << "," << r.loss << ",";
      if (r.acc >= 0.0) out << r.acc;
      out << ",";
      if (r.f1 >= 0.0) out << r.f1;
      out << "\n";
    }
    return out.str();
  }

  void write(const std::string& path) const { write_text_file(path, to_csv()); }

 private:
  std::vector<Row> rows_;
};

}  // namespace vqmae
