#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"

namespace eddpm {

enum class DataKind { Continuous, Sequence };

inline const char* to_string(DataKind k) { return k == DataKind::Sequence ? "sequence" : "continuous"; }

inline DataKind parse_data_kind(const std::string& s) {
  if (s == "continuous") return DataKind::Continuous;
  if (s == "sequence") return DataKind::Sequence;
  throw ConfigError("unknown data kind '" + s + "' (expected continuous|sequence)");
}

/// A block of n samples. Continuous samples fill `values` (n x width, row-major);
/// sequences fill `tokens` (n x width token ids). `targets` optionally carries one
/// real label per sample (fitness) for the regressor.
struct Batch {
  DataKind kind = DataKind::Continuous;
  std::size_t n = 0;
  std::size_t width = 0;
  std::vector<double> values;
  std::vector<std::int32_t> tokens;
  std::vector<double> targets;

  static Batch continuous(std::size_t n, std::size_t width, std::vector<double> values) {
    if (values.size() != n * width) throw ShapeError("Batch: value count does not match n x width");
    Batch b;
    b.kind = DataKind::Continuous;
    b.n = n;
    b.width = width;
    b.values = std::move(values);
    return b;
  }

  static Batch sequences(std::size_t n, std::size_t width, std::vector<std::int32_t> tokens) {
    if (tokens.size() != n * width) throw ShapeError("Batch: token count does not match n x width");
    Batch b;
    b.kind = DataKind::Sequence;
    b.n = n;
    b.width = width;
    b.tokens = std::move(tokens);
    return b;
  }

  std::span<const double> row(std::size_t i) const { return {values.data() + i * width, width}; }
  std::span<const std::int32_t> seq(std::size_t i) const { return {tokens.data() + i * width, width}; }

  Batch select(std::span<const std::size_t> idx) const {
    Batch out;
    out.kind = kind;
    out.n = idx.size();
    out.width = width;
    for (auto i : idx) {
      if (i >= n) throw RangeError("Batch::select: index out of range");
      if (kind == DataKind::Continuous)
        out.values.insert(out.values.end(), values.begin() + i * width, values.begin() + (i + 1) * width);
      else
        out.tokens.insert(out.tokens.end(), tokens.begin() + i * width, tokens.begin() + (i + 1) * width);
      if (!targets.empty()) out.targets.push_back(targets[i]);
    }
    return out;
  }
};

}  // namespace eddpm
