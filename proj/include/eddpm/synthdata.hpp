#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "batch.hpp"
#include "error.hpp"
#include "fitness_table.hpp"
#include "rng.hpp"

namespace eddpm {

inline constexpr std::string_view kAlphabet = "ACDEFGHIKLMNPQRSTVWY";

enum class Split : std::uint8_t { Train, Valid, Test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Valid: return "valid";
    case Split::Test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "valid") return Split::Valid;
  if (s == "test") return Split::Test;
  throw FormatError("unknown split '" + s + "'");
}

/// Synthetic samples with their generating metadata and a fixed split.
///
/// Continuous: 2-D isotropic Gaussian mixture; `labels` is the component id.
/// Sequence: first-order Markov chain over `vocab` tokens; `labels` is the
/// token-0 attribute and `fitness` the additive oracle score.
struct Dataset {
  DataKind kind = DataKind::Continuous;
  std::uint64_t seed = 0;
  Batch samples;
  std::vector<std::int32_t> labels;
  std::vector<double> fitness;
  std::vector<Split> split;

  // continuous
  std::size_t components = 0;
  double radius = 4.0;
  double sigma = 0.3;

  // sequence
  std::size_t vocab = 0;

  std::size_t size() const { return samples.n; }

  std::vector<std::size_t> indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < split.size(); ++i)
      if (split[i] == s) out.push_back(i);
    return out;
  }

  Batch batch(Split s) const {
    const auto idx = indices(s);
    return samples.select(idx);
  }

  std::vector<std::int32_t> labels_of(std::span<const std::size_t> idx) const {
    std::vector<std::int32_t> out;
    for (auto i : idx) out.push_back(labels[i]);
    return out;
  }

  /// Component means for the continuous mixture (K points on a circle).
  std::vector<std::array<double, 2>> means() const {
    std::vector<std::array<double, 2>> m;
    for (std::size_t k = 0; k < components; ++k) {
      const double th = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(components);
      m.push_back({radius * std::cos(th), radius * std::sin(th)});
    }
    return m;
  }

  friend bool operator==(const Dataset& a, const Dataset& b) {
    return a.kind == b.kind && a.seed == b.seed && a.samples.n == b.samples.n && a.samples.width == b.samples.width &&
           a.samples.values == b.samples.values && a.samples.tokens == b.samples.tokens &&
           a.samples.targets == b.samples.targets && a.labels == b.labels && a.fitness == b.fitness &&
           a.split == b.split && a.components == b.components && a.radius == b.radius && a.sigma == b.sigma &&
           a.vocab == b.vocab;
  }
};

namespace detail {

/// Seeded 70/15/15 train/valid/test assignment.
inline std::vector<Split> make_split(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  Rng rng(mix_seed(seed, 0x5917));
  rng.shuffle(perm);
  std::vector<Split> out(n, Split::Train);
  const std::size_t n_train = n * 70 / 100;
  const std::size_t n_valid = n * 15 / 100;
  for (std::size_t r = 0; r < n; ++r) {
    if (r >= n_train + n_valid) out[perm[r]] = Split::Test;
    else if (r >= n_train) out[perm[r]] = Split::Valid;
  }
  return out;
}

}  // namespace detail

/// K means on a circle of radius 4, isotropic sigma 0.3, equal weights.
inline Dataset mixture2d(std::uint64_t seed, std::size_t n, std::size_t k) {
  if (n == 0 || k == 0) throw ConfigError("mixture2d: n and K must be positive");
  Dataset ds;
  ds.kind = DataKind::Continuous;
  ds.seed = seed;
  ds.components = k;
  const auto means = ds.means();
  Rng rng(mix_seed(seed, 0x2d));
  std::vector<double> values;
  values.reserve(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = rng.below(k);
    ds.labels.push_back(static_cast<std::int32_t>(c));
    values.push_back(means[c][0] + ds.sigma * rng.normal());
    values.push_back(means[c][1] + ds.sigma * rng.normal());
  }
  ds.samples = Batch::continuous(n, 2, std::move(values));
  ds.split = detail::make_split(n, seed);
  return ds;
}

/// Row-stochastic V x V transition matrix for `markov_sequences`. Every row moves
/// to token 0 with probability 0.23; the remaining mass is spread over tokens
/// 1..V-1 with weights u^16, u ~ U(0, 1), so each row has a few likely successors.
inline std::vector<double> markov_transition(std::uint64_t seed, std::size_t vocab) {
  if (vocab < 2) throw ConfigError("markov_transition: vocab must be >= 2");
  constexpr double kToZero = 0.23;
  constexpr double kSharpness = 16.0;
  Rng rng(mix_seed(seed, 0x3a));
  std::vector<double> p(vocab * vocab, 0.0);
  for (std::size_t r = 0; r < vocab; ++r) {
    double total = 0.0;
    for (std::size_t c = 1; c < vocab; ++c) {
      p[r * vocab + c] = std::pow(rng.uniform(), kSharpness);
      total += p[r * vocab + c];
    }
    for (std::size_t c = 1; c < vocab; ++c) p[r * vocab + c] *= (1.0 - kToZero) / total;
    p[r * vocab] = kToZero;
  }
  return p;
}

/// Additive oracle: sum over positions of the published weight table entry.
inline double oracle_fitness(std::span<const std::int32_t> seq) {
  if (seq.size() > kFitnessWeights.size())
    throw RangeError("oracle_fitness: sequence longer than the weight table");
  double f = 0.0;
  for (std::size_t p = 0; p < seq.size(); ++p) {
    const auto tok = seq[p];
    if (tok < 0 || static_cast<std::size_t>(tok) >= kFitnessWeights[p].size())
      throw RangeError("oracle_fitness: token " + std::to_string(tok) + " outside vocabulary");
    f += kFitnessWeights[p][static_cast<std::size_t>(tok)];
  }
  return f;
}

/// 1 when token 0 occurs more than L/4 times.
inline std::int32_t token0_attribute(std::span<const std::int32_t> seq) {
  std::size_t count = 0;
  for (auto t : seq) count += t == 0;
  return 4 * count > seq.size() ? 1 : 0;
}

inline Dataset markov_sequences(std::uint64_t seed, std::size_t n, std::size_t len, std::size_t vocab) {
  if (len < 2 || vocab < 2) throw ConfigError("markov_sequences: L and V must be >= 2");
  if (n == 0) throw ConfigError("markov_sequences: n must be positive");
  const auto trans = markov_transition(seed, vocab);
  Rng rng(mix_seed(seed, 0x5e));
  Dataset ds;
  ds.kind = DataKind::Sequence;
  ds.seed = seed;
  ds.vocab = vocab;
  std::vector<std::int32_t> tokens;
  tokens.reserve(n * len);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t cur = rng.below(vocab);
    tokens.push_back(static_cast<std::int32_t>(cur));
    for (std::size_t p = 1; p < len; ++p) {
      const double u = rng.uniform();
      double acc = 0.0;
      std::size_t next = vocab - 1;
      for (std::size_t c = 0; c < vocab; ++c) {
        acc += trans[cur * vocab + c];
        if (u < acc) {
          next = c;
          break;
        }
      }
      cur = next;
      tokens.push_back(static_cast<std::int32_t>(cur));
    }
  }
  ds.samples = Batch::sequences(n, len, std::move(tokens));
  for (std::size_t i = 0; i < n; ++i) {
    const auto s = ds.samples.seq(i);
    ds.labels.push_back(token0_attribute(s));
    ds.fitness.push_back(len <= kFitnessWeights.size() && vocab <= kFitnessWeights[0].size()
                             ? oracle_fitness(s)
                             : 0.0);
  }
  ds.samples.targets = ds.fitness;
  ds.split = detail::make_split(n, seed);
  return ds;
}

// ---------------------------------------------------------------------------
// Text format:
//   EDDPM-DATA v1 kind=<continuous|sequence> n=<n> key=value ...
//   <csv header>
//   <csv rows>

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string tokens_to_string(std::span<const std::int32_t> seq) {
  std::string s;
  for (auto t : seq) {
    if (t < 0 || static_cast<std::size_t>(t) >= kAlphabet.size())
      throw RangeError("tokens_to_string: token " + std::to_string(t) + " has no letter");
    s.push_back(kAlphabet[static_cast<std::size_t>(t)]);
  }
  return s;
}

inline std::vector<std::int32_t> string_to_tokens(std::string_view s) {
  std::vector<std::int32_t> out;
  for (char c : s) {
    const auto pos = kAlphabet.find(c);
    if (pos == std::string_view::npos) throw FormatError(std::string("unknown residue letter '") + c + "'");
    out.push_back(static_cast<std::int32_t>(pos));
  }
  return out;
}

inline void write_dataset(std::ostream& os, const Dataset& ds) {
  os << "EDDPM-DATA v1 kind=" << to_string(ds.kind) << " n=" << ds.size() << " seed=" << ds.seed;
  if (ds.kind == DataKind::Continuous) {
    os << " d=" << ds.samples.width << " K=" << ds.components << " radius=" << format_double(ds.radius)
       << " sigma=" << format_double(ds.sigma) << "\n";
    os << "split,label";
    for (std::size_t j = 0; j < ds.samples.width; ++j) os << ",x" << j;
    os << "\n";
    for (std::size_t i = 0; i < ds.size(); ++i) {
      os << to_string(ds.split[i]) << ',' << ds.labels[i];
      for (double v : ds.samples.row(i)) os << ',' << format_double(v);
      os << "\n";
    }
  } else {
    os << " L=" << ds.samples.width << " V=" << ds.vocab << " table=v" << kFitnessTableVersion << "\n";
    os << "split,label,fitness,sequence\n";
    for (std::size_t i = 0; i < ds.size(); ++i)
      os << to_string(ds.split[i]) << ',' << ds.labels[i] << ',' << format_double(ds.fitness[i]) << ','
         << tokens_to_string(ds.samples.seq(i)) << "\n";
  }
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  write_dataset(os, ds);
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

namespace detail {

inline std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_double(const std::string& s, const std::string& what) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v))
    throw FormatError("malformed " + what + " '" + s + "'");
  return v;
}

inline std::uint64_t parse_uint(const std::string& s, const std::string& what) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
    throw FormatError("malformed " + what + " '" + s + "'");
  return std::stoull(s);
}

}  // namespace detail

inline Dataset read_dataset(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("dataset: empty file");
  std::istringstream hs(line);
  std::string magic, version;
  hs >> magic >> version;
  if (magic != "EDDPM-DATA") throw FormatError("dataset: bad magic '" + magic + "'");
  if (version != "v1") throw FormatError("dataset: unsupported version '" + version + "'");
  std::map<std::string, std::string> kv;
  for (std::string tok; hs >> tok;) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw FormatError("dataset: malformed header field '" + tok + "'");
    kv[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  const auto need = [&](const std::string& k) {
    auto it = kv.find(k);
    if (it == kv.end()) throw FormatError("dataset: header lacks '" + k + "'");
    return it->second;
  };
  Dataset ds;
  try {
    ds.kind = parse_data_kind(need("kind"));
  } catch (const ConfigError& e) {
    throw FormatError(std::string("dataset: ") + e.what());
  }
  const auto n = detail::parse_uint(need("n"), "n");
  ds.seed = detail::parse_uint(need("seed"), "seed");
  std::size_t width = 0;
  if (ds.kind == DataKind::Continuous) {
    width = detail::parse_uint(need("d"), "d");
    ds.components = detail::parse_uint(need("K"), "K");
    ds.radius = detail::parse_double(need("radius"), "radius");
    ds.sigma = detail::parse_double(need("sigma"), "sigma");
  } else {
    width = detail::parse_uint(need("L"), "L");
    ds.vocab = detail::parse_uint(need("V"), "V");
    if (need("table") != "v" + std::to_string(kFitnessTableVersion))
      throw FormatError("dataset: fitness table version mismatch");
  }
  if (!std::getline(is, line)) throw FormatError("dataset: missing column header");
  std::vector<double> values;
  std::vector<std::int32_t> tokens;
  for (std::uint64_t i = 0; i < n; ++i) {
    if (!std::getline(is, line) || is.eof()) throw FormatError("dataset: truncated at row " + std::to_string(i));
    const auto f = detail::split_on(line, ',');
    ds.split.push_back(parse_split(f.at(0)));
    if (ds.kind == DataKind::Continuous) {
      if (f.size() != 2 + width) throw FormatError("dataset: row " + std::to_string(i) + " has wrong field count");
      ds.labels.push_back(static_cast<std::int32_t>(detail::parse_uint(f[1], "label")));
      for (std::size_t j = 0; j < width; ++j) values.push_back(detail::parse_double(f[2 + j], "value"));
    } else {
      if (f.size() != 4) throw FormatError("dataset: row " + std::to_string(i) + " has wrong field count");
      ds.labels.push_back(static_cast<std::int32_t>(detail::parse_uint(f[1], "label")));
      ds.fitness.push_back(detail::parse_double(f[2], "fitness"));
      const auto seq = string_to_tokens(f[3]);
      if (seq.size() != width) throw FormatError("dataset: row " + std::to_string(i) + " has wrong length");
      for (auto t : seq)
        if (static_cast<std::size_t>(t) >= ds.vocab) throw FormatError("dataset: token outside vocabulary");
      tokens.insert(tokens.end(), seq.begin(), seq.end());
    }
  }
  if (std::getline(is, line) && !line.empty()) throw FormatError("dataset: trailing data after declared rows");
  if (ds.kind == DataKind::Continuous) {
    ds.samples = Batch::continuous(n, width, std::move(values));
  } else {
    ds.samples = Batch::sequences(n, width, std::move(tokens));
    ds.samples.targets = ds.fitness;
    for (std::size_t i = 0; i < n; ++i) {
      if (ds.labels[i] != token0_attribute(ds.samples.seq(i)))
        throw FormatError("dataset: row " + std::to_string(i) + " label disagrees with the attribute oracle");
      if (width <= kFitnessWeights.size() && ds.vocab <= kFitnessWeights[0].size() &&
          ds.fitness[i] != oracle_fitness(ds.samples.seq(i)))
        throw FormatError("dataset: row " + std::to_string(i) + " fitness disagrees with the oracle");
    }
  }
  return ds;
}

inline Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  return read_dataset(is);
}

}  // namespace eddpm
