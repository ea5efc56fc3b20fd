#pragma once

// Shared plumbing: deterministic RNG, seed derivation, key-value config files.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sono {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t hash64(std::string_view tag) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (unsigned char c : tag) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// Independent sub-stream seed from a master seed, a purpose tag and an index.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view tag,
                                 std::uint64_t index = 0) {
  return splitmix64(master ^ splitmix64(hash64(tag) + 0x632be59bd9b4e019ull * index));
}

// mt19937_64 with explicit Box-Muller so streams are identical across
// standard library implementations (std::normal_distribution is not).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // [0, 1)
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(gen_() % n); }

  double gaussian() {
    const double two_pi = 6.283185307179586476925286766559;
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
  }

  double gaussian(double sigma) { return sigma * gaussian(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
  }

 private:
  std::mt19937_64 gen_;
};

// Key-value config: one entry per line, "key = tok1 tok2 ...", '#' comments.
class Config {
 public:
  Config() = default;

  static Config parse(std::istream& in) {
    Config cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      auto eq = line.find('=');
      if (eq == std::string::npos) {
        if (line.find_first_not_of(" \t\r") != std::string::npos)
          throw std::runtime_error("config line " + std::to_string(lineno) + ": expected 'key = value'");
        continue;
      }
      std::string key = trim(line.substr(0, eq));
      if (key.empty()) throw std::runtime_error("config line " + std::to_string(lineno) + ": empty key");
      std::istringstream rest(line.substr(eq + 1));
      std::vector<std::string> toks;
      std::string t;
      while (rest >> t) toks.push_back(t);
      cfg.entries_[key] = toks;
    }
    return cfg;
  }

  static Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    return parse(in);
  }

  bool has(const std::string& key) const { return entries_.count(key) > 0; }

  double number(const std::string& key) const {
    const auto& t = tokens(key);
    if (t.size() != 1) throw std::runtime_error("config key '" + key + "' expects one number");
    return to_double(key, t[0]);
  }

  double number_or(const std::string& key, double fallback) const {
    return has(key) ? number(key) : fallback;
  }

  std::vector<double> numbers(const std::string& key) const {
    const auto& t = tokens(key);
    std::vector<double> out;
    out.reserve(t.size());
    for (const auto& s : t) out.push_back(to_double(key, s));
    return out;
  }

  const std::vector<std::string>& tokens(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw std::runtime_error("missing config key: " + key);
    return it->second;
  }

  const std::map<std::string, std::vector<std::string>>& entries() const { return entries_; }

 private:
  static std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  }

  static double to_double(const std::string& key, const std::string& s) {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::runtime_error("config key '" + key + "': bad number '" + s + "'");
    return v;
  }

  std::map<std::string, std::vector<std::string>> entries_;
};

}  // namespace sono
