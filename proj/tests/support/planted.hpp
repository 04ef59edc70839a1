#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "topicrag/embeddings.hpp"
#include "topicrag/error.hpp"
#include "topicrag/rng.hpp"

namespace topicrag::testing {

inline std::vector<double> random_unit(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  for (auto& x : v) x = rng.normal();
  normalize(v);
  return v;
}

// Unit vector whose cosine with the unit vector `u` is exactly `c` (up to rounding).
inline std::vector<double> with_cosine(Rng& rng, const std::vector<double>& u, double c) {
  std::vector<double> w = random_unit(rng, u.size());
  double dot = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) dot += w[i] * u[i];
  for (std::size_t i = 0; i < u.size(); ++i) w[i] -= dot * u[i];
  normalize(w);
  const double s = std::sqrt(1.0 - c * c);
  std::vector<double> v(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) v[i] = c * u[i] + s * w[i];
  return v;
}

// Returns planted vectors for known texts; anything else is an error.
class LookupEmbedder : public Embedder {
 public:
  void set(const std::string& text, std::vector<double> v) { table_[text] = std::move(v); }
  Embedding embed(std::string_view text) override {
    auto it = table_.find(std::string(text));
    if (it == table_.end()) throw ValidationError("no planted vector for '" + std::string(text) + "'");
    return {it->second, id()};
  }
  std::string id() const override { return "lookup"; }

 private:
  std::map<std::string, std::vector<double>> table_;
};

}  // namespace topicrag::testing
