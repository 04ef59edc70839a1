#include "topicrag/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "topicrag/error.hpp"
#include "topicrag/text.hpp"

namespace topicrag {

namespace {

using Tokens = std::vector<std::string>;
using Counts = std::map<Tokens, std::size_t>;

Counts ngram_counts(const Tokens& toks, std::size_t n) {
  Counts c;
  if (toks.size() < n) return c;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) ++c[Tokens(toks.begin() + i, toks.begin() + i + n)];
  return c;
}

std::size_t total(const Counts& c) {
  std::size_t t = 0;
  for (const auto& [_, v] : c) t += v;
  return t;
}

std::size_t overlap(const Counts& cand, const Counts& ref) {
  std::size_t hits = 0;
  for (const auto& [g, v] : cand) {
    auto it = ref.find(g);
    if (it != ref.end()) hits += std::min(v, it->second);
  }
  return hits;
}

double f1(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

}  // namespace

double bleu_n(std::string_view candidate, const std::vector<std::string>& references, std::size_t n) {
  if (n < 1 || n > 4) throw ValidationError("BLEU order must lie in 1..4");
  if (references.empty()) throw ValidationError("BLEU needs at least one reference");
  const Tokens cand = text::tokenize(candidate);
  if (cand.empty()) return 0.0;
  std::vector<Tokens> refs;
  for (const auto& r : references) refs.push_back(text::tokenize(r));

  double log_sum = 0.0;
  for (std::size_t order = 1; order <= n; ++order) {
    const Counts cc = ngram_counts(cand, order);
    // Clip each candidate n-gram by its maximum count in any single reference.
    std::map<Tokens, std::size_t> max_ref;
    for (const auto& r : refs) {
      for (const auto& [g, v] : ngram_counts(r, order)) max_ref[g] = std::max(max_ref[g], v);
    }
    const std::size_t clipped = overlap(cc, max_ref);
    const std::size_t denom = total(cc);
    double p;
    if (denom == 0) {
      p = kBleuEpsilon;
    } else {
      p = (clipped > 0 ? static_cast<double>(clipped) : kBleuEpsilon) / static_cast<double>(denom);
    }
    log_sum += std::log(p);
  }
  const double c = static_cast<double>(cand.size());
  double r = static_cast<double>(refs.front().size());
  for (const auto& ref : refs) {
    const double len = static_cast<double>(ref.size());
    if (std::abs(len - c) < std::abs(r - c) || (std::abs(len - c) == std::abs(r - c) && len < r)) r = len;
  }
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / static_cast<double>(n));
}

double gleu(std::string_view candidate, const std::vector<std::string>& references) {
  if (references.empty()) throw ValidationError("GLEU needs at least one reference");
  const Tokens cand = text::tokenize(candidate);
  if (cand.empty()) return 0.0;
  double best = 0.0;
  for (const auto& r : references) {
    const Tokens ref = text::tokenize(r);
    std::size_t hits = 0, cand_total = 0, ref_total = 0;
    for (std::size_t order = 1; order <= 4; ++order) {
      const Counts cc = ngram_counts(cand, order), rc = ngram_counts(ref, order);
      hits += overlap(cc, rc);
      cand_total += total(cc);
      ref_total += total(rc);
    }
    if (cand_total == 0 || ref_total == 0) continue;
    const double p = static_cast<double>(hits) / static_cast<double>(cand_total);
    const double rr = static_cast<double>(hits) / static_cast<double>(ref_total);
    best = std::max(best, std::min(p, rr));
  }
  return best;
}

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge(std::string_view candidate, std::string_view reference, RougeVariant variant) {
  const Tokens ref = text::tokenize(reference);
  if (ref.empty()) throw ValidationError("ROUGE needs a nonempty reference");
  const Tokens cand = text::tokenize(candidate);
  if (cand.empty()) return 0.0;
  if (variant == RougeVariant::kRougeL) {
    const double l = static_cast<double>(lcs_length(cand, ref));
    return f1(l / static_cast<double>(cand.size()), l / static_cast<double>(ref.size()));
  }
  const std::size_t n = variant == RougeVariant::kRouge1 ? 1 : 2;
  const Counts cc = ngram_counts(cand, n), rc = ngram_counts(ref, n);
  const std::size_t ct = total(cc), rt = total(rc);
  if (ct == 0 || rt == 0) return 0.0;
  const double hits = static_cast<double>(overlap(cc, rc));
  return f1(hits / static_cast<double>(ct), hits / static_cast<double>(rt));
}

double distinct_n(const std::vector<std::string>& responses, std::size_t n) {
  if (n == 0) throw ValidationError("distinct-n order must be >= 1");
  std::set<Tokens> unique;
  std::size_t count = 0;
  for (const auto& r : responses) {
    for (const auto& [g, v] : ngram_counts(text::tokenize(r), n)) {
      unique.insert(g);
      count += v;
    }
  }
  if (count == 0) throw ValidationError("distinct-" + std::to_string(n) + " over responses with no n-grams");
  return static_cast<double>(unique.size()) / static_cast<double>(count);
}

}  // namespace topicrag
