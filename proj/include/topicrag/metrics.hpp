#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace topicrag {

// Zero clipped matches at an order are replaced by this count.
inline constexpr double kBleuEpsilon = 1e-9;

// Modified n-gram precision over orders 1..n, geometric mean, times the
// brevity penalty against the closest reference length (shorter on ties).
// Empty candidate -> 0. Throws ValidationError for n outside 1..4 or no references.
double bleu_n(std::string_view candidate, const std::vector<std::string>& references, std::size_t n);

// Sentence GLEU: min(precision, recall) over all 1..4-grams, best reference.
double gleu(std::string_view candidate, const std::vector<std::string>& references);

enum class RougeVariant { kRouge1, kRouge2, kRougeL };

// F1 of n-gram overlap (1, 2) or of the longest common subsequence (L).
// Throws ValidationError on an empty reference.
double rouge(std::string_view candidate, std::string_view reference, RougeVariant variant);

// Length of the longest common subsequence of two token lists.
std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b);

// Unique n-grams / total n-grams pooled over all responses. Throws
// ValidationError when there are no n-grams at all.
double distinct_n(const std::vector<std::string>& responses, std::size_t n);

}  // namespace topicrag
