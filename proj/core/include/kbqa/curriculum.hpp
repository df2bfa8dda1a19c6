#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "kbqa/corpus.hpp"

namespace kbqa::curriculum {

/// Iteration `current` of `total`; multi-instance bags enter the sample
/// with probability (current/total)^2.
struct CurriculumPlan {
  int total = 1;
  int current = 0;
  std::uint64_t seed = 0;

  void validate() const;
  double inclusion_probability() const;
};

/// Indices of the sampled bags, in seeded shuffled order. `answer_counts`
/// gives each bag's size; bags of size 1 are always included.
std::vector<std::size_t> sample_indices(const CurriculumPlan& plan, std::span<const std::size_t> answer_counts);

std::vector<corpus::QABag> iteration_sample(const CurriculumPlan& plan, std::span<const corpus::QABag> bags);

}  // namespace kbqa::curriculum
