#include "kbqa/curriculum.hpp"

#include <algorithm>
#include <random>

#include "kbqa/errors.hpp"

namespace kbqa::curriculum {

void CurriculumPlan::validate() const {
  if (total <= 0) throw ConfigError("curriculum needs a positive iteration count");
  if (current < 0 || current > total) throw ConfigError("curriculum iteration outside [0, total]");
}

double CurriculumPlan::inclusion_probability() const {
  validate();
  const double r = static_cast<double>(current) / static_cast<double>(total);
  return r * r;
}

std::vector<std::size_t> sample_indices(const CurriculumPlan& plan, std::span<const std::size_t> answer_counts) {
  const double p = plan.inclusion_probability();
  std::seed_seq seq{static_cast<std::uint32_t>(plan.seed), static_cast<std::uint32_t>(plan.seed >> 32),
                    static_cast<std::uint32_t>(plan.current), 0x6375u};
  std::mt19937_64 rng(seq);
  std::bernoulli_distribution include(p);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < answer_counts.size(); ++i) {
    // Draw for every bag so a bag's decision does not depend on its neighbours' sizes.
    const bool drawn = include(rng);
    if (answer_counts[i] <= 1 || drawn) out.push_back(i);
  }
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

std::vector<corpus::QABag> iteration_sample(const CurriculumPlan& plan, std::span<const corpus::QABag> bags) {
  std::vector<std::size_t> counts;
  counts.reserve(bags.size());
  for (const auto& b : bags) counts.push_back(b.answers.size());
  std::vector<corpus::QABag> out;
  for (std::size_t i : sample_indices(plan, counts)) out.push_back(bags[i]);
  return out;
}

}  // namespace kbqa::curriculum
