#pragma once

#include <cstddef>
#include <vector>

#include "procver/dataset.hpp"

namespace procver {

// Unit-cost insert/delete/substitute edit distance over step tokens.
std::size_t levenshtein(const std::vector<StepToken>& a, const std::vector<StepToken>& b);

} // namespace procver
