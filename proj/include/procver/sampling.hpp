#pragma once

#include <cstddef>
#include <vector>

#include "procver/dataset.hpp"
#include "procver/rng.hpp"
#include "procver/tensor.hpp"

namespace procver {

enum class SampleMode { train, eval };

// Half-open [begin, end) frame ranges of K equal contiguous segments.
struct SegmentBounds {
    std::size_t begin = 0;
    std::size_t end = 0;
};

std::vector<SegmentBounds> segment_bounds(std::size_t num_frames, std::size_t k);

// Frame index per segment: train picks uniformly inside each segment (rng
// required), eval picks the center deterministically (rng ignored).
std::vector<std::size_t> sample_segment_indices(std::size_t num_frames, std::size_t k,
                                                SampleMode mode, Rng* rng);

// Gathers the selected frames into a (k x dim) tensor.
Tensor sample_segments(const Tensor& features, std::size_t k, SampleMode mode, Rng* rng);

// All within-procedure pairs (positives) and within-task cross-procedure
// pairs (negatives) available in a set of procedures, in deterministic order.
std::vector<PairSample> enumerate_positive_pairs(const std::vector<const ProcedureRecord*>& procs);
std::vector<PairSample> enumerate_negative_pairs(const std::vector<const ProcedureRecord*>& procs);

// Draws n_pos positives and n_neg negatives without replacement; errors when
// the requested counts exceed what the procedures can supply. Negative pairs
// carry their step-sequence Levenshtein distance.
std::vector<PairSample> sample_pairs(const std::vector<const ProcedureRecord*>& procs,
                                     std::size_t n_pos, std::size_t n_neg, Rng& rng);

} // namespace procver
