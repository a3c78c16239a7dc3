#pragma once

#include <cstddef>
#include <vector>

#include "procver/autodiff.hpp"
#include "procver/tensor.hpp"

namespace procver {

// Frame-to-frame similarity between two K-frame feature sequences: the cosine
// matrix over unit-normalized frames, its row softmax, its column softmax, and
// their average. `values` (the average) is what the alignment loss consumes.
struct CorrelationMatrix {
    Tensor cosine;
    Tensor row_softmax;
    Tensor col_softmax;
    Tensor values;
};

struct LossBreakdown {
    double cls = 0.0;
    double seq = 0.0;
    double lambda = 1.0;
    double total = 0.0;
};

// The optimizer sees the per-sample mean; the dataset-sum convention is
// recovered as mean * batch size, so both are reported.
struct ClassificationLoss {
    double sum = 0.0;
    double mean = 0.0;
};

// Graph builders. The value-level functions below evaluate these same graphs
// on constant leaves, so there is exactly one code path for the math.
struct CorrelationNodes {
    Tape::NodeId cosine;
    Tape::NodeId row_softmax;
    Tape::NodeId col_softmax;
    Tape::NodeId values;
};

CorrelationNodes build_correlation(Tape& t, Tape::NodeId seq1, Tape::NodeId seq2);
Tape::NodeId build_sequence_alignment_loss(Tape& t, Tape::NodeId seq1, Tape::NodeId seq2);
Tape::NodeId build_classification_loss_sum(Tape& t, const std::vector<Tape::NodeId>& logit_rows,
                                           const std::vector<std::size_t>& labels);
Tape::NodeId build_classification_loss_mean(Tape& t, const std::vector<Tape::NodeId>& logit_rows,
                                            const std::vector<std::size_t>& labels);

// seq1, seq2: K x D frame features with no zero-norm row (degenerate rows
// raise NumericError). Invariant under positive rescaling of any frame.
CorrelationMatrix correlation(const Tensor& seq1, const Tensor& seq2);

// L1 distance between the all-ones vector and diag of the averaged
// correlation matrix. Symmetric in its arguments; always strictly positive
// because softmax outputs stay below 1.
double sequence_alignment_loss(const Tensor& seq1, const Tensor& seq2);

// logits_batch: one row of class scores per sample.
ClassificationLoss classification_loss(const Tensor& logits_batch, const std::vector<std::size_t>& labels);

LossBreakdown total_loss(double cls, double seq, double lambda = 1.0);

} // namespace procver
