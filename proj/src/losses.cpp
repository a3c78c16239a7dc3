#include "procver/losses.hpp"

#include <cmath>
#include <string>

#include "procver/errors.hpp"

namespace procver {

namespace {

void check_sequence_pair(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw ShapeError("correlation: need rank-2 frame features, got " + a.shape_str() + " and " +
                         b.shape_str());
    }
    if (a.shape != b.shape) {
        throw ShapeError("correlation: sequence shapes differ: " + a.shape_str() + " vs " + b.shape_str());
    }
}

} // namespace

CorrelationNodes build_correlation(Tape& t, Tape::NodeId seq1, Tape::NodeId seq2) {
    check_sequence_pair(t.value(seq1), t.value(seq2));
    const auto n1 = t.l2_normalize_rows(seq1);
    const auto n2 = t.l2_normalize_rows(seq2);
    CorrelationNodes out;
    out.cosine = t.matmul(n1, t.transpose(n2));
    out.row_softmax = t.softmax_rows(out.cosine);
    out.col_softmax = t.transpose(t.softmax_rows(t.transpose(out.cosine)));
    out.values = t.scale(t.add(out.row_softmax, out.col_softmax), 0.5);
    return out;
}

Tape::NodeId build_sequence_alignment_loss(Tape& t, Tape::NodeId seq1, Tape::NodeId seq2) {
    const CorrelationNodes corr = build_correlation(t, seq1, seq2);
    const auto diag = t.diagonal(corr.values);
    return t.abs_sum(t.affine(diag, -1.0, 1.0));
}

Tape::NodeId build_classification_loss_sum(Tape& t, const std::vector<Tape::NodeId>& logit_rows,
                                           const std::vector<std::size_t>& labels) {
    if (logit_rows.empty()) {
        throw ShapeError("classification_loss: empty batch");
    }
    if (logit_rows.size() != labels.size()) {
        throw ShapeError("classification_loss: " + std::to_string(logit_rows.size()) + " logit rows vs " +
                         std::to_string(labels.size()) + " labels");
    }
    Tape::NodeId acc = t.cross_entropy_from_logits(logit_rows[0], labels[0]);
    for (std::size_t i = 1; i < logit_rows.size(); ++i) {
        acc = t.add(acc, t.cross_entropy_from_logits(logit_rows[i], labels[i]));
    }
    return acc;
}

Tape::NodeId build_classification_loss_mean(Tape& t, const std::vector<Tape::NodeId>& logit_rows,
                                            const std::vector<std::size_t>& labels) {
    const auto sum = build_classification_loss_sum(t, logit_rows, labels);
    return t.scale(sum, 1.0 / static_cast<double>(logit_rows.size()));
}

CorrelationMatrix correlation(const Tensor& seq1, const Tensor& seq2) {
    Tape t;
    const auto nodes = build_correlation(t, t.constant(seq1), t.constant(seq2));
    CorrelationMatrix out;
    out.cosine = t.value(nodes.cosine);
    out.row_softmax = t.value(nodes.row_softmax);
    out.col_softmax = t.value(nodes.col_softmax);
    out.values = t.value(nodes.values);
    return out;
}

double sequence_alignment_loss(const Tensor& seq1, const Tensor& seq2) {
    Tape t;
    const auto loss = build_sequence_alignment_loss(t, t.constant(seq1), t.constant(seq2));
    return t.value(loss).data[0];
}

ClassificationLoss classification_loss(const Tensor& logits_batch, const std::vector<std::size_t>& labels) {
    if (logits_batch.rank() != 2) {
        throw ShapeError("classification_loss: need rank-2 logits batch, got " + logits_batch.shape_str());
    }
    const std::size_t batch = logits_batch.rows();
    const std::size_t classes = logits_batch.cols();
    Tape t;
    std::vector<Tape::NodeId> rows;
    rows.reserve(batch);
    for (std::size_t i = 0; i < batch; ++i) {
        Tensor row({classes});
        for (std::size_t j = 0; j < classes; ++j) {
            row[j] = logits_batch(i, j);
        }
        rows.push_back(t.constant(std::move(row)));
    }
    const auto sum_node = build_classification_loss_sum(t, rows, labels);
    ClassificationLoss out;
    out.sum = t.value(sum_node).data[0];
    out.mean = out.sum / static_cast<double>(batch);
    return out;
}

LossBreakdown total_loss(double cls, double seq, double lambda) {
    if (!std::isfinite(cls) || !std::isfinite(seq) || !std::isfinite(lambda)) {
        throw NumericError("total_loss: non-finite input");
    }
    if (lambda < 0.0) {
        throw ConfigError("total_loss: lambda must be nonnegative, got " + std::to_string(lambda));
    }
    LossBreakdown out;
    out.cls = cls;
    out.seq = seq;
    out.lambda = lambda;
    out.total = cls + lambda * seq;
    if (!std::isfinite(out.total)) {
        throw NumericError("total_loss: non-finite total");
    }
    return out;
}

} // namespace procver
