#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "procver/model.hpp"
#include "procver/tensor.hpp"

namespace procver {

// Embedding of the first t frames: eval-mode segment sampling over the
// prefix, then the standard forward pass. Requires t >= the model's clip
// length.
Tensor prefix_embed(const CatModel& model, const Tensor& frames, std::size_t t);

// Mean squared L2 distance between the test-prefix embedding and the 2k+1
// reference-prefix embeddings at lengths t-k..t+k, clamped to what the
// reference can supply. Operates on raw (un-normalized) embeddings.
double windowed_distance(const CatModel& model, const Tensor& test_frames, std::size_t t,
                         const Tensor& reference, std::size_t window_k);

struct WarningEvent {
    std::size_t t = 0;
    double distance = 0.0;
    double threshold = 0.0;

    std::string to_json() const; // one line: {"distance":..,"t":..,"threshold":..}
};

// Single-writer monitor for one growing stream against a complete reference.
// Distances are evaluated at t = K, K+stride, ...; the first threshold
// crossing emits a WarningEvent and is never repeated.
class StreamMonitor {
public:
    StreamMonitor(Tensor reference, std::size_t window_k, double warn_threshold,
                  std::size_t stride = 25);

    // Appends rows (n x dim) and evaluates every due point. Returns the
    // warning if this call produced the first crossing.
    std::optional<WarningEvent> feed(const CatModel& model, const Tensor& frames);

    void close();
    bool closed() const { return closed_; }

    std::size_t frames_seen() const { return frames_seen_; }
    const std::vector<std::pair<std::size_t, double>>& history() const { return history_; }
    std::optional<std::size_t> warned_at() const { return warned_at_; }
    double warn_threshold() const { return warn_threshold_; }
    std::size_t window_k() const { return window_k_; }
    std::size_t stride() const { return stride_; }

private:
    Tensor reference_;
    std::size_t window_k_;
    double warn_threshold_;
    std::size_t stride_;
    Tensor buffer_; // rows received so far
    std::size_t frames_seen_ = 0;
    std::vector<std::pair<std::size_t, double>> history_;
    std::optional<std::size_t> warned_at_;
    std::optional<std::size_t> next_eval_; // set once K is known
    bool closed_ = false;
};

// mean + 3*stddev of the windowed distances that matched validation streams
// produce at every evaluation point — a starting threshold for streams that
// are supposed to follow the reference.
double default_warn_threshold(const CatModel& model, const Tensor& reference,
                              const std::vector<Tensor>& matched_streams, std::size_t window_k,
                              std::size_t stride = 25);

} // namespace procver
