#include "procver/online.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "procver/errors.hpp"
#include "procver/sampling.hpp"

namespace procver {

Tensor prefix_embed(const CatModel& model, const Tensor& frames, std::size_t t) {
    if (frames.rank() != 2) {
        throw ShapeError("prefix_embed: need rank-2 frames, got " + frames.shape_str());
    }
    const std::size_t k = model.config().frames;
    if (t < k) {
        throw DataError("prefix_embed: prefix of " + std::to_string(t) + " frames is shorter than the clip length " +
                        std::to_string(k));
    }
    if (t > frames.rows()) {
        throw DataError("prefix_embed: prefix " + std::to_string(t) + " exceeds the " +
                        std::to_string(frames.rows()) + " frames available");
    }
    Tensor prefix({t, frames.cols()});
    std::copy_n(frames.data.begin(), t * frames.cols(), prefix.data.begin());
    return model.embed(sample_segments(prefix, k, SampleMode::eval, nullptr));
}

double windowed_distance(const CatModel& model, const Tensor& test_frames, std::size_t t,
                         const Tensor& reference, std::size_t window_k) {
    const std::size_t k = model.config().frames;
    if (reference.rank() != 2 || reference.rows() < k) {
        throw DataError("windowed_distance: reference must provide at least " + std::to_string(k) +
                        " frames");
    }
    if (reference.cols() != test_frames.cols()) {
        throw ShapeError("windowed_distance: stream and reference dims differ");
    }
    const Tensor e_test = prefix_embed(model, test_frames, t);
    const long long lo = static_cast<long long>(k);
    const long long hi = static_cast<long long>(reference.rows());
    double sum = 0.0;
    for (long long i = -static_cast<long long>(window_k); i <= static_cast<long long>(window_k); ++i) {
        const long long u = std::clamp(static_cast<long long>(t) + i, lo, hi);
        const Tensor e_ref = prefix_embed(model, reference, static_cast<std::size_t>(u));
        double sq = 0.0;
        for (std::size_t j = 0; j < e_test.data.size(); ++j) {
            const double d = e_test.data[j] - e_ref.data[j];
            sq += d * d;
        }
        sum += sq;
    }
    return sum / static_cast<double>(2 * window_k + 1);
}

std::string WarningEvent::to_json() const {
    nlohmann::json j;
    j["t"] = t;
    j["distance"] = distance;
    j["threshold"] = threshold;
    return j.dump();
}

StreamMonitor::StreamMonitor(Tensor reference, std::size_t window_k, double warn_threshold,
                             std::size_t stride)
    : reference_(std::move(reference)), window_k_(window_k), warn_threshold_(warn_threshold),
      stride_(stride) {
    if (reference_.rank() != 2 || reference_.rows() == 0) {
        throw ShapeError("stream monitor: reference must be a nonempty rank-2 frame block");
    }
    if (stride_ == 0) {
        throw ConfigError("stream monitor: stride must be positive");
    }
    buffer_.shape = {0, reference_.cols()};
}

std::optional<WarningEvent> StreamMonitor::feed(const CatModel& model, const Tensor& frames) {
    if (closed_) {
        throw DataError("stream monitor: stream is closed");
    }
    if (frames.rank() != 2 || frames.cols() != reference_.cols()) {
        throw ShapeError("stream monitor: frames must be rank-2 with the reference's dim");
    }
    buffer_.data.insert(buffer_.data.end(), frames.data.begin(), frames.data.end());
    frames_seen_ += frames.rows();
    buffer_.shape = {frames_seen_, reference_.cols()};

    if (!next_eval_) {
        next_eval_ = model.config().frames;
    }
    std::optional<WarningEvent> event;
    while (*next_eval_ <= frames_seen_) {
        const std::size_t t = *next_eval_;
        const double d = windowed_distance(model, buffer_, t, reference_, window_k_);
        history_.emplace_back(t, d);
        if (!warned_at_ && d > warn_threshold_) {
            warned_at_ = t;
            event = WarningEvent{t, d, warn_threshold_};
        }
        *next_eval_ += stride_;
    }
    return event;
}

void StreamMonitor::close() {
    closed_ = true;
}

double default_warn_threshold(const CatModel& model, const Tensor& reference,
                              const std::vector<Tensor>& matched_streams, std::size_t window_k,
                              std::size_t stride) {
    if (stride == 0) {
        throw ConfigError("default_warn_threshold: stride must be positive");
    }
    const std::size_t k = model.config().frames;
    std::vector<double> distances;
    for (const Tensor& stream : matched_streams) {
        if (stream.rank() != 2) {
            throw ShapeError("default_warn_threshold: streams must be rank-2");
        }
        for (std::size_t t = k; t <= stream.rows(); t += stride) {
            distances.push_back(windowed_distance(model, stream, t, reference, window_k));
        }
    }
    if (distances.empty()) {
        throw DataError("default_warn_threshold: no evaluation points (streams shorter than the clip length?)");
    }
    double mean = 0.0;
    for (double d : distances) {
        mean += d;
    }
    mean /= static_cast<double>(distances.size());
    double var = 0.0;
    for (double d : distances) {
        var += (d - mean) * (d - mean);
    }
    var /= static_cast<double>(distances.size());
    return mean + 3.0 * std::sqrt(var);
}

} // namespace procver
