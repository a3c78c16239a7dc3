#include "procver/sampling.hpp"

#include <map>

#include "procver/levenshtein.hpp"

namespace procver {

std::vector<SegmentBounds> segment_bounds(std::size_t num_frames, std::size_t k) {
    if (k == 0) {
        throw ConfigError("segment_bounds: k must be positive");
    }
    if (num_frames < k) {
        throw DataError("video has " + std::to_string(num_frames) + " frames, fewer than the " +
                        std::to_string(k) + " segments requested");
    }
    std::vector<SegmentBounds> out(k);
    for (std::size_t i = 0; i < k; ++i) {
        out[i].begin = i * num_frames / k;
        out[i].end = (i + 1) * num_frames / k;
    }
    return out;
}

std::vector<std::size_t> sample_segment_indices(std::size_t num_frames, std::size_t k,
                                                SampleMode mode, Rng* rng) {
    const std::vector<SegmentBounds> bounds = segment_bounds(num_frames, k);
    std::vector<std::size_t> idx(k);
    for (std::size_t i = 0; i < k; ++i) {
        const SegmentBounds& b = bounds[i];
        if (mode == SampleMode::train) {
            if (rng == nullptr) {
                throw ConfigError("sample_segment_indices: train mode needs an rng");
            }
            idx[i] = b.begin + static_cast<std::size_t>(rng->uniform_int(b.end - b.begin));
        } else {
            idx[i] = (b.begin + b.end) / 2;
        }
    }
    return idx;
}

Tensor sample_segments(const Tensor& features, std::size_t k, SampleMode mode, Rng* rng) {
    const std::size_t frames = features.rows();
    const std::size_t dim = features.cols();
    const std::vector<std::size_t> idx = sample_segment_indices(frames, k, mode, rng);
    Tensor out({k, dim});
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < dim; ++j) {
            out(i, j) = features(idx[i], j);
        }
    }
    return out;
}

std::vector<PairSample> enumerate_positive_pairs(const std::vector<const ProcedureRecord*>& procs) {
    std::vector<PairSample> out;
    for (const ProcedureRecord* p : procs) {
        for (std::size_t i = 0; i < p->videos.size(); ++i) {
            for (std::size_t j = i + 1; j < p->videos.size(); ++j) {
                PairSample s;
                s.a = {p, &p->videos[i]};
                s.b = {p, &p->videos[j]};
                s.is_positive = true;
                s.ed = 0;
                out.push_back(s);
            }
        }
    }
    return out;
}

std::vector<PairSample> enumerate_negative_pairs(const std::vector<const ProcedureRecord*>& procs) {
    // group by task, preserving input order
    std::map<std::string, std::vector<const ProcedureRecord*>> by_task;
    for (const ProcedureRecord* p : procs) {
        by_task[p->task_id].push_back(p);
    }
    std::vector<PairSample> out;
    for (const auto& [task_id, group] : by_task) {
        for (std::size_t a = 0; a < group.size(); ++a) {
            for (std::size_t b = a + 1; b < group.size(); ++b) {
                const std::size_t ed = levenshtein(group[a]->steps, group[b]->steps);
                if (ed == 0) {
                    throw DataError("procedures '" + group[a]->procedure_id + "' and '" +
                                    group[b]->procedure_id +
                                    "' have identical steps; cannot form a negative pair");
                }
                for (const VideoRecord& va : group[a]->videos) {
                    for (const VideoRecord& vb : group[b]->videos) {
                        PairSample s;
                        s.a = {group[a], &va};
                        s.b = {group[b], &vb};
                        s.is_positive = false;
                        s.ed = ed;
                        out.push_back(s);
                    }
                }
            }
        }
    }
    return out;
}

namespace {

// first n elements of a random permutation, in place
void partial_shuffle(std::vector<PairSample>& pool, std::size_t n, Rng& rng) {
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.uniform_int(pool.size() - i));
        std::swap(pool[i], pool[j]);
    }
}

} // namespace

std::vector<PairSample> sample_pairs(const std::vector<const ProcedureRecord*>& procs,
                                     std::size_t n_pos, std::size_t n_neg, Rng& rng) {
    std::vector<PairSample> pos = enumerate_positive_pairs(procs);
    std::vector<PairSample> neg = enumerate_negative_pairs(procs);
    if (n_pos > pos.size()) {
        throw DataError("requested " + std::to_string(n_pos) + " positive pairs, only " +
                        std::to_string(pos.size()) + " exist");
    }
    if (n_neg > neg.size()) {
        throw DataError("requested " + std::to_string(n_neg) + " negative pairs, only " +
                        std::to_string(neg.size()) + " exist");
    }
    partial_shuffle(pos, n_pos, rng);
    partial_shuffle(neg, n_neg, rng);
    std::vector<PairSample> out;
    out.reserve(n_pos + n_neg);
    out.insert(out.end(), pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(n_pos));
    out.insert(out.end(), neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(n_neg));
    return out;
}

} // namespace procver
