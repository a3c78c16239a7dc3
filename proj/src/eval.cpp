#include "procver/eval.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "procver/errors.hpp"
#include "procver/pvft.hpp"
#include "procver/sampling.hpp"

namespace procver {

namespace {

double checked_norm(const Tensor& t, const char* what) {
    double s = 0.0;
    for (double v : t.data) {
        s += v * v;
    }
    const double n = std::sqrt(s);
    if (!std::isfinite(n) || n < 1e-12) {
        throw NumericError(std::string(what) + ": zero-norm embedding");
    }
    return n;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape != b.shape) {
        throw ShapeError(std::string(what) + ": embedding shapes differ: " + a.shape_str() + " vs " +
                         b.shape_str());
    }
}

void split_by_label(const std::vector<PairDistance>& distances, std::vector<double>& pos,
                    std::vector<double>& neg, const char* what) {
    for (const PairDistance& pd : distances) {
        if (!std::isfinite(pd.d) || pd.d < 0.0) {
            throw NumericError(std::string(what) + ": invalid distance");
        }
        (pd.pair.is_positive ? pos : neg).push_back(pd.d);
    }
    if (pos.empty() || neg.empty()) {
        throw DataError(std::string(what) + ": need at least one positive and one negative pair");
    }
}

std::string fmt(double v) {
    return nlohmann::json(v).dump();
}

} // namespace

double pair_distance(const Tensor& ea, const Tensor& eb) {
    check_same_shape(ea, eb, "pair_distance");
    const double na = checked_norm(ea, "pair_distance");
    const double nb = checked_norm(eb, "pair_distance");
    double s = 0.0;
    for (std::size_t i = 0; i < ea.data.size(); ++i) {
        const double d = ea.data[i] / na - eb.data[i] / nb;
        s += d * d;
    }
    return std::min(std::sqrt(s), 2.0);
}

Verdict verify(double d, double tau) {
    return d <= tau ? Verdict::consistent : Verdict::inconsistent;
}

double auc(const std::vector<PairDistance>& distances) {
    std::vector<double> pos;
    std::vector<double> neg;
    split_by_label(distances, pos, neg, "auc");
    std::sort(pos.begin(), pos.end());
    // Integer numerator (2 per win, 1 per tie) keeps the rank formulation
    // bit-identical to exhaustive pair counting.
    unsigned long long num = 0;
    for (double d : neg) {
        const auto lo = std::lower_bound(pos.begin(), pos.end(), d) - pos.begin();
        const auto hi = std::upper_bound(pos.begin(), pos.end(), d) - pos.begin();
        num += 2ull * static_cast<unsigned long long>(lo) + static_cast<unsigned long long>(hi - lo);
    }
    return static_cast<double>(num) / (2.0 * static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

double wdr(const std::vector<PairDistance>& distances) {
    double pos_sum = 0.0;
    double neg_sum = 0.0;
    std::size_t p = 0;
    std::size_t n = 0;
    for (const PairDistance& pd : distances) {
        if (!std::isfinite(pd.d) || pd.d < 0.0) {
            throw NumericError("wdr: invalid distance");
        }
        if (pd.pair.is_positive) {
            pos_sum += pd.d;
            ++p;
        } else {
            if (pd.pair.ed == 0) {
                throw DataError("wdr: negative pair with edit distance 0");
            }
            neg_sum += pd.d / static_cast<double>(pd.pair.ed);
            ++n;
        }
    }
    if (p == 0 || n == 0) {
        throw DataError("wdr: need at least one positive and one negative pair");
    }
    const double pos_mean = pos_sum / static_cast<double>(p);
    if (pos_mean <= 0.0) {
        throw NumericError("wdr: zero mean positive distance (degenerate embeddings)");
    }
    return (neg_sum / static_cast<double>(n)) / pos_mean;
}

NegativeKind classify_negative(const std::vector<StepToken>& a, const std::vector<StepToken>& b) {
    std::vector<std::string> sa;
    std::vector<std::string> sb;
    sa.reserve(a.size());
    sb.reserve(b.size());
    for (const StepToken& t : a) {
        sa.push_back(t.canonical());
    }
    for (const StepToken& t : b) {
        sb.push_back(t.canonical());
    }
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    return sa == sb ? NegativeKind::alter_order : NegativeKind::alter_number;
}

std::map<std::string, double> split_auc(const std::vector<PairDistance>& distances) {
    std::vector<PairDistance> order;
    std::vector<PairDistance> number;
    for (const PairDistance& pd : distances) {
        if (pd.pair.is_positive) {
            order.push_back(pd);
            number.push_back(pd);
            continue;
        }
        const auto kind = classify_negative(pd.pair.a.procedure->steps, pd.pair.b.procedure->steps);
        (kind == NegativeKind::alter_order ? order : number).push_back(pd);
    }
    auto count_negatives = [](const std::vector<PairDistance>& v) {
        std::size_t n = 0;
        for (const PairDistance& pd : v) {
            n += pd.pair.is_positive ? 0 : 1;
        }
        return n;
    };
    if (count_negatives(order) == 0) {
        throw DataError("split_auc: alter-order split has no negatives");
    }
    if (count_negatives(number) == 0) {
        throw DataError("split_auc: alter-number split has no negatives");
    }
    return {{"alter-order", auc(order)}, {"alter-number", auc(number)}};
}

std::map<std::size_t, double> distance_vs_levenshtein(const std::vector<PairDistance>& distances) {
    std::map<std::size_t, std::pair<double, std::size_t>> acc;
    for (const PairDistance& pd : distances) {
        if (!std::isfinite(pd.d)) {
            throw NumericError("distance_vs_levenshtein: invalid distance");
        }
        const std::size_t bucket = pd.pair.is_positive ? 0 : pd.pair.ed;
        auto& slot = acc[bucket];
        slot.first += pd.d;
        slot.second += 1;
    }
    if (acc.empty()) {
        throw DataError("distance_vs_levenshtein: no pairs");
    }
    std::map<std::size_t, double> out;
    for (const auto& [bucket, slot] : acc) {
        out[bucket] = slot.first / static_cast<double>(slot.second);
    }
    return out;
}

double select_tau(const std::vector<PairDistance>& distances) {
    std::vector<double> pos;
    std::vector<double> neg;
    split_by_label(distances, pos, neg, "select_tau");
    std::vector<double> values;
    values.reserve(pos.size() + neg.size());
    values.insert(values.end(), pos.begin(), pos.end());
    values.insert(values.end(), neg.begin(), neg.end());
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    std::sort(pos.begin(), pos.end());
    std::sort(neg.begin(), neg.end());

    // FPR/FNR are constant for tau in [v_j, v_{j+1}); FNR - FPR only ever
    // decreases with tau, so the minimizing intervals are contiguous.
    const double p_total = static_cast<double>(pos.size());
    const double n_total = static_cast<double>(neg.size());
    double best = std::numeric_limits<double>::infinity();
    std::size_t first = 0;
    std::size_t last = 0;
    for (std::size_t j = 0; j < values.size(); ++j) {
        const double v = values[j];
        const auto pos_acc = std::upper_bound(pos.begin(), pos.end(), v) - pos.begin();
        const auto neg_acc = std::upper_bound(neg.begin(), neg.end(), v) - neg.begin();
        const double fnr = 1.0 - static_cast<double>(pos_acc) / p_total;
        const double fpr = static_cast<double>(neg_acc) / n_total;
        const double diff = std::abs(fpr - fnr);
        if (diff < best - 1e-15) {
            best = diff;
            first = j;
            last = j;
        } else if (diff <= best + 1e-15) {
            last = j;
        }
    }
    const double lo = values[first];
    const double hi = (last + 1 < values.size()) ? values[last + 1] : values[last];
    return 0.5 * (lo + hi);
}

double score(const Tensor& ref, const Tensor& cand) {
    check_same_shape(ref, cand, "score");
    const double nr = checked_norm(ref, "score");
    const double nc = checked_norm(cand, "score");
    double dot = 0.0;
    for (std::size_t i = 0; i < ref.data.size(); ++i) {
        dot += ref.data[i] * cand.data[i];
    }
    return std::clamp(dot / (nr * nc), -1.0, 1.0);
}

SpreadStats embedding_spread(const std::vector<std::vector<Tensor>>& groups) {
    if (groups.empty()) {
        throw DataError("embedding_spread: no groups");
    }
    std::size_t dim = 0;
    for (const auto& g : groups) {
        if (g.empty()) {
            throw DataError("embedding_spread: empty group");
        }
        for (const Tensor& e : g) {
            if (dim == 0) {
                dim = e.data.size();
            }
            if (e.data.size() != dim || dim == 0) {
                throw ShapeError("embedding_spread: inconsistent embedding dims");
            }
        }
    }
    std::vector<std::vector<double>> centroids;
    double intra = 0.0;
    for (const auto& g : groups) {
        std::vector<double> c(dim, 0.0);
        for (const Tensor& e : g) {
            for (std::size_t i = 0; i < dim; ++i) {
                c[i] += e.data[i];
            }
        }
        for (double& v : c) {
            v /= static_cast<double>(g.size());
        }
        double msd = 0.0;
        for (const Tensor& e : g) {
            double s = 0.0;
            for (std::size_t i = 0; i < dim; ++i) {
                const double d = e.data[i] - c[i];
                s += d * d;
            }
            msd += s;
        }
        intra += msd / static_cast<double>(g.size());
        centroids.push_back(std::move(c));
    }
    intra /= static_cast<double>(groups.size());

    std::vector<double> global(dim, 0.0);
    for (const auto& c : centroids) {
        for (std::size_t i = 0; i < dim; ++i) {
            global[i] += c[i];
        }
    }
    for (double& v : global) {
        v /= static_cast<double>(centroids.size());
    }
    double inter = 0.0;
    for (const auto& c : centroids) {
        double s = 0.0;
        for (std::size_t i = 0; i < dim; ++i) {
            const double d = c[i] - global[i];
            s += d * d;
        }
        inter += s;
    }
    inter /= static_cast<double>(centroids.size());
    return {intra, inter};
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) {
        throw ShapeError("pearson: length mismatch");
    }
    if (x.size() < 2) {
        throw DataError("pearson: need at least two points");
    }
    const double n = static_cast<double>(x.size());
    double mx = 0.0;
    double my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0;
    double sxx = 0.0;
    double syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx <= 0.0 || syy <= 0.0) {
        throw NumericError("pearson: zero variance");
    }
    return sxy / std::sqrt(sxx * syy);
}

namespace {

std::vector<double> midranks(const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        order[i] = i;
    }
    std::sort(order.begin(), order.end(), [&v](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size(), 0.0);
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) {
            ++j;
        }
        const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) {
            ranks[order[k]] = rank;
        }
        i = j + 1;
    }
    return ranks;
}

} // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) {
        throw ShapeError("spearman: length mismatch");
    }
    return pearson(midranks(x), midranks(y));
}

std::string MetricsReport::to_json() const {
    nlohmann::json j;
    j["auc"] = auc;
    j["wdr"] = wdr;
    j["tau"] = tau;
    j["per_split_auc"] = nlohmann::json::object();
    for (const auto& [name, value] : per_split_auc) {
        j["per_split_auc"][name] = value;
    }
    j["distance_curve"] = nlohmann::json::array();
    for (const auto& [ed, mean] : distance_curve) {
        j["distance_curve"].push_back({{"ed", ed}, {"mean_distance", mean}});
    }
    j["checkpoint_curve"] = nlohmann::json::array();
    for (const auto& pt : checkpoint_curve) {
        j["checkpoint_curve"].push_back({{"checkpoint", pt.checkpoint}, {"wdr", pt.wdr}, {"auc", pt.auc}});
    }
    j["variance"] = {{"intra", intra_variance}, {"inter", inter_variance}};
    return j.dump(2) + "\n";
}

std::string MetricsReport::distance_curve_csv() const {
    std::string out = "ed,mean_distance\n";
    for (const auto& [ed, mean] : distance_curve) {
        out += std::to_string(ed) + "," + fmt(mean) + "\n";
    }
    return out;
}

std::string MetricsReport::checkpoint_curve_csv() const {
    std::string out = "checkpoint,wdr,auc\n";
    for (const auto& pt : checkpoint_curve) {
        out += pt.checkpoint + "," + fmt(pt.wdr) + "," + fmt(pt.auc) + "\n";
    }
    return out;
}

std::vector<Tensor> embed_videos(const CatModel& model, const Dataset& ds,
                                 const std::vector<VideoRef>& videos, std::size_t workers) {
    std::vector<Tensor> out(videos.size());
    if (videos.empty()) {
        return out;
    }
    workers = std::max<std::size_t>(1, std::min(workers, videos.size()));
    const std::size_t k = model.config().frames;
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto run = [&](std::size_t worker) {
        try {
            for (std::size_t i = worker; i < videos.size(); i += workers) {
                const Tensor features = read_features(ds.feature_path(*videos[i].video));
                const Tensor clip = sample_segments(features, k, SampleMode::eval, nullptr);
                out[i] = model.embed(clip);
            }
        } catch (...) {
            const std::lock_guard<std::mutex> lock(failure_mutex);
            if (!failure) {
                failure = std::current_exception();
            }
        }
    };
    if (workers == 1) {
        run(0);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back(run, w);
        }
        for (auto& th : pool) {
            th.join();
        }
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
    return out;
}

std::vector<PairDistance> compute_pair_distances(const CatModel& model, const Dataset& ds,
                                                 const std::vector<PairSample>& pairs,
                                                 std::size_t workers) {
    std::map<std::string, std::size_t> slot_of;
    std::vector<VideoRef> unique;
    for (const PairSample& p : pairs) {
        for (const VideoRef& side : {p.a, p.b}) {
            if (slot_of.emplace(side.video->video_id, unique.size()).second) {
                unique.push_back(side);
            }
        }
    }
    const std::vector<Tensor> embeddings = embed_videos(model, ds, unique, workers);
    std::vector<PairDistance> out;
    out.reserve(pairs.size());
    for (const PairSample& p : pairs) {
        PairDistance pd;
        pd.pair = p;
        pd.d = pair_distance(embeddings[slot_of.at(p.a.video->video_id)],
                             embeddings[slot_of.at(p.b.video->video_id)]);
        out.push_back(pd);
    }
    return out;
}

void export_embeddings(const std::string& path, const std::vector<Tensor>& embeddings) {
    if (embeddings.empty()) {
        throw DataError("export_embeddings: nothing to write");
    }
    const std::size_t dim = embeddings.front().data.size();
    Tensor rows({embeddings.size(), dim});
    for (std::size_t i = 0; i < embeddings.size(); ++i) {
        if (embeddings[i].data.size() != dim) {
            throw ShapeError("export_embeddings: inconsistent embedding dims");
        }
        for (std::size_t j = 0; j < dim; ++j) {
            rows(i, j) = embeddings[i].data[j];
        }
    }
    write_features(path, rows);
}

} // namespace procver
