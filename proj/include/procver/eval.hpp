#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "procver/dataset.hpp"
#include "procver/model.hpp"
#include "procver/tensor.hpp"

namespace procver {

// One verification pair scored by the model: Euclidean distance between the
// two l2-normalized embeddings, so d always lies in [0, 2].
struct PairDistance {
    PairSample pair;
    double d = 0.0;
};

enum class Verdict { consistent, inconsistent };

double pair_distance(const Tensor& ea, const Tensor& eb);

// Boundary-inclusive threshold decision: consistent iff d <= tau.
Verdict verify(double d, double tau);

// Probability that a random positive pair sits at a strictly smaller distance
// than a random negative pair, ties counted half. The rank-based
// implementation matches exhaustive pair counting exactly.
double auc(const std::vector<PairDistance>& distances);

// Weighted distance ratio: mean over negatives of d/ed, divided by the mean
// positive distance. Scale-invariant.
double wdr(const std::vector<PairDistance>& distances);

// Negative-pair taxonomy by step-sequence shape: a pure reordering (equal
// step multisets) is alter-order; any change of the step multiset, even when
// combined with reordering, is alter-number.
enum class NegativeKind { alter_order, alter_number };
NegativeKind classify_negative(const std::vector<StepToken>& a, const std::vector<StepToken>& b);

// AUC restricted to each negative split; positives are shared by both.
std::map<std::string, double> split_auc(const std::vector<PairDistance>& distances);

// Mean embedding distance per step-edit-distance bucket (bucket 0 holds the
// positives).
std::map<std::size_t, double> distance_vs_levenshtein(const std::vector<PairDistance>& distances);

// Equal-error-rate threshold: midpoint of the tau interval minimizing
// |FPR - FNR| under the boundary-inclusive decision rule.
double select_tau(const std::vector<PairDistance>& distances);

// Cosine similarity in embedding space, in [-1, 1].
double score(const Tensor& ref, const Tensor& cand);

struct SpreadStats {
    double intra = 0.0; // mean over groups of mean squared distance to the group centroid
    double inter = 0.0; // mean squared distance of group centroids to their global centroid
};

SpreadStats embedding_spread(const std::vector<std::vector<Tensor>>& groups);

double pearson(const std::vector<double>& x, const std::vector<double>& y);
// Spearman rank correlation with midranks for ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

struct CheckpointCurvePoint {
    std::string checkpoint;
    double wdr = 0.0;
    double auc = 0.0;
};

struct MetricsReport {
    double auc = 0.0;
    double wdr = 0.0;
    double tau = 0.0;
    std::map<std::string, double> per_split_auc;
    std::map<std::size_t, double> distance_curve; // ed -> mean distance
    std::vector<CheckpointCurvePoint> checkpoint_curve;
    double intra_variance = 0.0;
    double inter_variance = 0.0;

    std::string to_json() const; // canonical (sorted keys), byte-stable
    std::string distance_curve_csv() const;   // ed,mean_distance
    std::string checkpoint_curve_csv() const; // checkpoint,wdr,auc
};

// Embeds every video with eval-mode segment sampling against the frozen
// model. Work is sharded over `workers` threads; results are slotted by index
// so the output is identical for any worker count.
std::vector<Tensor> embed_videos(const CatModel& model, const Dataset& ds,
                                 const std::vector<VideoRef>& videos, std::size_t workers = 1);

// Embeds each pair's videos (deduplicated) and scores all pairs.
std::vector<PairDistance> compute_pair_distances(const CatModel& model, const Dataset& ds,
                                                 const std::vector<PairSample>& pairs,
                                                 std::size_t workers = 1);

// Writes one embedding per video as a single-"frame" feature file row block.
void export_embeddings(const std::string& path, const std::vector<Tensor>& embeddings);

} // namespace procver
