#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dfc/anatomy.hpp"
#include "dfc/atlas.hpp"
#include "dfc/geometry.hpp"
#include "dfc/nn.hpp"
#include "dfc/tract_io.hpp"

namespace dfc {

// ---- clustering layer ------------------------------------------------------

struct SoftAssignment {
  RowMatrix q;                  // N x k, rows sum to 1
  std::vector<double> q_max;    // per-fiber max_j q_ij
  std::vector<int> argmax;      // per-fiber cluster id
};

/// Student-t soft assignment. Without `dice`: q_ij ∝ 1/(1 + |z_i - mu_j|^2).
/// With `dice` (N x k): q_ij ∝ 1/(1 + |z_i - mu_j|^2 (1 - D_ij)).
SoftAssignment soft_assign(const RowMatrix& z, const RowMatrix& mu, const RowMatrix* dice = nullptr);

/// p_ij = (q_ij^2 / f_j) / sum_j' (q_ij'^2 / f_j'), with f_j = sum_i q_ij.
/// Entries with q_ij = 0 contribute 0, so empty clusters are allowed.
RowMatrix target_distribution(const RowMatrix& q);

/// sum_i sum_j p_ij log(p_ij / q_ij), with 0 log 0 = 0.
double kl_loss(const RowMatrix& p, const RowMatrix& q);

struct KMeansOptions {
  int max_iter = 300;
  double tol = 1e-6;  // stop when no centroid moves farther than this
  int n_init = 10;    // k-means++ restarts; the lowest inertia wins
};

struct KMeansResult {
  RowMatrix centroids;
  std::vector<int> labels;
  double inertia = 0.0;
};

/// Lloyd iterations from greedy k-means++ seeds (2 + ln k candidate draws per
/// centre). Deterministic for a given seed.
KMeansResult kmeans(const RowMatrix& x, int k, std::uint64_t seed, const KMeansOptions& options = {});

// ---- configuration ---------------------------------------------------------

/// Two learning-rate phases run back to back.
struct Schedule {
  int iterations = 3000;
  double lr = 1e-3;
  int decay_iterations = 500;
  double decay_lr = 1e-4;

  int total() const { return iterations + decay_iterations; }
  double lr_at(int iteration) const { return iteration < iterations ? lr : decay_lr; }
};

struct TrainConfig {
  int k = 20;
  double lambda = 0.1;
  double h = 0.015;
  /// Scale h by 800/k at inference so the threshold keeps its ratio to 1/k.
  bool rescale_h = true;
  int n_points = 14;
  Schedule pretrain;
  Schedule cluster;
  int batch_fibers = 32;
  int pretrain_pairs = 256;
  int cluster_pairs = 128;
  int refresh_period = 200;
  /// Centroid learning rate relative to the encoder's. Adamax moves every
  /// coordinate by about lr per step; centroids live on the embedding's mm
  /// scale, far larger than the weights.
  double centroid_lr_scale = 300.0;
  bool anatomy = true;
  bool outlier_removal = true;
  double tap_fraction = kTapFraction;
  bool flip_augment = true;
  double min_length = 40.0;
  int kmeans_restarts = 10;
  std::uint64_t seed = 0;
  unsigned workers = 1;

  double effective_h() const { return rescale_h ? h * 800.0 / k : h; }
  /// Throws ValidationError on out-of-range values.
  void validate() const;
};

inline constexpr double kReferenceClusterCount = 800.0;

// ---- training --------------------------------------------------------------

struct LossRecord {
  std::string stage;  // "pretrain" or "cluster"
  int iteration = 0;
  double lp = 0.0;
  double lc = 0.0;
  double total = 0.0;
};

using ProgressFn = std::function<void(const LossRecord&)>;

struct PretrainResult {
  Atlas atlas;  // stage = pretrained
  std::vector<LossRecord> history;
};

struct RefreshRecord {
  int iteration = 0;
  double kl = 0.0;       // mean over fibers of KL(p_i || q_i) at the refresh
  double mean_q_max = 0.0;
  std::vector<std::size_t> cluster_sizes;
};

struct ClusterTrainResult {
  Atlas atlas;  // stage = clustered
  std::vector<LossRecord> history;
  std::vector<RefreshRecord> refreshes;
  KMeansResult initial;
  std::vector<std::size_t> empty_clusters;  // at the final refresh
};

/// Siamese distance-regression pretraining of the encoder.
PretrainResult pretrain(const FiberSet& fibers, const TrainConfig& config, const ProgressFn& progress = {});

/// k-means initialization then joint training of encoder and centroids.
/// `volume` is required when config.anatomy is set.
ClusterTrainResult cluster_train(const FiberSet& fibers, const Atlas& pretrained, const TrainConfig& config,
                                 const LabelVolume* volume, const ProgressFn& progress = {});

struct Inference {
  RowMatrix embeddings;
  SoftAssignment assignment;
  std::vector<bool> outlier;  // q_max < h_effective (all false when removal is off)
  std::vector<RegionSet> regions;
};

/// Embedding of every fiber under the atlas encoder and normalization.
RowMatrix embed(const FiberSet& fibers, const Atlas& atlas, unsigned workers = 1);

/// Assignment with the atlas profiles (anatomy on) or plain Student-t
/// (anatomy off). `volume` is required when the atlas has anatomy on.
Inference infer(const FiberSet& fibers, const Atlas& atlas, const LabelVolume* volume, unsigned workers = 1);

/// Outlier flags for an explicit threshold.
std::vector<bool> reject_below(const std::vector<double>& q_max, double h);

// ---- batch losses (exposed for gradient checking) --------------------------

struct Batch {
  std::vector<double> inputs;                   // size x input_size FiberMaps
  int size = 0;
  std::vector<std::pair<int, int>> pairs;       // positions within the batch
  std::vector<double> targets;                  // MDF per pair
  RowMatrix p;                                  // size x k target rows; empty -> no L_c
  RowMatrix dice;                               // size x k; empty -> plain Student-t
};

struct BatchLoss {
  double lp = 0.0;
  double lc = 0.0;
  double total = 0.0;
  std::uint64_t pattern = 0;  // ReLU activation fingerprint of the forward pass
};

/// Buffers reused across batch_loss calls.
struct BatchWorkspace {
  std::vector<nn::Encoder::Cache> caches;
  std::vector<nn::Gradients> partial;
};

/// L = L_p + lambda L_c on one batch. L_p is the mean over pairs of
/// (|z_a - z_b| - target)^2; L_c is the mean over the batch of KL(p_i || q_i)
/// with centroids taken from the "centroids" parameter. Accumulates into
/// `grads` when non-null.
BatchLoss batch_loss(const nn::Encoder& encoder, const nn::ParamStore& params, const Batch& batch, double lambda,
                     nn::Gradients* grads, unsigned workers = 1, BatchWorkspace* workspace = nullptr);

/// Dice matrix between fiber region sets and cluster profiles.
RowMatrix dice_matrix(const std::vector<RegionSet>& regions, const std::vector<RegionSet>& taps);

}  // namespace dfc
