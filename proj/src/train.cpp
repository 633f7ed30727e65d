#include "dfc/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "dfc/error.hpp"
#include "dfc/parallel.hpp"

namespace dfc {

namespace {

// Encoder work is split into fixed micro-batches so gradient sums do not
// depend on the worker count.
constexpr int kMicroBatch = 8;
constexpr std::size_t kEmbedChunk = 64;

double squared_distance(const RowMatrix& a, Eigen::Index i, const RowMatrix& b, Eigen::Index j) {
  double s = 0.0;
  for (Eigen::Index c = 0; c < a.cols(); ++c) {
    const double d = a(i, c) - b(j, c);
    s += d * d;
  }
  return s;
}

struct Prepared {
  ResampledSet mm;
  ResampledSet normalized;
};

Prepared prepare(const FiberSet& fibers, std::size_t n_points, const Normalization* norm,
                 Normalization* fitted = nullptr) {
  Prepared out;
  out.mm = ResampledSet::from_fibers(fibers, n_points);
  const Normalization use = norm ? *norm : fit_normalization(out.mm);
  if (fitted) *fitted = use;
  out.normalized = ResampledSet(n_points);
  for (std::size_t i = 0; i < out.mm.size(); ++i) out.normalized.push_back(normalize(out.mm[i], use));
  return out;
}

RowMatrix embed_prepared(const nn::Encoder& encoder, const nn::ParamStore& params, const ResampledSet& normalized,
                         unsigned workers) {
  const std::size_t n = normalized.size();
  const std::size_t in = encoder.input_size();
  RowMatrix z(static_cast<Eigen::Index>(n), encoder.embedding_dim());
  const std::size_t chunks = (n + kEmbedChunk - 1) / kEmbedChunk;
  parallel_for(chunks, workers, [&](std::size_t c) {
    const std::size_t begin = c * kEmbedChunk;
    const std::size_t count = std::min(kEmbedChunk, n - begin);
    std::vector<double> inputs(count * in);
    for (std::size_t i = 0; i < count; ++i)
      FiberMap::fill(normalized[begin + i], std::span(inputs).subspan(i * in, in));
    z.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(count)) =
        encoder.forward(inputs, static_cast<int>(count), params);
  });
  return z;
}

nn::EncoderConfig encoder_config_for(int n_points) {
  nn::EncoderConfig cfg;
  cfg.input_size = 2 * n_points;
  return cfg;
}

AtlasHyperparameters hyper_from(const TrainConfig& c) {
  AtlasHyperparameters h;
  h.k = c.k;
  h.n_points = c.n_points;
  h.h = c.h;
  h.h_effective = c.effective_h();
  h.lambda = c.lambda;
  h.tap_fraction = c.tap_fraction;
  h.anatomy = c.anatomy;
  h.outlier_removal = c.outlier_removal;
  h.seed = c.seed;
  return h;
}

/// Draws training batches: fibers from a reshuffled permutation, optional
/// random flips, and distinct in-batch pairs labelled with their MDF.
class BatchSampler {
 public:
  BatchSampler(const Prepared& data, const TrainConfig& config, std::size_t input_size, std::uint64_t seed)
      : data_(data), config_(config), input_size_(input_size), rng_(seed), order_(data.mm.size()) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    cursor_ = order_.size();
  }

  Batch next(int n_pairs, std::vector<std::size_t>& members) {
    const int size = static_cast<int>(std::min<std::size_t>(config_.batch_fibers, order_.size()));
    Batch batch;
    batch.size = size;
    batch.inputs.resize(static_cast<std::size_t>(size) * input_size_);
    members.resize(static_cast<std::size_t>(size));
    std::bernoulli_distribution coin(0.5);
    for (int b = 0; b < size; ++b) {
      if (cursor_ == order_.size()) {
        std::shuffle(order_.begin(), order_.end(), rng_);
        cursor_ = 0;
      }
      const std::size_t f = order_[cursor_++];
      members[static_cast<std::size_t>(b)] = f;
      const auto out = std::span(batch.inputs).subspan(static_cast<std::size_t>(b) * input_size_, input_size_);
      if (config_.flip_augment && coin(rng_)) {
        const Points reversed = flip(data_.normalized[f]);
        FiberMap::fill(reversed, out);
      } else {
        FiberMap::fill(data_.normalized[f], out);
      }
    }
    std::uniform_int_distribution<int> first(0, size - 1);
    std::uniform_int_distribution<int> second(0, size - 2);
    for (int p = 0; p < n_pairs; ++p) {
      const int a = first(rng_);
      int b = second(rng_);
      if (b >= a) ++b;
      batch.pairs.emplace_back(a, b);
      batch.targets.push_back(mdf(data_.mm[members[static_cast<std::size_t>(a)]],
                                  data_.mm[members[static_cast<std::size_t>(b)]]));
    }
    return batch;
  }

 private:
  const Prepared& data_;
  const TrainConfig& config_;
  std::size_t input_size_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

void check_finite(const BatchLoss& loss, const char* stage, int iteration) {
  if (!std::isfinite(loss.total))
    throw NumericError(std::string("non-finite loss in ") + stage + " at iteration " + std::to_string(iteration));
}

RowMatrix centroid_matrix(const nn::Param& p) {
  const auto k = static_cast<Eigen::Index>(p.shape.at(0));
  const auto d = static_cast<Eigen::Index>(p.shape.at(1));
  return Eigen::Map<const RowMatrix>(p.value.data(), k, d);
}

std::vector<std::size_t> cluster_sizes(const std::vector<int>& labels, int k) {
  std::vector<std::size_t> sizes(static_cast<std::size_t>(k), 0);
  for (int l : labels) ++sizes[static_cast<std::size_t>(l)];
  return sizes;
}

}  // namespace

// ---- clustering layer ------------------------------------------------------

SoftAssignment soft_assign(const RowMatrix& z, const RowMatrix& mu, const RowMatrix* dice) {
  if (z.cols() != mu.cols()) throw ValidationError("soft_assign: embedding and centroid dimensions differ");
  if (mu.rows() < 1) throw ValidationError("soft_assign: no centroids");
  if (dice && (dice->rows() != z.rows() || dice->cols() != mu.rows()))
    throw ValidationError("soft_assign: Dice matrix must be N x k");
  const Eigen::Index n = z.rows();
  const Eigen::Index k = mu.rows();
  SoftAssignment out;
  out.q.resize(n, k);
  out.q_max.resize(static_cast<std::size_t>(n));
  out.argmax.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    double total = 0.0;
    for (Eigen::Index j = 0; j < k; ++j) {
      const double s = dice ? 1.0 - (*dice)(i, j) : 1.0;
      const double w = 1.0 / (1.0 + squared_distance(z, i, mu, j) * s);
      out.q(i, j) = w;
      total += w;
    }
    int best = 0;
    for (Eigen::Index j = 0; j < k; ++j) {
      out.q(i, j) /= total;
      if (out.q(i, j) > out.q(i, best)) best = static_cast<int>(j);
    }
    out.argmax[static_cast<std::size_t>(i)] = best;
    out.q_max[static_cast<std::size_t>(i)] = out.q(i, best);
  }
  return out;
}

RowMatrix target_distribution(const RowMatrix& q) {
  const Eigen::VectorXd f = q.colwise().sum().transpose();
  RowMatrix p(q.rows(), q.cols());
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    double total = 0.0;
    for (Eigen::Index j = 0; j < q.cols(); ++j) {
      p(i, j) = q(i, j) == 0.0 ? 0.0 : q(i, j) * q(i, j) / f(j);
      total += p(i, j);
    }
    for (Eigen::Index j = 0; j < q.cols(); ++j) p(i, j) /= total;
  }
  return p;
}

double kl_loss(const RowMatrix& p, const RowMatrix& q) {
  if (p.rows() != q.rows() || p.cols() != q.cols()) throw ValidationError("kl_loss: shape mismatch");
  double s = 0.0;
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    for (Eigen::Index j = 0; j < p.cols(); ++j)
      if (p(i, j) > 0.0) s += p(i, j) * std::log(p(i, j) / q(i, j));
  return s;
}

KMeansResult kmeans(const RowMatrix& x, int k, std::uint64_t seed, const KMeansOptions& options) {
  const Eigen::Index n = x.rows();
  if (k < 1) throw ValidationError("kmeans: k must be at least 1");
  if (k > n) throw ValidationError("kmeans: k = " + std::to_string(k) + " exceeds the point count " +
                                   std::to_string(n));
  if (options.n_init < 1 || options.max_iter < 1) throw ValidationError("kmeans: bad options");

  std::mt19937_64 seeder(seed);
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();

  for (int run = 0; run < options.n_init; ++run) {
    std::mt19937_64 rng(seeder());
    RowMatrix c(k, x.cols());

    // Greedy k-means++: each new centre is the best of several D^2 draws.
    const int trials = 2 + static_cast<int>(std::log(static_cast<double>(k)));
    std::vector<double> d2(static_cast<std::size_t>(n));
    std::vector<double> candidate_d2(static_cast<std::size_t>(n)), best_d2(static_cast<std::size_t>(n));
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    c.row(0) = x.row(pick(rng));
    for (Eigen::Index i = 0; i < n; ++i) d2[static_cast<std::size_t>(i)] = squared_distance(x, i, c, 0);
    for (int j = 1; j < k; ++j) {
      const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
      double best_potential = std::numeric_limits<double>::infinity();
      Eigen::Index best_index = 0;
      for (int t = 0; t < trials; ++t) {
        Eigen::Index chosen = n - 1;
        if (total > 0.0) {
          const double r = std::uniform_real_distribution<double>(0.0, total)(rng);
          double acc = 0.0;
          for (Eigen::Index i = 0; i < n; ++i) {
            acc += d2[static_cast<std::size_t>(i)];
            if (acc > r) {
              chosen = i;
              break;
            }
          }
        } else {
          chosen = pick(rng);
        }
        double potential = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
          const double d = std::min(d2[static_cast<std::size_t>(i)], (x.row(i) - x.row(chosen)).squaredNorm());
          candidate_d2[static_cast<std::size_t>(i)] = d;
          potential += d;
        }
        if (potential < best_potential) {
          best_potential = potential;
          best_index = chosen;
          best_d2.swap(candidate_d2);
        }
      }
      c.row(j) = x.row(best_index);
      d2.swap(best_d2);
    }

    // Lloyd
    std::vector<int> labels(static_cast<std::size_t>(n), 0);
    for (int iter = 0; iter < options.max_iter; ++iter) {
      for (Eigen::Index i = 0; i < n; ++i) {
        int arg = 0;
        double bd = squared_distance(x, i, c, 0);
        for (int j = 1; j < k; ++j) {
          const double d = squared_distance(x, i, c, j);
          if (d < bd) {
            bd = d;
            arg = j;
          }
        }
        labels[static_cast<std::size_t>(i)] = arg;
      }
      RowMatrix sums = RowMatrix::Zero(k, x.cols());
      std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
      for (Eigen::Index i = 0; i < n; ++i) {
        sums.row(labels[static_cast<std::size_t>(i)]) += x.row(i);
        ++counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
      }
      double moved = 0.0;
      for (int j = 0; j < k; ++j) {
        if (counts[static_cast<std::size_t>(j)] == 0) continue;  // empty cluster keeps its centroid
        const Eigen::RowVectorXd next = sums.row(j) / static_cast<double>(counts[static_cast<std::size_t>(j)]);
        moved = std::max(moved, (next - c.row(j)).norm());
        c.row(j) = next;
      }
      if (moved < options.tol) break;
    }

    double inertia = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      int arg = 0;
      double bd = squared_distance(x, i, c, 0);
      for (int j = 1; j < k; ++j) {
        const double d = squared_distance(x, i, c, j);
        if (d < bd) {
          bd = d;
          arg = j;
        }
      }
      labels[static_cast<std::size_t>(i)] = arg;
      inertia += bd;
    }
    if (inertia < best.inertia) {
      best.centroids = c;
      best.labels = labels;
      best.inertia = inertia;
    }
  }
  return best;
}

// ---- configuration ---------------------------------------------------------

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ValidationError("config: " + m); };
  if (k < 2) fail("k must be at least 2");
  if (!(lambda >= 0.0)) fail("lambda must be >= 0");
  if (!(h >= 0.0 && h < 1.0)) fail("h must lie in [0, 1)");
  if (n_points < 2) fail("n_points must be at least 2");
  for (const Schedule* s : {&pretrain, &cluster}) {
    if (s->iterations < 0 || s->decay_iterations < 0) fail("iteration counts must be >= 0");
    if (!(s->lr > 0.0) || !(s->decay_lr > 0.0)) fail("learning rates must be positive");
  }
  if (batch_fibers < 2) fail("batch_fibers must be at least 2");
  if (pretrain_pairs < 1 || cluster_pairs < 1) fail("pair counts must be positive");
  if (refresh_period < 1) fail("refresh_period must be positive");
  if (!(centroid_lr_scale > 0.0) || !std::isfinite(centroid_lr_scale)) fail("centroid_lr_scale must be positive");
  if (!(tap_fraction > 0.0 && tap_fraction <= 1.0)) fail("tap_fraction must lie in (0, 1]");
  if (!(min_length >= 0.0)) fail("min_length must be >= 0");
  if (kmeans_restarts < 1) fail("kmeans_restarts must be positive");
}

// ---- batch loss ------------------------------------------------------------

BatchLoss batch_loss(const nn::Encoder& encoder, const nn::ParamStore& params, const Batch& batch, double lambda,
                     nn::Gradients* grads, unsigned workers, BatchWorkspace* workspace) {
  const int n = batch.size;
  const std::size_t in = encoder.input_size();
  const int dim = encoder.embedding_dim();
  if (batch.inputs.size() != static_cast<std::size_t>(n) * in)
    throw ValidationError("batch_loss: input size mismatch");
  if (batch.pairs.size() != batch.targets.size()) throw ValidationError("batch_loss: pairs and targets differ");

  const int n_micro = (n + kMicroBatch - 1) / kMicroBatch;
  BatchWorkspace local;
  BatchWorkspace& ws = workspace ? *workspace : local;
  ws.caches.resize(static_cast<std::size_t>(n_micro));
  auto& caches = ws.caches;
  RowMatrix z(n, dim);
  parallel_for(static_cast<std::size_t>(n_micro), workers, [&](std::size_t m) {
    const int r0 = static_cast<int>(m) * kMicroBatch;
    const int count = std::min(kMicroBatch, n - r0);
    z.middleRows(r0, count) =
        encoder.forward(std::span(batch.inputs).subspan(static_cast<std::size_t>(r0) * in, count * in), count,
                        params, &caches[m]);
  });

  BatchLoss loss;
  for (const auto& c : caches) loss.pattern = loss.pattern * 0x100000001b3ULL ^ nn::Encoder::activation_pattern(c);

  RowMatrix dz = RowMatrix::Zero(n, dim);
  const double n_pairs = static_cast<double>(batch.pairs.size());
  for (std::size_t p = 0; p < batch.pairs.size(); ++p) {
    const auto [a, b] = batch.pairs[p];
    const Eigen::RowVectorXd diff = z.row(a) - z.row(b);
    const double d = diff.norm();
    const double r = d - batch.targets[p];
    loss.lp += r * r;
    if (grads && d > 0.0) {
      const Eigen::RowVectorXd g = (2.0 * r / (n_pairs * d)) * diff;
      dz.row(a) += g;
      dz.row(b) -= g;
    }
  }
  if (n_pairs > 0) loss.lp /= n_pairs;

  const bool clustering = batch.p.rows() > 0;
  std::size_t mu_index = 0;
  if (clustering) {
    if (!params.contains("centroids")) throw ValidationError("batch_loss: targets given without centroids");
    mu_index = params.index_of("centroids");
    const RowMatrix mu = centroid_matrix(params[mu_index]);
    const Eigen::Index k = mu.rows();
    if (batch.p.rows() != n || batch.p.cols() != k) throw ValidationError("batch_loss: target shape mismatch");
    const bool weighted = batch.dice.rows() > 0;
    if (weighted && (batch.dice.rows() != n || batch.dice.cols() != k))
      throw ValidationError("batch_loss: Dice shape mismatch");
    const SoftAssignment sa = soft_assign(z, mu, weighted ? &batch.dice : nullptr);
    loss.lc = kl_loss(batch.p, sa.q) / n;

    if (grads) {
      double* dmu = (*grads)[mu_index].data();
      for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < k; ++j) {
          const double s = weighted ? 1.0 - batch.dice(i, j) : 1.0;
          const double w = 1.0 / (1.0 + squared_distance(z, i, mu, j) * s);
          const double coef = lambda / n * 2.0 * s * w * (batch.p(i, j) - sa.q(i, j));
          for (int c = 0; c < dim; ++c) {
            const double g = coef * (z(i, c) - mu(j, c));
            dz(i, c) += g;
            dmu[j * dim + c] -= g;
          }
        }
      }
    }
  }
  loss.total = loss.lp + lambda * loss.lc;

  if (grads) {
    auto& partial = ws.partial;
    if (partial.size() != static_cast<std::size_t>(n_micro) || partial.front().size() != params.size())
      partial.assign(static_cast<std::size_t>(n_micro), nn::Gradients(params));
    else
      for (auto& g : partial) g.zero();
    parallel_for(static_cast<std::size_t>(n_micro), workers, [&](std::size_t m) {
      const int r0 = static_cast<int>(m) * kMicroBatch;
      const int count = std::min(kMicroBatch, n - r0);
      encoder.backward(caches[m], dz.middleRows(r0, count), params, partial[m]);
    });
    for (const auto& g : partial) grads->accumulate(g);
  }
  return loss;
}

RowMatrix dice_matrix(const std::vector<RegionSet>& regions, const std::vector<RegionSet>& taps) {
  RowMatrix d(static_cast<Eigen::Index>(regions.size()), static_cast<Eigen::Index>(taps.size()));
  for (std::size_t i = 0; i < regions.size(); ++i)
    for (std::size_t j = 0; j < taps.size(); ++j)
      d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = dice(regions[i], taps[j]);
  return d;
}

// ---- training --------------------------------------------------------------

PretrainResult pretrain(const FiberSet& fibers, const TrainConfig& config, const ProgressFn& progress) {
  config.validate();
  if (fibers.size() < 2) throw ValidationError("pretraining needs at least 2 fibers");

  PretrainResult result;
  Atlas& atlas = result.atlas;
  atlas.stage = AtlasStage::pretrained;
  atlas.encoder_config = encoder_config_for(config.n_points);
  atlas.hyper = hyper_from(config);

  const Prepared data = prepare(fibers, static_cast<std::size_t>(config.n_points), nullptr, &atlas.normalization);
  const nn::Encoder encoder(atlas.encoder_config);
  nn::ParamStore params = nn::init_encoder_params(atlas.encoder_config, config.seed);
  nn::Gradients grads(params);
  BatchSampler sampler(data, config, encoder.input_size(), config.seed ^ 0x70726574726169ULL);
  std::vector<std::size_t> members;
  BatchWorkspace workspace;

  for (int t = 0; t < config.pretrain.total(); ++t) {
    const Batch batch = sampler.next(config.pretrain_pairs, members);
    grads.zero();
    const BatchLoss loss = batch_loss(encoder, params, batch, 0.0, &grads, config.workers, &workspace);
    check_finite(loss, "pretraining", t);
    nn::adamax_step(params, grads, config.pretrain.lr_at(t));
    const LossRecord rec{"pretrain", t, loss.lp, 0.0, loss.lp};
    result.history.push_back(rec);
    if (progress) progress(rec);
  }
  atlas.encoder = to_named_arrays(params);
  atlas.validate();
  return result;
}

ClusterTrainResult cluster_train(const FiberSet& fibers, const Atlas& pretrained, const TrainConfig& config,
                                 const LabelVolume* volume, const ProgressFn& progress) {
  config.validate();
  if (config.anatomy && !volume) throw ValidationError("anatomical weighting needs a label volume");
  if (pretrained.hyper.n_points != config.n_points)
    throw ValidationError("config n_points differs from the pretrained atlas");
  if (fibers.size() < static_cast<std::size_t>(config.k))
    throw ValidationError("clustering needs at least k fibers");

  ClusterTrainResult result;
  Atlas& atlas = result.atlas;
  atlas.stage = AtlasStage::clustered;
  atlas.encoder_config = pretrained.encoder_config;
  atlas.normalization = pretrained.normalization;
  atlas.hyper = hyper_from(config);

  const Prepared data = prepare(fibers, static_cast<std::size_t>(config.n_points), &atlas.normalization);
  const std::size_t n = data.mm.size();
  const nn::Encoder encoder(atlas.encoder_config);
  nn::ParamStore params = encoder_params(pretrained);
  const int k = config.k;
  const int dim = encoder.embedding_dim();

  std::vector<RegionSet> regions;
  if (volume) {
    regions.reserve(n);
    for (const Fiber& f : fibers) regions.push_back(fiber_regions(f.points, *volume));
  }

  RowMatrix z = embed_prepared(encoder, params, data.normalized, config.workers);
  result.initial = kmeans(z, k, config.seed ^ 0x6b6d65616e73ULL,
                          {.max_iter = 300, .tol = 1e-6, .n_init = config.kmeans_restarts});
  const std::size_t mu_index = params.size();
  params.add("centroids", {static_cast<std::size_t>(k), static_cast<std::size_t>(dim)},
             std::vector<double>(result.initial.centroids.data(),
                                 result.initial.centroids.data() + result.initial.centroids.size()))
      .lr_scale = config.centroid_lr_scale;
  nn::Gradients grads(params);

  std::vector<int> labels = result.initial.labels;
  RowMatrix dice;
  RowMatrix p;
  auto refresh = [&](int t) {
    if (t > 0) {
      z = embed_prepared(encoder, params, data.normalized, config.workers);
      labels = soft_assign(z, centroid_matrix(params[mu_index]), config.anatomy ? &dice : nullptr).argmax;
    }
    if (config.anatomy) dice = dice_matrix(regions, cluster_taps(regions, labels, k, config.tap_fraction));
    const SoftAssignment sa = soft_assign(z, centroid_matrix(params[mu_index]), config.anatomy ? &dice : nullptr);
    p = target_distribution(sa.q);
    RefreshRecord rec;
    rec.iteration = t;
    rec.kl = kl_loss(p, sa.q) / static_cast<double>(n);
    rec.mean_q_max = std::accumulate(sa.q_max.begin(), sa.q_max.end(), 0.0) / static_cast<double>(n);
    rec.cluster_sizes = cluster_sizes(sa.argmax, k);
    result.refreshes.push_back(std::move(rec));
  };

  BatchSampler sampler(data, config, encoder.input_size(), config.seed ^ 0x636c7573746572ULL);
  std::vector<std::size_t> members;
  BatchWorkspace workspace;
  for (int t = 0; t < config.cluster.total(); ++t) {
    if (t % config.refresh_period == 0) refresh(t);
    Batch batch = sampler.next(config.cluster_pairs, members);
    batch.p.resize(batch.size, k);
    if (config.anatomy) batch.dice.resize(batch.size, k);
    for (int b = 0; b < batch.size; ++b) {
      const auto f = static_cast<Eigen::Index>(members[static_cast<std::size_t>(b)]);
      batch.p.row(b) = p.row(f);
      if (config.anatomy) batch.dice.row(b) = dice.row(f);
    }
    grads.zero();
    const BatchLoss loss = batch_loss(encoder, params, batch, config.lambda, &grads, config.workers, &workspace);
    check_finite(loss, "clustering", t);
    nn::adamax_step(params, grads, config.cluster.lr_at(t));
    const LossRecord rec{"cluster", t, loss.lp, loss.lc, loss.total};
    result.history.push_back(rec);
    if (progress) progress(rec);
  }

  // Final profiles from the final assignment.
  if (config.cluster.total() == 0) refresh(0);
  z = embed_prepared(encoder, params, data.normalized, config.workers);
  labels = soft_assign(z, centroid_matrix(params[mu_index]), config.anatomy ? &dice : nullptr).argmax;
  const auto sizes = cluster_sizes(labels, k);
  for (int j = 0; j < k; ++j)
    if (sizes[static_cast<std::size_t>(j)] == 0) result.empty_clusters.push_back(static_cast<std::size_t>(j));
  atlas.tap = volume ? cluster_taps(regions, labels, k, config.tap_fraction)
                     : std::vector<RegionSet>(static_cast<std::size_t>(k));

  auto arrays = to_named_arrays(params);
  atlas.centroids = std::move(arrays.back());
  arrays.pop_back();
  atlas.encoder = std::move(arrays);
  atlas.validate();
  return result;
}

RowMatrix embed(const FiberSet& fibers, const Atlas& atlas, unsigned workers) {
  const Prepared data = prepare(fibers, static_cast<std::size_t>(atlas.hyper.n_points), &atlas.normalization);
  const nn::Encoder encoder(atlas.encoder_config);
  return embed_prepared(encoder, encoder_params(atlas), data.normalized, workers);
}

std::vector<bool> reject_below(const std::vector<double>& q_max, double h) {
  std::vector<bool> out(q_max.size());
  for (std::size_t i = 0; i < q_max.size(); ++i) out[i] = q_max[i] < h;
  return out;
}

Inference infer(const FiberSet& fibers, const Atlas& atlas, const LabelVolume* volume, unsigned workers) {
  if (atlas.stage != AtlasStage::clustered) throw ValidationError("inference needs a clustered atlas");
  if (atlas.hyper.anatomy && !volume) throw ValidationError("this atlas uses anatomical weighting; a label volume is required");

  Inference out;
  const Prepared data = prepare(fibers, static_cast<std::size_t>(atlas.hyper.n_points), &atlas.normalization);
  const nn::Encoder encoder(atlas.encoder_config);
  out.embeddings = embed_prepared(encoder, encoder_params(atlas), data.normalized, workers);

  const auto k = static_cast<Eigen::Index>(atlas.centroids.shape[0]);
  const auto d = static_cast<Eigen::Index>(atlas.centroids.shape[1]);
  RowMatrix mu(k, d);
  for (Eigen::Index i = 0; i < mu.size(); ++i) mu.data()[i] = atlas.centroids.data[static_cast<std::size_t>(i)];

  if (volume) {
    out.regions.reserve(fibers.size());
    for (const Fiber& f : fibers) out.regions.push_back(fiber_regions(f.points, *volume));
  }
  if (atlas.hyper.anatomy) {
    const RowMatrix dice = dice_matrix(out.regions, atlas.tap);
    out.assignment = soft_assign(out.embeddings, mu, &dice);
  } else {
    out.assignment = soft_assign(out.embeddings, mu);
  }
  out.outlier = atlas.hyper.outlier_removal ? reject_below(out.assignment.q_max, atlas.hyper.h_effective)
                                            : std::vector<bool>(fibers.size(), false);
  return out;
}

}  // namespace dfc
