#include "dfc/nn.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "dfc/error.hpp"

namespace dfc::nn {

namespace {

using ConstMap = Eigen::Map<const RowMatrix>;
using Map = Eigen::Map<RowMatrix>;

std::string conv_name(std::size_t layer) { return "conv" + std::to_string(layer + 1); }

// Gathers kernel windows of an HWC batch into rows of `cols`.
void im2col(const double* input, int batch, const FeatureShape& in, const FeatureShape& out,
            const ConvSpec& spec, RowMatrix& cols) {
  const int k = spec.kernel;
  const int c = in.channels;
  cols.setZero(static_cast<Eigen::Index>(batch) * out.height * out.width,
               static_cast<Eigen::Index>(k) * k * c);
  for (int b = 0; b < batch; ++b) {
    const double* item = input + static_cast<std::size_t>(b) * in.size();
    for (int oy = 0; oy < out.height; ++oy) {
      for (int ox = 0; ox < out.width; ++ox) {
        double* row = cols.data() + (static_cast<Eigen::Index>(b * out.height + oy) * out.width + ox) * cols.cols();
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * spec.stride - spec.pad + ky;
          if (iy < 0 || iy >= in.height) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * spec.stride - spec.pad + kx;
            if (ix < 0 || ix >= in.width) continue;
            const double* src = item + (static_cast<std::size_t>(iy) * in.width + ix) * c;
            std::copy(src, src + c, row + (ky * k + kx) * c);
          }
        }
      }
    }
  }
}

// Scatter-adds window gradients back onto an HWC batch.
void col2im(const RowMatrix& dcols, int batch, const FeatureShape& in, const FeatureShape& out,
            const ConvSpec& spec, double* dinput) {
  const int k = spec.kernel;
  const int c = in.channels;
  std::fill(dinput, dinput + static_cast<std::size_t>(batch) * in.size(), 0.0);
  for (int b = 0; b < batch; ++b) {
    double* item = dinput + static_cast<std::size_t>(b) * in.size();
    for (int oy = 0; oy < out.height; ++oy) {
      for (int ox = 0; ox < out.width; ++ox) {
        const double* row =
            dcols.data() + (static_cast<Eigen::Index>(b * out.height + oy) * out.width + ox) * dcols.cols();
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * spec.stride - spec.pad + ky;
          if (iy < 0 || iy >= in.height) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * spec.stride - spec.pad + kx;
            if (ix < 0 || ix >= in.width) continue;
            double* dst = item + (static_cast<std::size_t>(iy) * in.width + ix) * c;
            const double* src = row + (ky * k + kx) * c;
            for (int ch = 0; ch < c; ++ch) dst[ch] += src[ch];
          }
        }
      }
    }
  }
}

}  // namespace

std::vector<FeatureShape> feature_shapes(const EncoderConfig& config) {
  std::vector<FeatureShape> shapes{{config.input_size, config.input_size, config.input_channels}};
  for (const ConvSpec& spec : config.convs) {
    const FeatureShape& prev = shapes.back();
    const FeatureShape next{EncoderConfig::conv_output_size(prev.height, spec),
                            EncoderConfig::conv_output_size(prev.width, spec), spec.out_channels};
    if (next.height <= 0 || next.width <= 0)
      throw ValidationError("encoder configuration collapses the feature map");
    shapes.push_back(next);
  }
  return shapes;
}

Param& ParamStore::add(std::string name, std::vector<std::size_t> shape, std::vector<double> value) {
  if (contains(name)) throw ValidationError("duplicate parameter " + name);
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  if (n != value.size()) throw ValidationError("parameter " + name + " does not match its shape");
  Param p;
  p.name = std::move(name);
  p.shape = std::move(shape);
  p.m.assign(value.size(), 0.0);
  p.u.assign(value.size(), 0.0);
  p.value = std::move(value);
  params_.push_back(std::move(p));
  return params_.back();
}

std::size_t ParamStore::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i].name == name) return i;
  throw ValidationError("unknown parameter " + name);
}

bool ParamStore::contains(const std::string& name) const {
  return std::any_of(params_.begin(), params_.end(), [&](const Param& p) { return p.name == name; });
}

std::size_t ParamStore::total_values() const {
  std::size_t n = 0;
  for (const Param& p : params_) n += p.size();
  return n;
}

Gradients::Gradients(const ParamStore& params) {
  g_.reserve(params.size());
  for (const Param& p : params) g_.emplace_back(p.size(), 0.0);
}

void Gradients::zero() {
  for (auto& g : g_) std::fill(g.begin(), g.end(), 0.0);
}

void Gradients::accumulate(const Gradients& other) {
  if (other.g_.size() != g_.size()) throw ValidationError("gradient layout mismatch");
  for (std::size_t i = 0; i < g_.size(); ++i)
    for (std::size_t j = 0; j < g_[i].size(); ++j) g_[i][j] += other.g_[i][j];
}

void Gradients::scale(double s) {
  for (auto& g : g_)
    for (double& v : g) v *= s;
}

ParamStore init_encoder_params(const EncoderConfig& config, std::uint64_t seed) {
  const auto shapes = feature_shapes(config);
  std::mt19937_64 rng(seed);
  ParamStore params;
  auto uniform = [&](std::size_t n, std::size_t fan_in) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> v(n);
    for (double& x : v) x = dist(rng);
    return v;
  };
  for (std::size_t l = 0; l < config.convs.size(); ++l) {
    const ConvSpec& spec = config.convs[l];
    const auto in_c = static_cast<std::size_t>(shapes[l].channels);
    const auto out_c = static_cast<std::size_t>(spec.out_channels);
    const auto k = static_cast<std::size_t>(spec.kernel);
    params.add(conv_name(l) + ".weight", {out_c, k, k, in_c}, uniform(out_c * k * k * in_c, k * k * in_c));
    params.add(conv_name(l) + ".bias", {out_c}, std::vector<double>(out_c, 0.0));
  }
  const std::size_t flat = shapes.back().size();
  const auto emb = static_cast<std::size_t>(config.embedding_dim);
  params.add("fc.weight", {emb, flat}, uniform(emb * flat, flat));
  params.add("fc.bias", {emb}, std::vector<double>(emb, 0.0));
  return params;
}

Encoder::Encoder(EncoderConfig config) : config_(std::move(config)), shapes_(feature_shapes(config_)) {}

RowMatrix Encoder::forward(std::span<const double> inputs, int batch, const ParamStore& params,
                           Cache* cache) const {
  if (batch < 0 || inputs.size() != static_cast<std::size_t>(batch) * input_size())
    throw ValidationError("encoder input has " + std::to_string(inputs.size()) + " values, expected " +
                          std::to_string(static_cast<std::size_t>(std::max(batch, 0)) * input_size()));
  const std::size_t n_conv = config_.convs.size();
  Cache local;
  Cache& c = cache ? *cache : local;
  c.batch = batch;
  c.cols.resize(n_conv);
  c.activations.resize(n_conv);

  const double* input = inputs.data();
  for (std::size_t l = 0; l < n_conv; ++l) {
    const ConvSpec& spec = config_.convs[l];
    const FeatureShape& in = shapes_[l];
    const FeatureShape& out = shapes_[l + 1];
    const Param& w = params.at(conv_name(l) + ".weight");
    const Param& b = params.at(conv_name(l) + ".bias");
    const ConstMap weight(w.value.data(), spec.out_channels,
                          static_cast<Eigen::Index>(spec.kernel) * spec.kernel * in.channels);
    const Eigen::Map<const Eigen::RowVectorXd> bias(b.value.data(), spec.out_channels);

    im2col(input, batch, in, out, spec, c.cols[l]);
    RowMatrix& act = c.activations[l];
    // One product per item: a blocked product over the whole batch rounds
    // rows differently depending on where they fall in the blocking.
    const auto positions = static_cast<Eigen::Index>(out.height) * out.width;
    act.resize(static_cast<Eigen::Index>(batch) * positions, spec.out_channels);
    for (Eigen::Index item = 0; item < batch; ++item)
      act.middleRows(item * positions, positions).noalias() =
          c.cols[l].middleRows(item * positions, positions) * weight.transpose();
    act.rowwise() += bias;
    act = act.cwiseMax(0.0);
    input = act.data();
  }

  const FeatureShape& last = shapes_.back();
  const ConstMap flat(input, batch, static_cast<Eigen::Index>(last.size()));
  const Param& fw = params.at("fc.weight");
  const Param& fb = params.at("fc.bias");
  const ConstMap fc_weight(fw.value.data(), config_.embedding_dim, static_cast<Eigen::Index>(last.size()));
  const Eigen::Map<const Eigen::RowVectorXd> fc_bias(fb.value.data(), config_.embedding_dim);
  RowMatrix z(batch, config_.embedding_dim);
  for (Eigen::Index item = 0; item < batch; ++item) z.row(item).noalias() = flat.row(item) * fc_weight.transpose();
  z.rowwise() += fc_bias;
  return z;
}

void Encoder::backward(const Cache& cache, const RowMatrix& dz, const ParamStore& params,
                       Gradients& grads) const {
  const int batch = cache.batch;
  if (dz.rows() != batch || dz.cols() != config_.embedding_dim)
    throw ValidationError("encoder backward: gradient shape mismatch");
  const std::size_t n_conv = config_.convs.size();
  const FeatureShape& last = shapes_.back();
  const auto flat_size = static_cast<Eigen::Index>(last.size());

  const ConstMap flat(cache.activations.back().data(), batch, flat_size);
  const std::size_t fw_i = params.index_of("fc.weight");
  const std::size_t fb_i = params.index_of("fc.bias");
  const ConstMap fc_weight(params[fw_i].value.data(), config_.embedding_dim, flat_size);
  Map(grads[fw_i].data(), config_.embedding_dim, flat_size).noalias() += dz.transpose() * flat;
  Eigen::Map<Eigen::RowVectorXd> fc_bias_grad(grads[fb_i].data(), config_.embedding_dim);
  for (Eigen::Index r = 0; r < dz.rows(); ++r) fc_bias_grad += dz.row(r);

  // Gradient with respect to the current layer's post-ReLU output.
  RowMatrix& dact = cache.dact;
  RowMatrix& dpre = cache.dpre;
  RowMatrix& dcols = cache.dcols;
  dact.resize(static_cast<Eigen::Index>(batch) * last.height * last.width, last.channels);
  Map(dact.data(), batch, flat_size).noalias() = dz * fc_weight;

  for (std::size_t l = n_conv; l-- > 0;) {
    const ConvSpec& spec = config_.convs[l];
    const FeatureShape& in = shapes_[l];
    const FeatureShape& out = shapes_[l + 1];
    const RowMatrix& act = cache.activations[l];
    dpre.resize(act.rows(), act.cols());
    dpre.array() = (act.array() > 0.0).select(dact.array(), 0.0);

    const std::size_t w_i = params.index_of(conv_name(l) + ".weight");
    const std::size_t b_i = params.index_of(conv_name(l) + ".bias");
    const auto kkc = static_cast<Eigen::Index>(spec.kernel) * spec.kernel * in.channels;
    Map(grads[w_i].data(), spec.out_channels, kkc).noalias() += dpre.transpose() * cache.cols[l];
    Eigen::Map<Eigen::RowVectorXd> bias_grad(grads[b_i].data(), spec.out_channels);
    for (Eigen::Index r = 0; r < dpre.rows(); ++r) bias_grad += dpre.row(r);

    if (l == 0) break;
    const ConstMap weight(params[w_i].value.data(), spec.out_channels, kkc);
    dcols.resize(dpre.rows(), kkc);
    dcols.noalias() = dpre * weight;
    dact.resize(static_cast<Eigen::Index>(batch) * in.height * in.width, in.channels);
    col2im(dcols, batch, in, out, spec, dact.data());
  }
}

std::uint64_t Encoder::activation_pattern(const Cache& cache) {
  std::uint64_t h = 1469598103934665603ull;
  for (const RowMatrix& act : cache.activations) {
    const double* p = act.data();
    for (Eigen::Index i = 0; i < act.size(); ++i) {
      h ^= p[i] > 0.0 ? 1u : 0u;
      h *= 1099511628211ull;
    }
  }
  return h;
}

void adamax_step(ParamStore& params, const Gradients& grads, double lr, const AdamaxOptions& options) {
  if (grads.size() != params.size()) throw ValidationError("adamax: gradient layout mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = params[i];
    const std::vector<double>& g = grads[i];
    if (g.size() != p.size()) throw ValidationError("adamax: gradient size mismatch for " + p.name);
    ++p.step;
    const double step = lr * p.lr_scale / (1.0 - std::pow(options.beta1, static_cast<double>(p.step)));
    for (std::size_t j = 0; j < p.size(); ++j) {
      p.m[j] = options.beta1 * p.m[j] + (1.0 - options.beta1) * g[j];
      p.u[j] = std::max(options.beta2 * p.u[j], std::abs(g[j]));
      p.value[j] -= step * p.m[j] / (p.u[j] + options.epsilon);
    }
  }
}

GradCheckReport grad_check(ParamStore& params, const Gradients& analytic,
                           const std::function<ProbeResult(const ParamStore&)>& loss,
                           const GradCheckOptions& options) {
  if (params.size() == 0) throw ValidationError("grad_check: no parameters");
  GradCheckReport report;
  const ProbeResult base = loss(params);
  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<std::size_t> pick_param(0, params.size() - 1);

  std::size_t attempts = 0;
  while (report.entries.size() < options.samples && attempts < options.max_attempts) {
    ++attempts;
    const std::size_t pi = pick_param(rng);
    Param& p = params[pi];
    if (p.size() == 0) continue;
    const std::size_t idx = std::uniform_int_distribution<std::size_t>(0, p.size() - 1)(rng);

    const double original = p.value[idx];
    p.value[idx] = original + options.epsilon;
    const ProbeResult plus = loss(params);
    p.value[idx] = original - options.epsilon;
    const ProbeResult minus = loss(params);
    p.value[idx] = original;

    if (plus.pattern != base.pattern || minus.pattern != base.pattern) {
      ++report.skipped_kinks;
      continue;
    }
    GradCheckEntry e;
    e.param = pi;
    e.index = idx;
    e.analytic = analytic[pi][idx];
    e.numeric = (plus.loss - minus.loss) / (2.0 * options.epsilon);
    const double denom = std::max({std::abs(e.analytic), std::abs(e.numeric), options.floor});
    e.rel_error = std::abs(e.analytic - e.numeric) / denom;
    report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
    report.entries.push_back(e);
  }
  report.passed = report.entries.size() == options.samples && report.max_rel_error < options.tolerance;
  return report;
}

}  // namespace dfc::nn
