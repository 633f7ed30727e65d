#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace dfc {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace nn {

struct ConvSpec {
  int out_channels = 0;
  int kernel = 0;
  int stride = 1;
  int pad = 0;
};

struct EncoderConfig {
  int input_size = 28;
  int input_channels = 3;
  std::vector<ConvSpec> convs{{32, 5, 2, 2}, {64, 5, 2, 2}, {128, 3, 2, 0}};
  int embedding_dim = 10;

  /// Spatial side of a square map after a convolution: floor((w - k + 2p) / s) + 1.
  static int conv_output_size(int in, const ConvSpec& spec) {
    return (in - spec.kernel + 2 * spec.pad) / spec.stride + 1;
  }
};

struct FeatureShape {
  int height = 0;
  int width = 0;
  int channels = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width) *
           static_cast<std::size_t>(channels);
  }
  friend bool operator==(const FeatureShape&, const FeatureShape&) = default;
};

/// Input shape followed by the output shape of every convolution.
std::vector<FeatureShape> feature_shapes(const EncoderConfig& config);

/// One named tensor plus its Adamax state.
struct Param {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> value;
  std::vector<double> m;  // first moment
  std::vector<double> u;  // exponentially weighted infinity norm
  std::int64_t step = 0;
  double lr_scale = 1.0;  // multiplies the optimizer learning rate

  std::size_t size() const { return value.size(); }
};

class ParamStore {
 public:
  Param& add(std::string name, std::vector<std::size_t> shape, std::vector<double> value);

  std::size_t size() const { return params_.size(); }
  Param& operator[](std::size_t i) { return params_[i]; }
  const Param& operator[](std::size_t i) const { return params_[i]; }

  /// Index of a parameter by name; throws if absent.
  std::size_t index_of(const std::string& name) const;
  bool contains(const std::string& name) const;
  Param& at(const std::string& name) { return params_[index_of(name)]; }
  const Param& at(const std::string& name) const { return params_[index_of(name)]; }

  std::size_t total_values() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<Param> params_;
};

/// Gradient buffers laid out like a ParamStore.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(const ParamStore& params);

  std::vector<double>& operator[](std::size_t i) { return g_[i]; }
  const std::vector<double>& operator[](std::size_t i) const { return g_[i]; }
  std::size_t size() const { return g_.size(); }

  void zero();
  /// this += other, element by element in index order.
  void accumulate(const Gradients& other);
  void scale(double s);

 private:
  std::vector<std::vector<double>> g_;
};

/// Kaiming-uniform (fan-in, ReLU gain) weights and zero biases, drawn in
/// parameter order from a generator seeded with `seed`. Names are
/// conv{1,2,3}.{weight,bias} and fc.{weight,bias}; convolution weights are
/// laid out [out][kh][kw][in], fc weights [out][in].
ParamStore init_encoder_params(const EncoderConfig& config, std::uint64_t seed);

/// Convolutional encoder: conv+ReLU blocks, flatten, linear embedding.
/// Feature maps are stored height-width-channel per item.
class Encoder {
 public:
  explicit Encoder(EncoderConfig config = {});

  const EncoderConfig& config() const { return config_; }
  const std::vector<FeatureShape>& shapes() const { return shapes_; }
  std::size_t input_size() const { return shapes_.front().size(); }
  int embedding_dim() const { return config_.embedding_dim; }

  /// Intermediate values kept for the backward pass.
  struct Cache {
    int batch = 0;
    std::vector<RowMatrix> cols;         // im2col matrix per convolution
    std::vector<RowMatrix> activations;  // post-ReLU output per convolution
    // Backward-pass buffers, kept here so repeated calls do not reallocate.
    mutable RowMatrix dact, dpre, dcols;
  };

  /// `inputs` holds `batch` consecutive items of input_size() values.
  /// Returns batch x embedding_dim. Fills `cache` when non-null.
  RowMatrix forward(std::span<const double> inputs, int batch, const ParamStore& params,
                    Cache* cache = nullptr) const;

  /// Adds d(loss)/d(param) to `grads` given d(loss)/dz for the batch cached
  /// by the matching forward call.
  void backward(const Cache& cache, const RowMatrix& dz, const ParamStore& params,
                Gradients& grads) const;

  /// Hash of every ReLU on/off decision in the cache, used to detect
  /// finite-difference probes that straddle a kink.
  static std::uint64_t activation_pattern(const Cache& cache);

 private:
  EncoderConfig config_;
  std::vector<FeatureShape> shapes_;
};

struct AdamaxOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// m <- b1 m + (1-b1) g;  u <- max(b2 u, |g|);  w <- w - lr/(1-b1^t) * m/(u+eps),
/// with lr multiplied by each parameter's lr_scale.
void adamax_step(ParamStore& params, const Gradients& grads, double lr,
                 const AdamaxOptions& options = {});

struct GradCheckOptions {
  double epsilon = 1e-4;
  double tolerance = 1e-4;
  std::size_t samples = 100;
  std::uint64_t seed = 0;
  /// Denominator floor of the relative error.
  double floor = 1e-8;
  /// Upper bound on rejected probes before giving up.
  std::size_t max_attempts = 10000;
};

struct GradCheckEntry {
  std::size_t param = 0;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  std::size_t skipped_kinks = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// Loss value and an activation-pattern fingerprint (0 for smooth models).
struct ProbeResult {
  double loss = 0.0;
  std::uint64_t pattern = 0;
};

/// Central finite-difference check of `analytic` against `loss` on
/// `options.samples` parameter entries drawn uniformly (per tensor, then per
/// entry). Probes whose +/- perturbation changes the activation pattern are
/// skipped and counted, since the finite difference is invalid across a kink.
/// relative error = |a - n| / max(|a|, |n|, floor).
GradCheckReport grad_check(ParamStore& params, const Gradients& analytic,
                           const std::function<ProbeResult(const ParamStore&)>& loss,
                           const GradCheckOptions& options = {});

}  // namespace nn
}  // namespace dfc
