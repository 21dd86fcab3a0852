#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "cbct/conv.hpp"
#include "cbct/fdk.hpp"
#include "cbct/layers.hpp"
#include "cbct/projector.hpp"
#include "cbct/volume.hpp"

namespace cbct {

enum class ModelKind { fdkconvnet, pdnet, pdunet };

inline const char* model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::fdkconvnet: return "fdkconvnet";
    case ModelKind::pdnet: return "pdnet";
    case ModelKind::pdunet: return "pdunet";
  }
  return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "fdkconvnet") return ModelKind::fdkconvnet;
  if (s == "pdnet") return ModelKind::pdnet;
  if (s == "pdunet") return ModelKind::pdunet;
  throw std::invalid_argument("unknown model kind '" + s + "' (expected fdkconvnet, pdnet or pdunet)");
}

struct ModelConfig {
  ModelKind kind = ModelKind::pdunet;
  std::size_t n_iterations = 5;
  std::size_t primal_channels = 5;
  std::size_t dual_channels = 5;
  std::size_t hidden_channels = 32;
  std::size_t unet_depth = 3;
  std::size_t unet_base_channels = 16;
  bool share_primal_weights = true;  // pdunet: one UNet for all iterations

  void validate() const {
    if (n_iterations < 1) throw std::invalid_argument("model: n_iterations must be >= 1");
    if (primal_channels < 1 || dual_channels < 1 || hidden_channels < 1 || unet_base_channels < 1)
      throw std::invalid_argument("model: channel counts must be >= 1");
    if (unet_depth < 1) throw std::invalid_argument("model: unet_depth must be >= 1");
  }
};

/// Named trainable tensors and named state buffers (batchnorm running stats),
/// in registration order.
template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
class ParamRegistry {
 public:
  explicit ParamRegistry(std::uint64_t seed) : rng_(seed) {}

  Tensor<T> param(const std::string& name, Tensor<T> t) {
    require_unique(name);
    t.set_requires_grad(true);
    t.set_label(name);
    params_.push_back({name, t});
    return t;
  }
  void buffer(const std::string& name, const Tensor<T>& t) {
    require_unique(name);
    buffers_.push_back({name, t});
  }

  /// He-uniform for a PReLU-followed layer: U(-b, b), b = sqrt(6 / ((1 + a^2) fan_in)).
  Tensor<T> he_uniform(Shape shape, std::size_t fan_in, double slope = 0.25, double gain = 1.0) {
    const double b = gain * std::sqrt(6.0 / ((1.0 + slope * slope) * static_cast<double>(fan_in)));
    std::uniform_real_distribution<double> u(-b, b);
    Tensor<T> t(std::move(shape));
    for (auto& v : t.mutable_data()) v = static_cast<T>(u(rng_));
    return t;
  }

  std::vector<NamedTensor<T>>& params() { return params_; }
  const std::vector<NamedTensor<T>>& params() const { return params_; }
  std::vector<NamedTensor<T>>& buffers() { return buffers_; }
  const std::vector<NamedTensor<T>>& buffers() const { return buffers_; }

 private:
  void require_unique(const std::string& name) {
    for (const auto& p : params_)
      if (p.name == name) throw std::logic_error("duplicate parameter name " + name);
    for (const auto& p : buffers_)
      if (p.name == name) throw std::logic_error("duplicate buffer name " + name);
  }

  std::mt19937_64 rng_;
  std::vector<NamedTensor<T>> params_;
  std::vector<NamedTensor<T>> buffers_;
};

namespace nn {

template <typename T>
struct Conv {
  Tensor<T> weight, bias;

  Conv() = default;
  /// Without `with_bias` the bias is a fixed zero (used in front of batchnorm,
  /// which cancels any per-channel offset).
  Conv(ParamRegistry<T>& reg, const std::string& name, std::size_t c_in, std::size_t c_out,
       std::size_t k, double gain = 1.0, bool with_bias = true) {
    weight = reg.param(name + ".weight",
                       reg.he_uniform({c_out, c_in, k, k, k}, c_in * k * k * k, 0.25, gain));
    bias = Tensor<T>(Shape{c_out}, T(0));
    if (with_bias) bias = reg.param(name + ".bias", bias);
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return conv3d(x, weight, bias); }
};

template <typename T>
struct PRelu {
  Tensor<T> slope;

  PRelu() = default;
  PRelu(ParamRegistry<T>& reg, const std::string& name, std::size_t channels) {
    slope = reg.param(name + ".slope", Tensor<T>(Shape{channels}, T(0.25)));
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return prelu(x, slope); }
};

template <typename T>
struct BatchNorm {
  Tensor<T> gamma, beta;
  std::shared_ptr<RunningStats<T>> stats;

  BatchNorm() = default;
  BatchNorm(ParamRegistry<T>& reg, const std::string& name, std::size_t channels)
      : stats(std::make_shared<RunningStats<T>>(channels)) {
    gamma = reg.param(name + ".gamma", Tensor<T>(Shape{channels}, T(1)));
    beta = reg.param(name + ".beta", Tensor<T>(Shape{channels}, T(0)));
    reg.buffer(name + ".running_mean", stats->mean);
    reg.buffer(name + ".running_var", stats->var);
  }
  Tensor<T> operator()(const Tensor<T>& x, Mode mode) const {
    return batchnorm3d(x, gamma, beta, *stats, mode);
  }
};

/// conv 3^3 -> PReLU -> conv 3^3 -> PReLU -> conv 3^3.
template <typename T>
struct ConvBlock {
  Conv<T> c0, c1, c2;
  PRelu<T> a0, a1;

  ConvBlock() = default;
  ConvBlock(ParamRegistry<T>& reg, const std::string& name, std::size_t c_in, std::size_t hidden,
            std::size_t c_out, double out_gain)
      : c0(reg, name + ".conv0", c_in, hidden, 3),
        c1(reg, name + ".conv1", hidden, hidden, 3),
        c2(reg, name + ".conv2", hidden, c_out, 3, out_gain),
        a0(reg, name + ".act0", hidden),
        a1(reg, name + ".act1", hidden) {}
  Tensor<T> operator()(const Tensor<T>& x) const { return c2(a1(c1(a0(c0(x))))); }
};

/// 2 x [conv 3^3 -> batchnorm -> PReLU].
template <typename T>
struct DoubleConv {
  Conv<T> c0, c1;
  BatchNorm<T> n0, n1;
  PRelu<T> a0, a1;

  DoubleConv() = default;
  DoubleConv(ParamRegistry<T>& reg, const std::string& name, std::size_t c_in, std::size_t c_out)
      : c0(reg, name + ".conv0", c_in, c_out, 3, 1.0, false),
        c1(reg, name + ".conv1", c_out, c_out, 3, 1.0, false),
        n0(reg, name + ".bn0", c_out),
        n1(reg, name + ".bn1", c_out),
        a0(reg, name + ".act0", c_out),
        a1(reg, name + ".act1", c_out) {}
  Tensor<T> operator()(const Tensor<T>& x, Mode mode) const {
    return a1(n1(c1(a0(n0(c0(x), mode))), mode));
  }
};

}  // namespace nn

/// 3D UNet: per level 2 x [conv-BN-PReLU] then average pooling; a bottleneck
/// at depth `depth`; decoder with trilinear upsampling, skip concatenation
/// and 2 x [conv-BN-PReLU]; final 1^3 convolution.
template <typename T>
class UNet3d {
 public:
  UNet3d() = default;
  UNet3d(ParamRegistry<T>& reg, const std::string& name, std::size_t c_in, std::size_t c_out,
         std::size_t depth, std::size_t base, double out_gain = 1.0)
      : depth_(depth) {
    std::size_t c = c_in;
    for (std::size_t l = 0; l < depth; ++l) {
      const std::size_t w = base << l;
      down_.emplace_back(reg, name + ".down" + std::to_string(l), c, w);
      c = w;
    }
    bottom_ = nn::DoubleConv<T>(reg, name + ".bottom", c, base << depth);
    c = base << depth;
    for (std::size_t l = depth; l-- > 0;) {
      const std::size_t w = base << l;
      up_.emplace_back(reg, name + ".up" + std::to_string(l), c + w, w);
      c = w;
    }
    out_ = nn::Conv<T>(reg, name + ".out", c, c_out, 1, out_gain);
  }

  std::size_t depth() const { return depth_; }

  Tensor<T> operator()(const Tensor<T>& x, Mode mode) const {
    const VolLayout l = vol_layout(x.shape(), "unet3d");
    const std::size_t m = std::size_t{1} << depth_;
    if (l.depth % m || l.height % m || l.width % m)
      throw std::invalid_argument("unet3d: spatial extents " + shape_str(x.shape()) +
                                  " must be divisible by " + std::to_string(m));
    std::vector<Tensor<T>> skips;
    Tensor<T> h = x;
    for (const auto& d : down_) {
      h = d(h, mode);
      skips.push_back(h);
      h = avgpool3d(h);
    }
    h = bottom_(h, mode);
    for (std::size_t i = 0; i < up_.size(); ++i) {
      h = upsample_trilinear3d(h);
      h = up_[i](concat_channels(h, skips[skips.size() - 1 - i]), mode);
    }
    return out_(h);
  }

 private:
  std::size_t depth_ = 0;
  std::vector<nn::DoubleConv<T>> down_, up_;
  nn::DoubleConv<T> bottom_;
  nn::Conv<T> out_;
};

/// Largest line integral (mm^-1 x mm) of a water-attenuation cube filling
/// `grid`, over all pixels of `geom`. Used to bring projections to O(1).
inline double projection_scale(const ConeBeamGeometry& geom, const VolumeGrid& grid) {
  std::vector<double> cube(grid.size(), kMuWater);
  const auto p = forward_project<double>(cube, grid, geom);
  const double mx = *std::max_element(p.data.begin(), p.data.end());
  if (!(mx > 0)) throw std::invalid_argument("projection_scale: detector does not see the grid");
  return mx;
}

/// Label carried by the concatenation that feeds each dual block.
inline constexpr const char* kDualInputLabel = "dual_block_input";

/// The learned reconstructors. Inputs are line integrals [N,1,views,rows,cols]
/// (or [1,views,rows,cols]); outputs are normalized intensities
/// [N,1,nz,ny,nx].
///
/// fdkconvnet: x0 = FDK(g) / kNormToMu, output x0 + UNet(x0).
/// pdnet/pdunet: primal state f starts as x0 replicated over the primal
/// channels, dual state h at zero; each iteration
///   h <- h + Dual_i(concat(h, A(f[0]) kNormToMu / s, g / s))
///   f <- f + Primal_i(concat(f, FDK(h[0]) s / kNormToMu))
/// with s = projection_scale(). Output f[0].
template <typename T>
class Reconstructor {
 public:
  Reconstructor(ModelConfig cfg, ConeBeamGeometry geom, VolumeGrid grid, std::uint64_t seed)
      : cfg_(cfg), geom_(std::move(geom)), grid_(grid), reg_(seed) {
    cfg_.validate();
    geom_.validate();
    grid_.validate();
    if (geom_.n_views() == 0) throw std::invalid_argument("model: geometry has no views");
    fdk_ = std::make_shared<const FdkOperator>(geom_, grid_);
    if (cfg_.kind != ModelKind::fdkconvnet) proj_ = std::make_shared<const ProjectionOperator>(geom_, grid_);
    scale_ = projection_scale(geom_, grid_);

    const std::size_t m = std::size_t{1} << cfg_.unet_depth;
    const bool needs_unet = cfg_.kind != ModelKind::pdnet;
    if (needs_unet && (grid_.nx % m || grid_.ny % m || grid_.nz % m))
      throw std::invalid_argument("model: grid extents must be divisible by 2^unet_depth = " +
                                  std::to_string(m));
    if (cfg_.kind != ModelKind::fdkconvnet &&
        (geom_.n_views() < 3 || geom_.det_rows < 3 || geom_.det_cols < 3))
      throw std::invalid_argument("model: dual blocks need at least 3 views, rows and cols");

    // Residual branches start small so the untrained model stays close to FDK.
    constexpr double out_gain = 0.1;
    const std::size_t P = cfg_.primal_channels, D = cfg_.dual_channels, H = cfg_.hidden_channels;
    switch (cfg_.kind) {
      case ModelKind::fdkconvnet:
        unets_.emplace_back(reg_, "unet", 1, 1, cfg_.unet_depth, cfg_.unet_base_channels, out_gain);
        break;
      case ModelKind::pdnet:
      case ModelKind::pdunet:
        for (std::size_t i = 0; i < cfg_.n_iterations; ++i)
          dual_.emplace_back(reg_, "dual." + std::to_string(i), D + 2, H, D, out_gain);
        if (cfg_.kind == ModelKind::pdnet) {
          for (std::size_t i = 0; i < cfg_.n_iterations; ++i)
            primal_.emplace_back(reg_, "primal." + std::to_string(i), P + 1, H, P, out_gain);
        } else {
          const std::size_t n = cfg_.share_primal_weights ? 1 : cfg_.n_iterations;
          for (std::size_t i = 0; i < n; ++i)
            unets_.emplace_back(reg_, cfg_.share_primal_weights ? "primal_unet" : "primal_unet." + std::to_string(i),
                                P + 1, P, cfg_.unet_depth, cfg_.unet_base_channels, out_gain);
        }
        break;
    }
  }

  const ModelConfig& config() const { return cfg_; }
  const ConeBeamGeometry& geometry() const { return geom_; }
  const VolumeGrid& grid() const { return grid_; }
  double proj_scale() const { return scale_; }
  ParamRegistry<T>& registry() { return reg_; }
  const ParamRegistry<T>& registry() const { return reg_; }

  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out;
    for (const auto& p : reg_.params()) out.push_back(p.tensor);
    return out;
  }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : reg_.params()) n += p.tensor.numel();
    return n;
  }

  Tensor<T> forward(const Tensor<T>& projections, Mode mode) const {
    const VolLayout l = vol_layout(projections.shape(), "model");
    if (l.channels != 1 || l.depth != geom_.n_views() || l.height != geom_.det_rows ||
        l.width != geom_.det_cols)
      throw std::invalid_argument("model: projections " + shape_str(projections.shape()) +
                                  " do not match the geometry (" + std::to_string(geom_.n_views()) +
                                  " views, " + std::to_string(geom_.det_rows) + "x" +
                                  std::to_string(geom_.det_cols) + ")");
    const T to_norm = static_cast<T>(1.0 / kNormToMu);
    const Tensor<T> x0 = scale(fdk_layer(projections, fdk_), to_norm);
    if (cfg_.kind == ModelKind::fdkconvnet) return add(x0, unets_[0](x0, mode));

    const T proj_in = static_cast<T>(kNormToMu / scale_);
    const T proj_out = static_cast<T>(scale_ / kNormToMu);
    const Tensor<T> gs = scale(projections, static_cast<T>(1.0 / scale_));
    Tensor<T> f = concat_channels(std::vector<Tensor<T>>(cfg_.primal_channels, x0));
    Tensor<T> h(with_channels(projections.shape(), cfg_.dual_channels), T(0));
    for (std::size_t i = 0; i < cfg_.n_iterations; ++i) {
      const Tensor<T> fp = scale(projection_layer(slice_channels(f, 0, 1), proj_), proj_in);
      Tensor<T> din = concat_channels(std::vector<Tensor<T>>{h, fp, gs});
      din.set_label(kDualInputLabel);
      h = add(h, dual_[i](din));
      const Tensor<T> fb = scale(fdk_layer(slice_channels(h, 0, 1), fdk_), proj_out);
      const Tensor<T> pin = concat_channels(f, fb);
      if (cfg_.kind == ModelKind::pdnet) {
        f = add(f, primal_[i](pin));
      } else {
        f = add(f, unets_[cfg_.share_primal_weights ? 0 : i](pin, mode));
      }
    }
    return slice_channels(f, 0, 1);
  }

  /// Copies parameter and buffer values from `src` by name. Both sets must
  /// match exactly in names and shapes.
  void load_values(const std::vector<NamedTensor<T>>& src) {
    std::size_t matched = 0;
    auto assign = [&](std::vector<NamedTensor<T>>& dst) {
      for (auto& d : dst) {
        auto it = std::find_if(src.begin(), src.end(), [&](const auto& s) { return s.name == d.name; });
        if (it == src.end()) throw std::invalid_argument("checkpoint is missing tensor " + d.name);
        if (it->tensor.shape() != d.tensor.shape())
          throw std::invalid_argument("tensor " + d.name + " has shape " + shape_str(it->tensor.shape()) +
                                      ", model expects " + shape_str(d.tensor.shape()));
        auto out = d.tensor.mutable_data();
        std::copy(it->tensor.data().begin(), it->tensor.data().end(), out.begin());
        ++matched;
      }
    };
    assign(reg_.params());
    assign(reg_.buffers());
    if (matched != src.size()) throw std::invalid_argument("checkpoint has tensors the model does not use");
  }

  /// Parameters followed by buffers, in registration order.
  std::vector<NamedTensor<T>> state() const {
    auto out = reg_.params();
    out.insert(out.end(), reg_.buffers().begin(), reg_.buffers().end());
    return out;
  }

 private:
  ModelConfig cfg_;
  ConeBeamGeometry geom_;
  VolumeGrid grid_;
  ParamRegistry<T> reg_;
  std::shared_ptr<const FdkOperator> fdk_;
  std::shared_ptr<const ProjectionOperator> proj_;
  double scale_ = 1.0;
  std::vector<nn::ConvBlock<T>> dual_, primal_;
  std::vector<UNet3d<T>> unets_;
};

}  // namespace cbct
