#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mss/common.hpp"
#include "mss/ops.hpp"
#include "mss/random.hpp"
#include "mss/serialize.hpp"
#include "mss/tensor.hpp"

namespace mss {

struct UNetConfig {
  int in_channels = 3;
  int out_channels = 4;
  int depth = 4;       // pooling stages
  int base_width = 64; // first-stage feature channels
  int input_size = 256;

  void validate() const {
    if (in_channels < 1 || out_channels < 1)
      throw validation_error("channel counts must be >= 1, got in=" +
                             std::to_string(in_channels) + " out=" +
                             std::to_string(out_channels));
    if (depth < 1)
      throw validation_error("depth must be >= 1, got " +
                             std::to_string(depth));
    if (depth > 16) throw validation_error("depth is implausibly large");
    if (base_width < 1)
      throw validation_error("base_width must be >= 1, got " +
                             std::to_string(base_width));
    if (input_size < 1 || input_size % 2 != 0)
      throw validation_error("input_size must be even and positive, got " +
                             std::to_string(input_size));
    const int stride_total = 1 << depth;
    if (input_size % stride_total != 0 || input_size / stride_total < 1)
      throw validation_error("input_size " + std::to_string(input_size) +
                             " must be divisible by 2^depth = " +
                             std::to_string(stride_total));
  }

  bool operator==(const UNetConfig&) const = default;
};

struct ParamSpec {
  std::string name;
  std::vector<int> shape;
};

/// Parameter schedule in execution order; defines both construction and the
/// save/load shape audit.
inline std::vector<ParamSpec> param_spec(const UNetConfig& cfg) {
  std::vector<ParamSpec> out;
  auto add = [&](const std::string& name, std::vector<int> shape) {
    out.push_back({name, std::move(shape)});
  };
  int in = cfg.in_channels;
  for (int i = 0; i < cfg.depth; ++i) {
    const int w = cfg.base_width << i;
    const std::string p = "enc" + std::to_string(i);
    add(p + ".conv1.weight", {w, in, 3, 3});
    add(p + ".conv1.bias", {w});
    add(p + ".conv2.weight", {w, w, 3, 3});
    add(p + ".conv2.bias", {w});
    in = w;
  }
  const int bw = cfg.base_width << cfg.depth;
  add("bottleneck.conv1.weight", {bw, in, 3, 3});
  add("bottleneck.conv1.bias", {bw});
  add("bottleneck.conv2.weight", {bw, bw, 3, 3});
  add("bottleneck.conv2.bias", {bw});
  int cur = bw;
  for (int i = cfg.depth - 1; i >= 0; --i) {
    const int w = cfg.base_width << i;
    const std::string p = "dec" + std::to_string(i);
    add(p + ".up.weight", {cur, w, 2, 2});
    add(p + ".up.bias", {w});
    add(p + ".conv1.weight", {w, 2 * w, 3, 3});
    add(p + ".conv1.bias", {w});
    add(p + ".conv2.weight", {w, w, 3, 3});
    add(p + ".conv2.bias", {w});
    cur = w;
  }
  add("head.weight", {cfg.out_channels, cfg.base_width, 1, 1});
  add("head.bias", {cfg.out_channels});
  return out;
}

struct UNetModel {
  UNetConfig config;
  std::vector<std::pair<std::string, Tensor>> params;  // execution order

  const Tensor& param(const std::string& name) const {
    for (const auto& [n, t] : params)
      if (n == name) return t;
    throw validation_error("no parameter named '" + name + "'");
  }
  Tensor& param(const std::string& name) {
    for (auto& [n, t] : params)
      if (n == name) return t;
    throw validation_error("no parameter named '" + name + "'");
  }
};

/// Kernels He-initialized from the per-tensor fan-in, biases zero. The init
/// stream is salted by parameter index, so layer values do not depend on
/// build order.
inline UNetModel build_unet(const UNetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  UNetModel m;
  m.config = cfg;
  const auto spec = param_spec(cfg);
  m.params.reserve(spec.size());
  for (std::size_t i = 0; i < spec.size(); ++i) {
    const auto& ps = spec[i];
    if (ps.shape.size() == 1) {
      m.params.emplace_back(ps.name, Tensor(ps.shape));  // zero bias
    } else {
      int fan_in = ps.shape[1];
      for (std::size_t d = 2; d < ps.shape.size(); ++d) fan_in *= ps.shape[d];
      if (ps.name.find(".up.") != std::string::npos)
        fan_in = ps.shape[0] * ps.shape[2] * ps.shape[3];  // [Cin,Cout,kh,kw]
      m.params.emplace_back(
          ps.name, he_init(ps.shape, fan_in, mix_seed(seed, 0xA11C0DE + i)));
    }
  }
  return m;
}

inline std::size_t count_parameters(const UNetModel& m) {
  std::size_t n = 0;
  for (const auto& [name, t] : m.params) n += t.size();
  return n;
}

namespace detail {

struct BlockCache {
  Tensor input, z1, a1, z2;  // a2 is the block output, held by the caller
};

inline Tensor block_forward(const UNetModel& m, const std::string& prefix,
                            const Tensor& x, BlockCache* cache) {
  const Tensor& k1 = m.param(prefix + ".conv1.weight");
  const Tensor& b1 = m.param(prefix + ".conv1.bias");
  const Tensor& k2 = m.param(prefix + ".conv2.weight");
  const Tensor& b2 = m.param(prefix + ".conv2.bias");
  Tensor z1 = conv2d(x, k1, b1, 1, 1);
  Tensor a1 = relu(z1);
  Tensor z2 = conv2d(a1, k2, b2, 1, 1);
  Tensor a2 = relu(z2);
  if (cache) {
    cache->input = x;
    cache->z1 = std::move(z1);
    cache->a1 = std::move(a1);
    cache->z2 = std::move(z2);
  }
  return a2;
}

inline void add_channel_bias(Tensor& t, const Tensor& bias) {
  const int n = t.extent(0), c = t.extent(1);
  const std::size_t plane =
      static_cast<std::size_t>(t.extent(2)) * t.extent(3);
  for (int ni = 0; ni < n; ++ni)
    for (int ci = 0; ci < c; ++ci) {
      float* p = t.data() + (static_cast<std::size_t>(ni) * c + ci) * plane;
      const float b = bias[ci];
      for (std::size_t i = 0; i < plane; ++i) p[i] += b;
    }
}

inline Tensor channel_sums(const Tensor& t) {
  const int n = t.extent(0), c = t.extent(1);
  const std::size_t plane =
      static_cast<std::size_t>(t.extent(2)) * t.extent(3);
  Tensor out({c});
  for (int ni = 0; ni < n; ++ni)
    for (int ci = 0; ci < c; ++ci) {
      const float* p =
          t.data() + (static_cast<std::size_t>(ni) * c + ci) * plane;
      double acc = 0;
      for (std::size_t i = 0; i < plane; ++i) acc += p[i];
      out[ci] += static_cast<float>(acc);
    }
  return out;
}

inline Tensor add_tensors(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "gradient accumulation");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

}  // namespace detail

struct UNetCache {
  std::vector<detail::BlockCache> enc;            // per stage
  std::vector<Tensor> enc_out;                    // a2 per stage (skip source)
  std::vector<std::vector<std::uint32_t>> pool_argmax;
  std::vector<std::vector<int>> pool_in_shape;
  detail::BlockCache bottleneck;
  std::vector<Tensor> up_in;                      // per stage: transposed-conv input
  std::vector<detail::BlockCache> dec;            // per stage
  Tensor head_input;
};

/// Logits: no activation. Spatial extents are preserved end to end.
inline Tensor unet_forward(const UNetModel& m, const Tensor& batch,
                           UNetCache* cache = nullptr) {
  const UNetConfig& cfg = m.config;
  require_rank(batch, 4, "unet input");
  if (batch.extent(1) != cfg.in_channels)
    throw shape_error("unet input has " + std::to_string(batch.extent(1)) +
                      " channels, model expects " +
                      std::to_string(cfg.in_channels));
  if (batch.extent(2) != cfg.input_size || batch.extent(3) != cfg.input_size)
    throw shape_error("unet input is " + std::to_string(batch.extent(2)) +
                      "x" + std::to_string(batch.extent(3)) +
                      ", model expects " + std::to_string(cfg.input_size) +
                      "x" + std::to_string(cfg.input_size));

  if (cache) {
    cache->enc.resize(cfg.depth);
    cache->enc_out.resize(cfg.depth);
    cache->pool_argmax.resize(cfg.depth);
    cache->pool_in_shape.resize(cfg.depth);
    cache->up_in.resize(cfg.depth);
    cache->dec.resize(cfg.depth);
  }

  Tensor cur = batch;
  std::vector<Tensor> skips(cfg.depth);
  for (int i = 0; i < cfg.depth; ++i) {
    const std::string p = "enc" + std::to_string(i);
    Tensor a2 = detail::block_forward(m, p, cur, cache ? &cache->enc[i] : nullptr);
    MaxPoolResult pooled = maxpool2d(a2);
    if (cache) {
      cache->enc_out[i] = a2;
      cache->pool_argmax[i] = std::move(pooled.argmax);
      cache->pool_in_shape[i] = a2.shape();
    }
    skips[i] = std::move(a2);
    cur = std::move(pooled.output);
  }

  cur = detail::block_forward(m, "bottleneck", cur,
                              cache ? &cache->bottleneck : nullptr);

  for (int i = cfg.depth - 1; i >= 0; --i) {
    const std::string p = "dec" + std::to_string(i);
    if (cache) cache->up_in[i] = cur;
    Tensor up = conv_transpose2d(cur, m.param(p + ".up.weight"));
    detail::add_channel_bias(up, m.param(p + ".up.bias"));
    Tensor cat = concat_channels(up, skips[i]);
    cur = detail::block_forward(m, p, cat, cache ? &cache->dec[i] : nullptr);
  }

  if (cache) cache->head_input = cur;
  return conv2d(cur, m.param("head.weight"), m.param("head.bias"), 1, 0);
}

inline Tensor predict_probabilities(const UNetModel& m, const Tensor& batch) {
  Tensor logits = unet_forward(m, batch);
  return sigmoid(logits);
}

/// Per-parameter gradients aligned with model.params.
struct UNetGrads {
  std::vector<std::pair<std::string, Tensor>> grads;

  const Tensor& grad(const std::string& name) const {
    for (const auto& [n, t] : grads)
      if (n == name) return t;
    throw validation_error("no gradient named '" + name + "'");
  }
};

inline UNetGrads unet_backward(const UNetModel& m, const UNetCache& cache,
                               const Tensor& dlogits) {
  const UNetConfig& cfg = m.config;
  std::unordered_map<std::string, Tensor> acc;
  auto put = [&](const std::string& name, Tensor g) {
    acc.emplace(name, std::move(g));
  };

  auto block_backward = [&](const std::string& prefix,
                            const detail::BlockCache& bc,
                            const Tensor& d_out) -> Tensor {
    const Tensor& k1 = m.param(prefix + ".conv1.weight");
    const Tensor& k2 = m.param(prefix + ".conv2.weight");
    Tensor dz2 = relu_backward(bc.z2, d_out);
    LayerGrad g2 = conv2d_backward(bc.a1, k2, 1, 1, dz2);
    put(prefix + ".conv2.weight", g2.param("kernels"));
    put(prefix + ".conv2.bias", g2.param("bias"));
    Tensor dz1 = relu_backward(bc.z1, g2.input_grad);
    LayerGrad g1 = conv2d_backward(bc.input, k1, 1, 1, dz1);
    put(prefix + ".conv1.weight", g1.param("kernels"));
    put(prefix + ".conv1.bias", g1.param("bias"));
    return std::move(g1.input_grad);
  };

  // head
  LayerGrad gh = conv2d_backward(cache.head_input, m.param("head.weight"), 1,
                                 0, dlogits);
  put("head.weight", gh.param("kernels"));
  put("head.bias", gh.param("bias"));
  Tensor d_cur = std::move(gh.input_grad);

  // decoder, reverse of execution (dec0 ran last)
  std::vector<Tensor> skip_grads(cfg.depth);
  for (int i = 0; i < cfg.depth; ++i) {
    const std::string p = "dec" + std::to_string(i);
    Tensor d_cat = block_backward(p, cache.dec[i], d_cur);
    const int w = cfg.base_width << i;
    auto [d_up, d_skip] = concat_channels_backward(d_cat, w, w);
    skip_grads[i] = std::move(d_skip);
    put(p + ".up.bias", detail::channel_sums(d_up));
    LayerGrad gu =
        conv_transpose2d_backward(cache.up_in[i], m.param(p + ".up.weight"),
                                  d_up);
    put(p + ".up.weight", gu.param("kernels"));
    d_cur = std::move(gu.input_grad);
  }

  // bottleneck, then encoder chain downwards
  d_cur = block_backward("bottleneck", cache.bottleneck, d_cur);
  for (int i = cfg.depth - 1; i >= 0; --i) {
    Tensor d_a2 = maxpool2d_backward(cache.pool_in_shape[i],
                                     cache.pool_argmax[i], d_cur);
    d_a2 = detail::add_tensors(d_a2, skip_grads[i]);
    d_cur = block_backward("enc" + std::to_string(i), cache.enc[i], d_a2);
  }

  UNetGrads out;
  out.grads.reserve(m.params.size());
  for (const auto& [name, t] : m.params) {
    auto it = acc.find(name);
    if (it == acc.end())
      throw numeric_error("backward produced no gradient for '" + name + "'");
    require_same_shape(t, it->second, ("gradient for " + name).c_str());
    out.grads.emplace_back(name, std::move(it->second));
  }
  return out;
}

namespace detail {
inline constexpr char kWeightsMagic[4] = {'M', 'S', 'S', 'W'};
inline constexpr std::uint8_t kWeightsVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 1;
inline constexpr std::uint8_t kDtypeU32 = 2;
}  // namespace detail

inline void save_weights(const UNetModel& m, const std::filesystem::path& path) {
  ByteWriter w;
  w.bytes(detail::kWeightsMagic, 4);
  w.u8(detail::kWeightsVersion);
  w.u32(static_cast<std::uint32_t>(m.params.size() + 1));

  // config pseudo-tensor leads the stream
  w.str16("__config");
  w.u8(1);  // rank
  w.u32(5); // extents
  w.u8(detail::kDtypeU32);
  w.u32(static_cast<std::uint32_t>(m.config.in_channels));
  w.u32(static_cast<std::uint32_t>(m.config.out_channels));
  w.u32(static_cast<std::uint32_t>(m.config.depth));
  w.u32(static_cast<std::uint32_t>(m.config.base_width));
  w.u32(static_cast<std::uint32_t>(m.config.input_size));

  for (const auto& [name, t] : m.params) {
    w.str16(name);
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (int d = 0; d < t.rank(); ++d)
      w.u32(static_cast<std::uint32_t>(t.extent(d)));
    w.u8(detail::kDtypeF32);
    for (std::size_t i = 0; i < t.size(); ++i) w.f32(t[i]);
  }
  w.append_crc32();
  write_file_bytes(path, w.data());
}

inline UNetModel load_weights(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() < 13)
    throw corrupt_error("weights file too short: " + path.string());
  const std::size_t body_len = bytes.size() - 4;
  std::uint32_t got_crc = 0;
  for (int i = 0; i < 4; ++i)
    got_crc |= static_cast<std::uint32_t>(bytes[body_len + i]) << (8 * i);
  if (crc32_of(std::span<const std::uint8_t>(bytes.data(), body_len)) !=
      got_crc)
    throw corrupt_error("weights CRC mismatch: " + path.string());

  ByteReader r(std::span<const std::uint8_t>(bytes.data(), body_len));
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, detail::kWeightsMagic, 4) != 0)
    throw corrupt_error("bad weights magic: " + path.string());
  if (r.u8() != detail::kWeightsVersion)
    throw corrupt_error("unsupported weights version: " + path.string());
  const std::uint32_t count = r.u32();
  if (count < 1) throw corrupt_error("weights file declares no tensors");

  if (r.str16() != "__config")
    throw corrupt_error("first tensor must be __config: " + path.string());
  if (r.u8() != 1 || r.u32() != 5 || r.u8() != detail::kDtypeU32)
    throw corrupt_error("malformed __config tensor: " + path.string());
  UNetConfig cfg;
  cfg.in_channels = static_cast<int>(r.u32());
  cfg.out_channels = static_cast<int>(r.u32());
  cfg.depth = static_cast<int>(r.u32());
  cfg.base_width = static_cast<int>(r.u32());
  cfg.input_size = static_cast<int>(r.u32());
  cfg.validate();

  const auto spec = param_spec(cfg);
  UNetModel m;
  m.config = cfg;
  m.params.reserve(spec.size());

  for (std::size_t i = 0; i < spec.size(); ++i) {
    if (i + 1 >= count || r.remaining() == 0)
      throw shape_error("shape audit: missing tensor '" + spec[i].name +
                        "' (file ends after " + std::to_string(i) +
                        " parameters)");
    const std::string name = r.str16();
    const int rank = r.u8();
    std::vector<int> shape(rank);
    for (int d = 0; d < rank; ++d) shape[d] = static_cast<int>(r.u32());
    const std::uint8_t dtype = r.u8();
    if (name != spec[i].name)
      throw shape_error("shape audit: expected tensor '" + spec[i].name +
                        "', found '" + name + "'");
    if (dtype != detail::kDtypeF32)
      throw shape_error("shape audit: tensor '" + name +
                        "' has dtype code " + std::to_string(dtype));
    if (shape != spec[i].shape) {
      throw shape_error("shape audit: tensor '" + name + "' has shape " +
                        shape_string(shape) + ", expected " +
                        shape_string(spec[i].shape));
    }
    Tensor t(shape);
    for (std::size_t k = 0; k < t.size(); ++k) t[k] = r.f32();
    m.params.emplace_back(name, std::move(t));
  }
  if (count != spec.size() + 1 || r.remaining() != 0)
    throw shape_error("shape audit: file carries " + std::to_string(count - 1) +
                      " parameters, config expects " +
                      std::to_string(spec.size()));
  return m;
}

}  // namespace mss
