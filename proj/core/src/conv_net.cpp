#include "promptlens/metrics/conv_net.hpp"

#include <algorithm>
#include <cstring>
#include <limits>

#include <Eigen/Core>

#include "promptlens/error.hpp"

namespace promptlens {

std::int64_t Tensor::numel() const noexcept {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

SafeTensors SafeTensors::parse(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) throw Error(ErrorCode::kParseError, "safetensors buffer too short");
  std::uint64_t header_size = 0;
  for (int i = 7; i >= 0; --i) header_size = (header_size << 8) | bytes[static_cast<std::size_t>(i)];
  if (header_size > bytes.size() - 8) throw Error(ErrorCode::kParseError, "safetensors header overruns buffer");
  const std::string header_text(reinterpret_cast<const char*>(bytes.data() + 8), header_size);
  auto header = nlohmann::json::parse(header_text, nullptr, false);
  if (header.is_discarded() || !header.is_object()) throw Error(ErrorCode::kParseError, "bad safetensors header");

  const auto data = bytes.subspan(8 + header_size);
  SafeTensors out;
  for (auto& [name, entry] : header.items()) {
    if (name == "__metadata__") {
      for (auto& [k, v] : entry.items()) out.metadata[k] = v.get<std::string>();
      continue;
    }
    if (entry.value("dtype", "") != "F32") {
      throw Error(ErrorCode::kParseError, "tensor '" + name + "' is not F32");
    }
    Tensor t;
    t.shape = entry.at("shape").get<std::vector<std::int64_t>>();
    const auto offsets = entry.at("data_offsets").get<std::vector<std::uint64_t>>();
    if (offsets.size() != 2 || offsets[1] < offsets[0] || offsets[1] > data.size() ||
        offsets[1] - offsets[0] != static_cast<std::uint64_t>(t.numel()) * sizeof(float)) {
      throw Error(ErrorCode::kParseError, "tensor '" + name + "' has inconsistent offsets");
    }
    t.values.resize(static_cast<std::size_t>(t.numel()));
    std::memcpy(t.values.data(), data.data() + offsets[0], offsets[1] - offsets[0]);
    out.tensors.emplace(name, std::move(t));
  }
  return out;
}

std::vector<std::uint8_t> SafeTensors::serialize() const {
  nlohmann::json header = nlohmann::json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    const std::uint64_t size = static_cast<std::uint64_t>(t.values.size()) * sizeof(float);
    header[name] = {{"dtype", "F32"}, {"shape", t.shape}, {"data_offsets", {offset, offset + size}}};
    offset += size;
  }
  if (!metadata.empty()) header["__metadata__"] = metadata;
  std::string text = header.dump();
  while (text.size() % 8 != 0) text.push_back(' ');

  std::vector<std::uint8_t> out(8 + text.size() + offset);
  const std::uint64_t n = text.size();
  for (int i = 0; i < 8; ++i) out[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(n >> (8 * i));
  std::memcpy(out.data() + 8, text.data(), text.size());
  std::uint8_t* cursor = out.data() + 8 + text.size();
  for (const auto& [name, t] : tensors) {
    std::memcpy(cursor, t.values.data(), t.values.size() * sizeof(float));
    cursor += t.values.size() * sizeof(float);
  }
  return out;
}

const Tensor& SafeTensors::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw Error(ErrorCode::kWeightsUnavailable, "missing tensor '" + name + "'");
  return it->second;
}

ConvNet ConvNet::from_safetensors(const SafeTensors& weights) {
  auto meta = weights.metadata.find("promptlens.arch");
  if (meta == weights.metadata.end()) throw Error(ErrorCode::kWeightsUnavailable, "weights lack promptlens.arch");
  ConvNet net;
  net.arch_ = nlohmann::json::parse(meta->second, nullptr, false);
  if (net.arch_.is_discarded()) throw Error(ErrorCode::kWeightsUnavailable, "promptlens.arch is not JSON");

  try {
    net.signed_input_ = net.arch_.value("input", "signed") == "signed";
    const auto shift = net.arch_.value("shift", std::vector<float>{0, 0, 0});
    const auto scale = net.arch_.value("scale", std::vector<float>{1, 1, 1});
    if (shift.size() != 3 || scale.size() != 3) throw Error(ErrorCode::kWeightsUnavailable, "shift/scale need 3 values");
    for (int c = 0; c < 3; ++c) {
      net.shift_[c] = shift[static_cast<std::size_t>(c)];
      net.scale_[c] = scale[static_cast<std::size_t>(c)];
    }

    int channels = 3;
    int reduction = 1;
    for (const auto& spec : net.arch_.at("layers")) {
      const std::string op = spec.at("op");
      Layer layer;
      if (op == "conv") {
        layer.op = Layer::Op::kConv;
        const std::string name = spec.at("name");
        const Tensor& w = weights.at(name + ".weight");
        if (w.shape.size() != 4 || w.shape[1] != channels) {
          throw Error(ErrorCode::kWeightsUnavailable, "conv '" + name + "' has unexpected shape");
        }
        layer.out_channels = static_cast<int>(w.shape[0]);
        layer.in_channels = channels;
        layer.kernel_h = static_cast<int>(w.shape[2]);
        layer.kernel_w = static_cast<int>(w.shape[3]);
        layer.stride = spec.value("stride", 1);
        layer.padding = spec.value("padding", 0);
        layer.weight = w.values;
        if (auto b = weights.tensors.find(name + ".bias"); b != weights.tensors.end()) {
          layer.bias = b->second.values;
        } else {
          layer.bias.assign(static_cast<std::size_t>(layer.out_channels), 0.0f);
        }
        if (static_cast<int>(layer.bias.size()) != layer.out_channels) {
          throw Error(ErrorCode::kWeightsUnavailable, "conv '" + name + "' bias size mismatch");
        }
        channels = layer.out_channels;
        reduction *= layer.stride;
      } else if (op == "relu") {
        layer.op = Layer::Op::kRelu;
      } else if (op == "maxpool") {
        layer.op = Layer::Op::kMaxPool;
        layer.kernel_h = layer.kernel_w = spec.value("kernel", 2);
        layer.stride = spec.value("stride", layer.kernel_h);
        reduction *= layer.stride;
      } else if (op == "tap") {
        layer.op = Layer::Op::kTap;
        ++net.tap_count_;
      } else {
        throw Error(ErrorCode::kWeightsUnavailable, "unknown layer op '" + op + "'");
      }
      net.layers_.push_back(std::move(layer));
    }
    net.min_input_ = reduction;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kWeightsUnavailable, std::string("malformed promptlens.arch: ") + e.what());
  }
  if (net.tap_count_ == 0) throw Error(ErrorCode::kWeightsUnavailable, "network has no feature taps");
  return net;
}

namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

FeatureMap conv2d(const FeatureMap& in, int out_channels, int kh, int kw, int stride, int padding,
                  const std::vector<float>& weight, const std::vector<float>& bias) {
  const int out_h = (in.height + 2 * padding - kh) / stride + 1;
  const int out_w = (in.width + 2 * padding - kw) / stride + 1;
  if (out_h < 1 || out_w < 1) throw Error(ErrorCode::kDimensionMismatch, "input too small for convolution");
  const int patch = in.channels * kh * kw;
  const int spatial = out_h * out_w;

  RowMatrix cols(patch, spatial);
  for (int c = 0; c < in.channels; ++c) {
    const float* src = in.channel(c);
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        float* dst = cols.row((c * kh + ky) * kw + kx).data();
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride + ky - padding;
          float* dst_row = dst + oy * out_w;
          if (iy < 0 || iy >= in.height) {
            std::fill(dst_row, dst_row + out_w, 0.0f);
            continue;
          }
          const float* src_row = src + static_cast<std::size_t>(iy) * in.width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride + kx - padding;
            dst_row[ox] = (ix >= 0 && ix < in.width) ? src_row[ix] : 0.0f;
          }
        }
      }
    }
  }

  FeatureMap out{out_channels, out_h, out_w, std::vector<float>(static_cast<std::size_t>(out_channels) * spatial)};
  Eigen::Map<const RowMatrix> w(weight.data(), out_channels, patch);
  Eigen::Map<RowMatrix> result(out.data.data(), out_channels, spatial);
  result.noalias() = w * cols;
  for (int o = 0; o < out_channels; ++o) result.row(o).array() += bias[static_cast<std::size_t>(o)];
  return out;
}

FeatureMap maxpool(const FeatureMap& in, int kernel, int stride) {
  const int out_h = (in.height - kernel) / stride + 1;
  const int out_w = (in.width - kernel) / stride + 1;
  if (out_h < 1 || out_w < 1) throw Error(ErrorCode::kDimensionMismatch, "input too small for pooling");
  FeatureMap out{in.channels, out_h, out_w, std::vector<float>(static_cast<std::size_t>(in.channels) * out_h * out_w)};
  for (int c = 0; c < in.channels; ++c) {
    const float* src = in.channel(c);
    float* dst = out.channel(c);
    for (int oy = 0; oy < out_h; ++oy) {
      for (int ox = 0; ox < out_w; ++ox) {
        float best = -std::numeric_limits<float>::infinity();
        for (int ky = 0; ky < kernel; ++ky) {
          const float* row = src + static_cast<std::size_t>(oy * stride + ky) * in.width + ox * stride;
          for (int kx = 0; kx < kernel; ++kx) best = std::max(best, row[kx]);
        }
        dst[oy * out_w + ox] = best;
      }
    }
  }
  return out;
}

}  // namespace

std::vector<FeatureMap> ConvNet::forward(const Image& image) const {
  FeatureMap x{3, image.height, image.width, std::vector<float>(image.pixel_count() * 3)};
  for (int c = 0; c < 3; ++c) {
    float* dst = x.channel(c);
    for (std::size_t i = 0; i < image.pixel_count(); ++i) {
      const float v = image.rgb[i * 3 + static_cast<std::size_t>(c)];
      const float normalized = signed_input_ ? v / 127.5f - 1.0f : v / 255.0f;
      dst[i] = (normalized - shift_[c]) / scale_[c];
    }
  }

  std::vector<FeatureMap> taps;
  for (const Layer& layer : layers_) {
    switch (layer.op) {
      case Layer::Op::kConv:
        x = conv2d(x, layer.out_channels, layer.kernel_h, layer.kernel_w, layer.stride, layer.padding, layer.weight,
                   layer.bias);
        break;
      case Layer::Op::kRelu:
        for (float& v : x.data) v = std::max(v, 0.0f);
        break;
      case Layer::Op::kMaxPool:
        x = maxpool(x, layer.kernel_h, layer.stride);
        break;
      case Layer::Op::kTap:
        taps.push_back(x);
        break;
    }
  }
  return taps;
}

}  // namespace promptlens
