#include "qtseg/complexity.hpp"

#include <cmath>
#include <sstream>

#include "qtseg/model.hpp"

namespace qtseg {

namespace {

// Accumulates the costs of the building blocks, mirroring the gemm and
// element counts the forward pass actually issues.
struct CostWalk {
  int64_t macs = 0;
  int64_t pointwise = 0;

  void conv(int64_t cin, int64_t cout, int64_t k, int64_t oh, int64_t ow) {
    macs += cout * cin * k * k * oh * ow;
    pointwise += cout * oh * ow;  // bias
  }

  // conv + batch norm + SiLU
  void conv_block(int64_t cin, int64_t cout, int64_t k, int64_t oh, int64_t ow) {
    conv(cin, cout, k, oh, ow);
    pointwise += 2 * cout * oh * ow;  // normalization + activation
  }

  // transposed conv (kernel == stride) + channel layer norm + GELU
  void convt_block(int64_t cin, int64_t cout, int64_t k, int64_t ih, int64_t iw) {
    const int64_t out_el = cout * (k * ih) * (k * iw);
    macs += cout * k * k * cin * ih * iw;
    pointwise += 3 * out_el;  // bias, normalization, activation
  }

  void c2f(int64_t cin, int64_t cout, int64_t blocks, int64_t h, int64_t w) {
    const int64_t mid = cout / 2;
    conv_block(cin, 2 * mid, 1, h, w);
    for (int64_t b = 0; b < blocks; ++b) {
      conv_block(mid, mid, 3, h, w);
      conv_block(mid, mid, 3, h, w);
      pointwise += mid * h * w;  // residual add
    }
    conv_block((2 + blocks) * mid, cout, 1, h, w);
  }

  void sppf(int64_t c, int64_t h, int64_t w) {
    conv_block(c, c / 2, 1, h, w);
    pointwise += 3 * (c / 2) * h * w;  // three chained max pools
    conv_block(2 * c, c, 1, h, w);
  }

  void linear(int64_t rows, int64_t din, int64_t dout) {
    macs += rows * din * dout;
    pointwise += rows * dout;  // bias
  }

  // Separate q/k/v/out projections around fused multi-head attention.
  void attention(int64_t tq, int64_t tk, int64_t model_dim, int64_t internal,
                 int64_t heads) {
    linear(tq, model_dim, internal);
    linear(tk, model_dim, internal);
    linear(tk, model_dim, internal);
    macs += 2 * tq * tk * internal;  // QK^T and probs*V
    pointwise += heads * tq * tk;    // softmax probabilities
    linear(tq, internal, model_dim);
  }

  void mlp2(int64_t rows, int64_t din, int64_t hidden, int64_t dout) {
    linear(rows, din, hidden);
    pointwise += rows * hidden;  // activation
    linear(rows, hidden, dout);
  }

  void layer_norm(int64_t numel) { pointwise += numel; }
  void add(int64_t numel) { pointwise += numel; }
};

void walk_encoder(CostWalk& cw, int64_t n, int64_t in_ch, int64_t s) {
  const int64_t s2 = s / 2, s4 = s / 4, s8 = s / 8, s16 = s / 16, s32 = s / 32;
  cw.conv_block(in_ch, n, 3, s2, s2);
  cw.conv_block(n, n * 2, 3, s4, s4);
  cw.c2f(n * 2, n * 2, 1, s4, s4);
  cw.conv_block(n * 2, n * 4, 3, s8, s8);
  cw.c2f(n * 4, n * 4, 2, s8, s8);
  cw.conv_block(n * 4, n * 8, 3, s16, s16);
  cw.c2f(n * 8, n * 8, 2, s16, s16);
  cw.conv_block(n * 8, n * 16, 3, s32, s32);
  cw.c2f(n * 16, n * 16, 1, s32, s32);
  cw.sppf(n * 16, s32, s32);
  // Top-down path (nearest upsample is a copy).
  cw.pointwise += n * 16 * s16 * s16;  // upsample writes counted as one op each
  cw.c2f(n * 24, n * 8, 1, s16, s16);
  cw.pointwise += n * 8 * s8 * s8;
  cw.c2f(n * 12, n * 4, 1, s8, s8);
  // Bottom-up path.
  cw.conv_block(n * 4, n * 4, 3, s16, s16);
  cw.c2f(n * 12, n * 8, 1, s16, s16);
  cw.conv_block(n * 8, n * 8, 3, s32, s32);
  cw.c2f(n * 24, n * 16, 1, s32, s32);
}

void walk_mlff(CostWalk& cw, int64_t n, int64_t s) {
  const int64_t s8 = s / 8, s16 = s / 16, s32 = s / 32;
  // Target stage 0 (output at s8).
  cw.conv_block(n * 4, n * 2, 1, s8, s8);
  cw.convt_block(n * 8, n, 2, s16, s16);
  cw.convt_block(n * 16, n, 4, s32, s32);
  // Target stage 1 (output at s16).
  cw.conv_block(n * 4, n * 2, 3, s16, s16);
  cw.conv_block(n * 8, n * 4, 1, s16, s16);
  cw.convt_block(n * 16, n * 2, 2, s32, s32);
  // Target stage 2 (output at s32).
  cw.conv_block(n * 4, n * 4, 3, s32, s32);
  cw.conv_block(n * 8, n * 4, 3, s32, s32);
  cw.conv_block(n * 16, n * 8, 1, s32, s32);
}

void walk_stage(CostWalk& cw, int64_t dim, int64_t tokens, int64_t pixels,
                int64_t hidden, int64_t heads, int blocks) {
  const int64_t down = dim / 2;  // cross/final attention width
  cw.add(dim * pixels);          // positional embedding add
  for (int b = 0; b < blocks; ++b) {
    cw.attention(tokens, tokens, dim, dim, heads);
    cw.layer_norm(tokens * dim);
    if (b == 0) cw.add(tokens * dim);  // entry block keeps the skip path
    cw.attention(tokens, pixels, dim, down, heads);
    cw.add(tokens * dim);
    cw.layer_norm(tokens * dim);
    cw.mlp2(tokens, dim, hidden, dim);
    cw.add(tokens * dim);
    cw.layer_norm(tokens * dim);
    cw.attention(pixels, tokens, dim, down, heads);
    cw.add(pixels * dim);
    cw.layer_norm(pixels * dim);
  }
  cw.add(tokens * dim);  // re-inject the stage's input tokens
  cw.attention(tokens, pixels, dim, down, heads);
  cw.add(tokens * dim);
  cw.layer_norm(tokens * dim);
}

void walk_decoder(CostWalk& cw, const ModelConfig& cfg, int64_t s) {
  const int64_t n = cfg.n;
  const int64_t nc = cfg.num_classes;
  const int64_t s2 = s / 2, s4 = s / 4, s8 = s / 8, s16 = s / 16, s32 = s / 32;
  const bool concat = cfg.aggregation == Aggregation::kConcat;

  walk_stage(cw, n * 16, nc, s32 * s32, cfg.mlp_hidden, cfg.heads,
             cfg.h_blocks[0]);
  cw.convt_block(n * 16, n * 8, 2, s32, s32);
  if (concat) {
    cw.conv_block(n * 16, n * 8, 1, s16, s16);
  } else {
    cw.add(n * 8 * s16 * s16);
  }
  cw.mlp2(nc, n * 16, cfg.mlp_hidden, n * 8);
  cw.add(nc * n * 8);  // join with the stage's learned tokens

  walk_stage(cw, n * 8, nc, s16 * s16, cfg.mlp_hidden, cfg.heads,
             cfg.h_blocks[1]);
  cw.convt_block(n * 8, n * 4, 2, s16, s16);
  if (concat) {
    cw.conv_block(n * 8, n * 4, 1, s8, s8);
  } else {
    cw.add(n * 4 * s8 * s8);
  }
  cw.mlp2(nc, n * 8, cfg.mlp_hidden, n * 4);
  cw.add(nc * n * 4);

  walk_stage(cw, n * 4, nc, s8 * s8, cfg.mlp_hidden, cfg.heads,
             cfg.h_blocks[2]);
  cw.convt_block(n * 4, n * 2, 2, s8, s8);
  cw.convt_block(n * 2, n * 4, 2, s4, s4);

  cw.mlp2(nc, n * 4, cfg.mlp_hidden, n * 4);  // hypernetwork
  cw.macs += nc * (n * 4) * s2 * s2;          // token x feature dot product
  cw.pointwise += nc * s * s;                 // bilinear resize to full size
}

}  // namespace

ComplexityReport count_params(const ModelConfig& config) {
  config.validate();
  QTSegModel model = QTSegModel::build(config);

  ComplexityReport r;
  std::vector<std::pair<std::string, int64_t>> buckets = {
      {"encoder", 0}, {"mlff", 0}, {"decoder", 0}};
  for (const auto& [name, t] : model.named_parameters()) {
    r.total_params += t.numel();
    for (auto& [prefix, count] : buckets) {
      if (name.rfind(prefix + ".", 0) == 0) count += t.numel();
    }
  }
  for (auto& bucket : buckets) {
    if (bucket.first == "mlff" && !config.use_mlff) continue;
    r.module_params.push_back(bucket);
  }
  return r;
}

ComplexityReport count_flops(const ModelConfig& config, int64_t input_size) {
  if (input_size % 32 != 0) {
    throw ConfigError("complexity input size must be divisible by 32, got " +
                      std::to_string(input_size));
  }
  ComplexityReport r = count_params(config);
  r.input_size = input_size;

  CostWalk cw;
  walk_encoder(cw, config.n, config.input_channels, input_size);
  if (config.use_mlff) walk_mlff(cw, config.n, input_size);
  walk_decoder(cw, config, input_size);
  r.macs = cw.macs;
  r.pointwise_ops = cw.pointwise;
  return r;
}

std::string format_report(const ComplexityReport& report) {
  auto millions = [](int64_t v) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(2);
    os << static_cast<double>(v) / 1e6 << " M";
    return os.str();
  };
  auto giga = [](int64_t v) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(3);
    os << static_cast<double>(v) / 1e9 << " G";
    return os.str();
  };

  std::ostringstream os;
  os << "Params        " << millions(report.total_params) << " ("
     << report.total_params << ")\n";
  for (const auto& [name, count] : report.module_params) {
    os << "  " << name;
    for (size_t i = name.size(); i < 12; ++i) os << ' ';
    os << millions(count) << " (" << count << ")\n";
  }
  if (report.input_size > 0) {
    os << "Input size    " << report.input_size << " x " << report.input_size
       << "\n";
    os << "MACs          " << giga(report.macs) << " (" << report.macs << ")\n";
    os << "FLOPs (1xMAC) " << giga(report.flops_1x()) << "\n";
    os << "FLOPs (2xMAC) " << giga(report.flops_2x()) << "\n";
  }
  return os.str();
}

}  // namespace qtseg
