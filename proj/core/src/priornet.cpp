#include "d2ip/priornet.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "d2ip/error.hpp"

namespace d2ip {

using nn::ConvSpec;
using nn::Tape;
using nn::Var;

void NetworkConfig::validate() const {
  if (depth != 3) throw InvalidArgument("network depth must be 3");
  if (base_channels < 4) throw InvalidArgument("base_channels must be >= 4");
  if (aspp_dilations.empty()) throw InvalidArgument("ASPP needs at least one dilation");
  for (std::size_t i = 0; i < aspp_dilations.size(); ++i) {
    if (aspp_dilations[i] < 1 || (i > 0 && aspp_dilations[i] <= aspp_dilations[i - 1])) {
      throw InvalidArgument("ASPP dilations must be positive and strictly increasing");
    }
  }
}

std::uint64_t NetworkConfig::hash() const {
  std::vector<int> fields{base_channels, depth, use_depthwise ? 1 : 0};
  fields.insert(fields.end(), aspp_dilations.begin(), aspp_dilations.end());
  return fnv1a(std::as_bytes(std::span<const int>(fields)));
}

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::kaiming_init:
      return "kaiming_init";
    case Provenance::upws:
      return "upws";
    case Provenance::tpp:
      return "tpp";
  }
  return "unknown";
}

Provenance provenance_from_string(const std::string& name) {
  if (name == "kaiming_init") return Provenance::kaiming_init;
  if (name == "upws") return Provenance::upws;
  if (name == "tpp") return Provenance::tpp;
  throw InvalidArgument("unknown provenance '" + name + "'");
}

std::size_t ParamSpec::size() const noexcept {
  std::size_t n = 1;
  for (int d : dims) n *= static_cast<std::size_t>(d);
  return n;
}

std::size_t ParameterState::scalar_count() const noexcept {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.values.size();
  return n;
}

std::uint64_t ParameterState::checksum() const {
  std::uint64_t h = fnv1a(std::span<const std::byte>{});
  for (const auto& t : tensors) h = fnv1a(std::as_bytes(std::span<const double>(t.values)), h);
  return h;
}

bool ParameterState::all_finite() const {
  for (const auto& t : tensors) {
    for (double v : t.values) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

ParameterGradients zero_gradients(const ParameterState& theta) {
  ParameterGradients g;
  g.reserve(theta.tensors.size());
  for (const auto& t : theta.tensors) g.emplace_back(t.values.size(), 0.0);
  return g;
}

std::size_t dense_conv_parameters(int in_channels, int out_channels, int kernel) {
  return static_cast<std::size_t>(kernel) * kernel * kernel * in_channels * out_channels +
         static_cast<std::size_t>(out_channels);
}

std::size_t separable_conv_parameters(int in_channels, int out_channels, int kernel) {
  return static_cast<std::size_t>(kernel) * kernel * kernel * in_channels +
         static_cast<std::size_t>(in_channels) +
         static_cast<std::size_t>(in_channels) * out_channels +
         static_cast<std::size_t>(out_channels);
}

namespace {

struct Conv {
  int weight = -1;
  int bias = -1;
  ConvSpec spec;
};

struct Norm {
  int gamma = -1;
  int beta = -1;
};

// Depthwise + pointwise pair, or a single dense conv when depthwise
// factorization is disabled.
struct SepConv {
  bool separable = true;
  Conv depthwise;
  Conv pointwise;
  Conv dense;
};

struct ResBlock {
  SepConv conv1;
  Norm norm1;
  SepConv conv2;
  Norm norm2;
  bool has_shortcut = false;
  Conv shortcut;
};

struct SEUnit {
  Conv fc1;
  Conv fc2;
};

struct AttentionGate {
  Conv query;
  Conv key;
  Conv psi;
};

struct EncoderStage {
  SEUnit se;
  ResBlock block;
  SepConv down;
};

struct DecoderStage {
  AttentionGate gate;
  ResBlock block;
};

}  // namespace

struct FastResUNet::Layers {
  std::vector<ParamSpec> schema;
  Conv stem;
  Norm stem_norm;
  std::vector<EncoderStage> encoder;
  std::vector<SepConv> aspp_branches;
  Conv aspp_proj;
  Norm aspp_norm;
  std::vector<DecoderStage> decoder;  // coarsest first
  Conv tail;
};

namespace {

class Builder {
 public:
  Builder(FastResUNet::Layers& layers, bool depthwise) : L_(layers), depthwise_(depthwise) {}

  Conv conv(const std::string& name, ConvSpec spec) {
    Conv c;
    c.spec = spec;
    c.weight = add(name + ".weight",
                   {spec.out_channels, spec.in_channels / spec.groups, spec.kernel, spec.kernel,
                    spec.kernel},
                   ParamKind::conv_weight, spec.fan_in());
    c.bias = add(name + ".bias", {spec.out_channels}, ParamKind::bias, 1);
    return c;
  }

  Norm norm(const std::string& name, int channels) {
    return {add(name + ".gamma", {channels}, ParamKind::norm_scale, 1),
            add(name + ".beta", {channels}, ParamKind::norm_shift, 1)};
  }

  SepConv sep(const std::string& name, int cin, int cout, int k, int stride = 1,
              int dilation = 1) {
    SepConv s;
    s.separable = depthwise_;
    if (depthwise_) {
      s.depthwise = conv(name + ".dw", {cin, cin, k, stride, dilation, cin});
      s.pointwise = conv(name + ".pw", {cin, cout, 1, 1, 1, 1});
    } else {
      s.dense = conv(name, {cin, cout, k, stride, dilation, 1});
    }
    return s;
  }

  ResBlock res(const std::string& name, int cin, int cout) {
    ResBlock b;
    b.conv1 = sep(name + ".conv1", cin, cout, 3);
    b.norm1 = norm(name + ".norm1", cout);
    b.conv2 = sep(name + ".conv2", cout, cout, 3);
    b.norm2 = norm(name + ".norm2", cout);
    b.has_shortcut = cin != cout;
    if (b.has_shortcut) b.shortcut = conv(name + ".shortcut", {cin, cout, 1, 1, 1, 1});
    return b;
  }

  SEUnit se(const std::string& name, int channels) {
    const int hidden = std::max(2, channels / 4);
    return {conv(name + ".fc1", {channels, hidden, 1, 1, 1, 1}),
            conv(name + ".fc2", {hidden, channels, 1, 1, 1, 1})};
  }

  AttentionGate gate(const std::string& name, int gate_channels, int skip_channels) {
    return {conv(name + ".query", {gate_channels, skip_channels, 1, 1, 1, 1}),
            conv(name + ".key", {skip_channels, skip_channels, 1, 2, 1, 1}),
            conv(name + ".psi", {skip_channels, 1, 1, 1, 1, 1})};
  }

 private:
  int add(std::string name, std::vector<int> dims, ParamKind kind, int fan_in) {
    L_.schema.push_back({std::move(name), std::move(dims), kind, fan_in});
    return static_cast<int>(L_.schema.size() - 1);
  }

  FastResUNet::Layers& L_;
  bool depthwise_;
};

std::unique_ptr<FastResUNet::Layers> build_layers(const NetworkConfig& cfg) {
  cfg.validate();
  auto layers = std::make_unique<FastResUNet::Layers>();
  Builder b(*layers, cfg.use_depthwise);
  const int base = cfg.base_channels;

  layers->stem = b.conv("stem.conv", {1, base, 3, 1, 1, 1});
  layers->stem_norm = b.norm("stem.norm", base);

  int channels = base;
  std::vector<int> skip_channels;
  for (int k = 0; k < cfg.depth; ++k) {
    const std::string name = "enc" + std::to_string(k + 1);
    const int out = base << k;
    EncoderStage stage;
    stage.se = b.se(name + ".se", channels);
    stage.block = b.res(name + ".res", channels, out);
    stage.down = b.sep(name + ".down", out, out, 3, 2);
    layers->encoder.push_back(stage);
    skip_channels.push_back(out);
    channels = out;
  }

  const int bottleneck = base << cfg.depth;
  for (std::size_t i = 0; i < cfg.aspp_dilations.size(); ++i) {
    layers->aspp_branches.push_back(b.sep("aspp.branch" + std::to_string(i), channels, bottleneck,
                                          3, 1, cfg.aspp_dilations[i]));
  }
  const int aspp_in = bottleneck * static_cast<int>(cfg.aspp_dilations.size());
  layers->aspp_proj = b.conv("aspp.proj", {aspp_in, bottleneck, 1, 1, 1, 1});
  layers->aspp_norm = b.norm("aspp.norm", bottleneck);
  channels = bottleneck;

  for (int k = cfg.depth - 1; k >= 0; --k) {
    const std::string name = "dec" + std::to_string(k + 1);
    const int skip = skip_channels[k];
    DecoderStage stage;
    stage.gate = b.gate(name + ".att", channels, skip);
    stage.block = b.res(name + ".res", channels + skip, skip);
    layers->decoder.push_back(stage);
    channels = skip;
  }

  layers->tail = b.conv("tail.conv", {channels, 1, 3, 1, 1, 1});
  return layers;
}

// Graph construction helpers over a tape whose first nodes are the
// parameter leaves (node id == schema index).
class GraphBuilder {
 public:
  explicit GraphBuilder(Tape& t) : t_(t) {}

  Var conv(const Conv& c, Var x) { return nn::conv3d(t_, x, c.weight, c.bias, c.spec); }
  Var norm(const Norm& n, Var x) { return nn::layer_norm(t_, x, n.gamma, n.beta); }

  Var sep(const SepConv& s, Var x) {
    return s.separable ? conv(s.pointwise, conv(s.depthwise, x)) : conv(s.dense, x);
  }

  Var res(const ResBlock& b, Var x) {
    Var h = nn::silu(t_, norm(b.norm1, sep(b.conv1, x)));
    h = norm(b.norm2, sep(b.conv2, h));
    const Var shortcut = b.has_shortcut ? conv(b.shortcut, x) : x;
    return nn::silu(t_, nn::add(t_, h, shortcut));
  }

  Var se(const SEUnit& s, Var x) {
    const Var pooled = nn::global_avg_pool(t_, x);
    const Var hidden = nn::silu(t_, conv(s.fc1, pooled));
    const Var excite = nn::sigmoid(t_, conv(s.fc2, hidden));
    return nn::scale_channels(t_, x, excite);
  }

  // Additive attention: coefficients are computed at the gating resolution
  // and trilinearly resampled onto the skip connection.
  Var gate(const AttentionGate& a, Var g, Var skip) {
    const Var q = conv(a.query, g);
    const Var k = conv(a.key, skip);
    const Var coeff = nn::sigmoid(t_, conv(a.psi, nn::silu(t_, nn::add(t_, q, k))));
    return nn::gate_spatial(t_, skip, nn::upsample2x(t_, coeff));
  }

 private:
  Tape& t_;
};

}  // namespace

FastResUNet::FastResUNet(NetworkConfig cfg, const GridGeometry& grid)
    : cfg_(std::move(cfg)),
      rows_(grid.rows()),
      cols_(grid.cols()),
      planes_(grid.planes()),
      layers_(build_layers(cfg_)) {
  const int factor = 1 << cfg_.depth;
  if (rows_ % factor != 0 || cols_ % factor != 0 || planes_ % factor != 0) {
    throw InvalidArgument("grid " + std::to_string(rows_) + "x" + std::to_string(cols_) + "x" +
                          std::to_string(planes_) + " is not divisible by " +
                          std::to_string(factor));
  }
}

FastResUNet::~FastResUNet() = default;
FastResUNet::FastResUNet(FastResUNet&&) noexcept = default;
FastResUNet& FastResUNet::operator=(FastResUNet&&) noexcept = default;

const std::vector<ParamSpec>& FastResUNet::schema() const noexcept { return layers_->schema; }

void FastResUNet::check(const ParameterState& theta) const {
  const auto& schema = layers_->schema;
  if (theta.tensors.size() != schema.size()) {
    throw InvalidArgument("parameter state has " + std::to_string(theta.tensors.size()) +
                          " tensors, schema expects " + std::to_string(schema.size()));
  }
  for (std::size_t i = 0; i < schema.size(); ++i) {
    const auto& t = theta.tensors[i];
    if (t.name != schema[i].name || t.dims != schema[i].dims ||
        t.values.size() != schema[i].size()) {
      throw InvalidArgument("parameter tensor '" + t.name + "' does not match schema entry '" +
                            schema[i].name + "'");
    }
  }
}

ForwardPass FastResUNet::run(const ParameterState& theta, const NoiseInput& z) const {
  check(theta);
  if (z.z.rows() != rows_ || z.z.cols() != cols_ || z.z.planes() != planes_) {
    throw InvalidArgument("noise input shape does not match the network grid");
  }
  const Layers& L = *layers_;

  ForwardPass pass;
  pass.tape_ = std::make_unique<Tape>();
  Tape& t = *pass.tape_;
  for (std::size_t i = 0; i < theta.tensors.size(); ++i) {
    t.parameter(static_cast<int>(i), theta.tensors[i].values);
  }
  GraphBuilder g(t);

  const auto zdata = z.z.data();
  Var h = t.constant({1, planes_, rows_, cols_}, {zdata.begin(), zdata.end()});
  h = nn::silu(t, g.norm(L.stem_norm, g.conv(L.stem, h)));

  std::vector<Var> skips;
  for (const auto& stage : L.encoder) {
    h = g.res(stage.block, g.se(stage.se, h));
    skips.push_back(h);
    h = g.sep(stage.down, h);
  }

  std::vector<Var> branches;
  for (const auto& branch : L.aspp_branches) branches.push_back(g.sep(branch, h));
  h = nn::concat_channels(t, branches);
  h = nn::silu(t, g.norm(L.aspp_norm, g.conv(L.aspp_proj, h)));

  for (std::size_t k = 0; k < L.decoder.size(); ++k) {
    const auto& stage = L.decoder[k];
    const Var skip = skips[skips.size() - 1 - k];
    const Var gated = g.gate(stage.gate, h, skip);
    const Var up = nn::upsample2x(t, h);
    const Var parts[] = {up, gated};
    h = g.res(stage.block, nn::concat_channels(t, parts));
  }

  const Var out = nn::sigmoid(t, g.conv(L.tail, h));
  pass.output_var_ = out;
  pass.output_ = Volume(rows_, cols_, planes_);
  const auto ov = t.value(out);
  std::copy(ov.begin(), ov.end(), pass.output_.data().begin());
  return pass;
}

Volume FastResUNet::forward(const ParameterState& theta, const NoiseInput& z) const {
  return run(theta, z).output();
}

void ForwardPass::backward(std::span<const double> grad_output, ParameterGradients& grads) {
  if (!tape_) throw InvalidArgument("forward pass has no tape");
  tape_->backward(output_var_, grad_output, grads);
}

std::vector<ParamSpec> parameter_schema(const NetworkConfig& cfg) {
  return build_layers(cfg)->schema;
}

ParameterState init_parameters(const NetworkConfig& cfg) {
  const auto schema = parameter_schema(cfg);
  std::mt19937_64 rng(cfg.seed);
  ParameterState theta;
  theta.provenance = Provenance::kaiming_init;
  theta.config_hash = cfg.hash();
  theta.tensors.reserve(schema.size());
  for (const auto& spec : schema) {
    NamedTensor t{spec.name, spec.dims, std::vector<double>(spec.size(), 0.0)};
    switch (spec.kind) {
      case ParamKind::conv_weight: {
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / spec.fan_in));
        for (double& v : t.values) v = dist(rng);
        break;
      }
      case ParamKind::norm_scale:
        std::fill(t.values.begin(), t.values.end(), 1.0);
        break;
      case ParamKind::bias:
      case ParamKind::norm_shift:
        break;
    }
    theta.tensors.push_back(std::move(t));
  }
  return theta;
}

std::size_t count_parameters(const NetworkConfig& cfg) {
  std::size_t n = 0;
  for (const auto& spec : parameter_schema(cfg)) n += spec.size();
  return n;
}

std::uint64_t NoiseInput::checksum() const {
  return fnv1a(std::as_bytes(z.data()));
}

NoiseInput sample_noise_input(const GridGeometry& grid, std::uint64_t seed) {
  NoiseInput input{Volume(grid), seed};
  std::mt19937_64 rng(seed);
  // 53 random mantissa bits give a uniform draw on [0, 1) that never hits 1.
  for (double& v : input.z.data()) v = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return input;
}

}  // namespace d2ip
