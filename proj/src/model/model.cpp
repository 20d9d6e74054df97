#include <charconv>
#include <sstream>

#include "acmseg/model.hpp"
#include "acmseg/ops.hpp"

namespace acm::model {

namespace {

std::int64_t parse_int(const std::string& key, const std::string& v) {
  std::int64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    fail(Errc::InvalidConfig, key + ": expected an integer, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail(Errc::InvalidConfig, key + ": expected true/false, got '" + v + "'");
}

}  // namespace

void ModelConfig::validate() const {
  auto bad = [](const std::string& m) { fail(Errc::InvalidConfig, m); };
  if (input_size < 16 || input_size % 16 != 0) bad("input_size must be a positive multiple of 16");
  if (base_width < 4) bad("base_width must be at least 4");
  if (n_vss < 0) bad("n_vss must be non-negative");
  if (num_classes < 2) bad("num_classes must be at least 2");
  if (d_state < 1 || expansion_factor < 1) bad("d_state and expansion_factor must be positive");
  if (wavelet_levels < 0 || wavelet_levels > 4) bad("wavelet_levels must be in [0, 4]");
  if ((input_size / 2) % (1LL << wavelet_levels) != 0) bad("input_size too small for wavelet_levels");
  for (auto d : depths)
    if (d < 1) bad("stage depths must be positive");
  if (vss_dim < 0) bad("vss_dim must be non-negative");
}

bool set_config_key(ModelConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "base_width") cfg.base_width = parse_int(key, value);
  else if (key == "n_vss") cfg.n_vss = parse_int(key, value);
  else if (key == "num_classes") cfg.num_classes = parse_int(key, value);
  else if (key == "input_size") cfg.input_size = parse_int(key, value);
  else if (key == "use_mswt") cfg.use_mswt = parse_bool(key, value);
  else if (key == "use_vss") cfg.use_vss = parse_bool(key, value);
  else if (key == "d_state") cfg.d_state = parse_int(key, value);
  else if (key == "expansion_factor") cfg.expansion_factor = parse_int(key, value);
  else if (key == "wavelet_levels") cfg.wavelet_levels = parse_int(key, value);
  else if (key == "vss_dim") cfg.vss_dim = parse_int(key, value);
  else if (key == "share_scan_proj") cfg.share_scan_proj = parse_bool(key, value);
  else if (key == "depths") {
    std::stringstream ss(value);
    std::string item;
    std::vector<std::int64_t> d;
    while (std::getline(ss, item, ',')) d.push_back(parse_int(key, item));
    if (d.size() != 3) fail(Errc::InvalidConfig, "depths: expected three comma-separated values");
    cfg.depths = {d[0], d[1], d[2]};
  } else {
    return false;
  }
  return true;
}

std::string to_text(const ModelConfig& c) {
  std::ostringstream os;
  os << "base_width=" << c.base_width << "\n"
     << "n_vss=" << c.n_vss << "\n"
     << "num_classes=" << c.num_classes << "\n"
     << "input_size=" << c.input_size << "\n"
     << "use_mswt=" << (c.use_mswt ? "true" : "false") << "\n"
     << "use_vss=" << (c.use_vss ? "true" : "false") << "\n"
     << "d_state=" << c.d_state << "\n"
     << "expansion_factor=" << c.expansion_factor << "\n"
     << "wavelet_levels=" << c.wavelet_levels << "\n"
     << "depths=" << c.depths[0] << "," << c.depths[1] << "," << c.depths[2] << "\n"
     << "vss_dim=" << c.vss_dim << "\n"
     << "share_scan_proj=" << (c.share_scan_proj ? "true" : "false") << "\n";
  return os.str();
}

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
  cfg_.validate();
  Rng rng(seed);
  const std::int64_t C = cfg_.base_width;

  stem = nn::Conv2dParams::make("encoder.stem.conv", 3, C, 7, rng, false, 2);
  stem_bn = nn::NormParams::batch("encoder.stem.bn", C);

  const std::int64_t mids[3] = {C, 2 * C, 4 * C};
  const std::int64_t outs[3] = {4 * C, 8 * C, 16 * C};
  std::int64_t in = C;
  for (int s = 0; s < 3; ++s) {
    for (std::int64_t b = 0; b < cfg_.depths[s]; ++b) {
      const std::string name =
          "encoder.stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
      const std::int64_t stride = (s > 0 && b == 0) ? 2 : 1;
      stages[s].push_back(Bottleneck::make(name, in, mids[s], outs[s], stride, rng));
      in = outs[s];
    }
  }

  if (cfg_.has_vss()) {
    adapters.push_back(Adapters::make("encoder.adapter", 16 * C, cfg_.token_dim(), rng));
    for (std::int64_t i = 0; i < cfg_.n_vss; ++i) {
      vss.push_back(ssm::VSSBlockParams::make("encoder.vss" + std::to_string(i),
                                              cfg_.token_dim(), cfg_.expansion_factor,
                                              cfg_.d_state, cfg_.share_scan_proj, rng));
    }
  }

  const int lv = static_cast<int>(cfg_.wavelet_levels);
  up[0] = UpBlock::make("decoder.up0", 16 * C, 8 * C, cfg_.use_mswt, lv, rng);
  up[1] = UpBlock::make("decoder.up1", 8 * C, 4 * C, cfg_.use_mswt, lv, rng);
  up[2] = UpBlock::make("decoder.up2", 4 * C, C, cfg_.use_mswt, lv, rng);
  head = SegHead::make("head", C, cfg_.num_classes, rng);

  stem.collect(params_);
  stem_bn.collect(params_);
  for (auto& st : stages)
    for (auto& b : st) b.collect(params_);
  for (auto& a : adapters) a.collect(params_);
  for (auto& v : vss) v.collect(params_);
  for (auto& u : up) u.collect(params_);
  head.collect(params_);
}

std::unique_ptr<Model> Model::build(const ModelConfig& cfg, std::uint64_t seed) {
  return std::unique_ptr<Model>(new Model(cfg, seed));
}

EncoderFeatures Model::encode(const Tensor& x) {
  const std::int64_t s = cfg_.input_size;
  if (x.dim() != 4 || x.shape()[1] != 3 || x.shape()[2] != s || x.shape()[3] != s) {
    fail(Errc::ShapeMismatch, "model expects [n,3," + std::to_string(s) + "," +
                                  std::to_string(s) + "], got " + to_string(x.shape()));
  }
  EncoderFeatures f;
  f.f1 = relu(nn::batch_norm(nn::conv2d(x, stem), stem_bn, mode));
  Tensor y = nn::max_pool2d(f.f1, nn::PoolOptions{3, 3, 2, 2, 1, 1});
  Tensor* outs[3] = {&f.f2, &f.f3, &f.f4};
  for (int st = 0; st < 3; ++st) {
    for (auto& b : stages[st]) y = bottleneck(y, b, mode);
    *outs[st] = y;
  }
  if (!adapters.empty()) {
    Tensor tokens = adapter_to_tokens(f.f4, adapters[0]);
    for (const auto& v : vss) tokens = ssm::vss_block(tokens, v);
    f.f4 = adapter_to_map(tokens, adapters[0]);
  }
  return f;
}

Tensor Model::forward(const Tensor& x) {
  const EncoderFeatures f = encode(x);
  Tensor y = upsample_block(f.f4, f.f3, up[0], mode);
  y = upsample_block(y, f.f2, up[1], mode);
  y = upsample_block(y, f.f1, up[2], mode);
  return seg_head(y, head);
}

std::int64_t Model::count_params() const {
  std::int64_t n = 0;
  for (const Parameter* p : params_.params) n += p->value.numel();
  return n;
}

}  // namespace acm::model
