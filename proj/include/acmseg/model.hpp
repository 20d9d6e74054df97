#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "acmseg/nn.hpp"
#include "acmseg/ssm.hpp"
#include "acmseg/tensor.hpp"
#include "acmseg/wavelet.hpp"

namespace acm::model {

struct ModelConfig {
  std::int64_t base_width = 16;  // C
  std::int64_t n_vss = 2;        // N
  std::int64_t num_classes = 4;
  std::int64_t input_size = 64;
  bool use_mswt = true;
  bool use_vss = true;
  std::int64_t d_state = 16;
  std::int64_t expansion_factor = 2;
  std::int64_t wavelet_levels = 1;
  std::array<std::int64_t, 3> depths{3, 4, 6};
  std::int64_t vss_dim = 0;  // token width inside stage 4; 0 means 6C
  bool share_scan_proj = true;

  std::int64_t token_dim() const { return vss_dim > 0 ? vss_dim : 6 * base_width; }
  bool has_vss() const { return use_vss && n_vss > 0; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Returns false for an unknown key; InvalidConfig for a malformed value.
bool set_config_key(ModelConfig& cfg, const std::string& key, const std::string& value);
// "key=value" lines, keys without the "model." prefix.
std::string to_text(const ModelConfig& cfg);

struct EncoderFeatures {
  Tensor f1;  // [n, C, H/2, W/2]
  Tensor f2;  // [n, 4C, H/4, W/4]
  Tensor f3;  // [n, 8C, H/8, W/8]
  Tensor f4;  // [n, 16C, H/16, W/16]
};

// 1x1 -> 3x3 (stride) -> 1x1 with a projection shortcut when the shape changes.
struct Bottleneck {
  nn::Conv2dParams conv1, conv2, conv3;
  nn::NormParams bn1, bn2, bn3;
  bool has_down = false;
  nn::Conv2dParams down;
  nn::NormParams down_bn;

  static Bottleneck make(const std::string& name, std::int64_t in, std::int64_t mid,
                         std::int64_t out, std::int64_t stride, Rng& rng);
  void collect(nn::ParamList& out);
};

Tensor bottleneck(const Tensor& x, Bottleneck& b, nn::Mode mode);

// Two 3x3 conv+BN with identity residual.
struct BasicBlock {
  nn::Conv2dParams conv1, conv2;
  nn::NormParams bn1, bn2;

  static BasicBlock make(const std::string& name, std::int64_t channels, Rng& rng);
  void collect(nn::ParamList& out);
};

Tensor basic_block(const Tensor& x, BasicBlock& b, nn::Mode mode);

struct Adapters {
  nn::NormParams norm;        // over 16C
  nn::LinearParams to_tokens;  // 16C -> token dim
  nn::LinearParams to_map;     // token dim -> 16C

  static Adapters make(const std::string& name, std::int64_t channels, std::int64_t dim,
                       Rng& rng);
  void collect(nn::ParamList& out);
};

// [n,16C,h,w] -> [n,h,w,dim] and back.
Tensor adapter_to_tokens(const Tensor& f, const Adapters& a);
Tensor adapter_to_map(const Tensor& tokens, const Adapters& a);

struct UpBlock {
  nn::Conv2dParams reduce;  // 1x1, c_prev -> c_skip
  nn::DepthwiseSeparable fuse;
  BasicBlock res;
  std::vector<wavelet::MSWTParams> mswt;  // two, or empty when disabled

  static UpBlock make(const std::string& name, std::int64_t c_prev, std::int64_t c_skip,
                      bool use_mswt, int wavelet_levels, Rng& rng);
  void collect(nn::ParamList& out);
};

Tensor upsample_block(const Tensor& prev, const Tensor& skip, UpBlock& p, nn::Mode mode);

struct SegHead {
  nn::DepthwiseSeparable fuse;
  nn::Conv2dParams classifier;

  static SegHead make(const std::string& name, std::int64_t channels, std::int64_t classes,
                      Rng& rng);
  void collect(nn::ParamList& out);
};

// [n,C,h,w] -> logits [n,K,2h,2w].
Tensor seg_head(const Tensor& x, const SegHead& p);

class Model {
 public:
  static std::unique_ptr<Model> build(const ModelConfig& cfg, std::uint64_t seed);

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  DType dtype() const { return params_.params.front()->value.dtype(); }

  EncoderFeatures encode(const Tensor& x);
  Tensor forward(const Tensor& x);

  std::span<Parameter* const> parameters() const { return params_.params; }
  std::span<Buffer* const> buffers() const { return params_.buffers; }
  std::int64_t count_params() const;

  nn::Mode mode = nn::Mode::train;

  nn::Conv2dParams stem;
  nn::NormParams stem_bn;
  std::array<std::vector<Bottleneck>, 3> stages;
  std::vector<Adapters> adapters;  // one entry when VSS is active
  std::vector<ssm::VSSBlockParams> vss;
  std::array<UpBlock, 3> up;
  SegHead head;

 private:
  Model(const ModelConfig& cfg, std::uint64_t seed);

  ModelConfig cfg_;
  std::uint64_t seed_;
  nn::ParamList params_;
};

// Checkpoint extras carried alongside the model state.
struct CheckpointState {
  std::uint64_t step = 0;
  std::vector<std::pair<std::string, Tensor>> extra;  // e.g. optimizer moments
};

void save_checkpoint(const std::string& path, const Model& m, const CheckpointState& state = {});

struct LoadedCheckpoint {
  std::unique_ptr<Model> model;
  CheckpointState state;
};

LoadedCheckpoint load_checkpoint(const std::string& path);
// Loads into an existing model; ConfigMismatch when the stored config differs.
CheckpointState load_checkpoint_into(const std::string& path, Model& m);

}  // namespace acm::model
