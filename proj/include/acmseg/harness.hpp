#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "acmseg/gradcheck.hpp"
#include "acmseg/model.hpp"
#include "acmseg/rng.hpp"
#include "acmseg/tensor.hpp"
#include "acmseg/train.hpp"

namespace acm::harness {

// ---------------------------------------------------------------- tensor files
//
// "ACMT" | u8 version (1) | u8 dtype (0 = f32) | u8 rank | u32 dims[rank] |
// f32 payload, all little-endian, row-major.

std::vector<std::uint8_t> encode_tensor(const Tensor& t);
Tensor decode_tensor(const std::vector<std::uint8_t>& bytes);
void write_tensor(const std::string& path, const Tensor& t);
Tensor read_tensor(const std::string& path);

// ---------------------------------------------------------------- manifest

enum class Split { train, val, test };
const char* split_name(Split s);

struct ManifestEntry {
  std::string image;  // as written; relative paths resolve against the manifest dir
  std::string mask;
  Split split = Split::train;
};

struct Manifest {
  std::string root;  // directory of the manifest file
  std::vector<ManifestEntry> entries;

  std::string resolve(const std::string& p) const;
};

// Tab-separated "image<TAB>mask<TAB>split" lines; '#' starts a comment.
Manifest read_manifest(const std::string& path);
void write_manifest(const std::string& path, const Manifest& m);

// Loads one split. Checks file existence, [3,h,w] images, [h,w] masks with
// integral labels below num_classes, and a common shape.
train::Dataset load_split(const Manifest& m, Split split, std::int64_t num_classes);

// ---------------------------------------------------------------- run config

struct RunConfig {
  model::ModelConfig model;
  double lr = 5e-4;
  double lr_min = 0.0;
  double weight_decay = 1e-3;
  std::int64_t epochs = 30;
  std::int64_t batch = 4;
  std::int64_t max_steps = 0;
  std::int64_t eval_every = 1;
  double alpha = 0.5;
  std::uint64_t seed = 0;
  std::string augment = "none";  // comma list of hflip, vflip, rot90, noise
  std::string manifest;          // relative paths resolve against the config dir
  std::array<double, 2> spacing{1.0, 1.0};
  std::string output_dir = "run";

  train::TrainConfig train_config() const;
};

// key=value lines with model.*, train.*, data.* and io.* keys. Unknown keys and
// malformed values raise InvalidConfig.
RunConfig parse_run_config(const std::string& text, const std::string& base_dir = "");
RunConfig load_run_config(const std::string& path);
std::string to_text(const RunConfig& c);

// ---------------------------------------------------------------- phantoms

struct Ellipse {
  std::int32_t cls = 1;
  double cy = 0, cx = 0;  // centre, pixel units
  double ry = 1, rx = 1;  // semi-axes
  double theta = 0;       // rotation, radians

  bool contains(double y, double x) const;
};

struct Phantom {
  Tensor image;  // [3,s,s] in [0,1]
  Tensor mask;   // [s,s]
  std::vector<Ellipse> ellipses;
};

// One image from its own stream: background N(0.2, 0.05) and one ellipse per
// foreground class, filled with a class intensity band plus noise.
Phantom make_phantom(Rng& rng, std::int64_t size, std::int64_t num_classes);
// Image i draws from a stream derived from (seed, i) only.
Phantom make_phantom(std::uint64_t seed, std::int64_t index, std::int64_t size,
                     std::int64_t num_classes);

train::Dataset phantom_dataset(std::uint64_t seed, std::int64_t first, std::int64_t count,
                               std::int64_t size, std::int64_t num_classes);

Split split_of(std::int64_t index, std::int64_t count);

// Writes images/, masks/, manifest.tsv and ellipses.tsv under out_dir.
Manifest gen_phantoms(std::uint64_t seed, std::int64_t count, std::int64_t size,
                      std::int64_t num_classes, const std::string& out_dir);

// ---------------------------------------------------------------- augmentation

struct AugmentFlags {
  bool hflip = false;
  bool vflip = false;
  bool rot90 = false;
  bool noise = false;
  double noise_sigma = 0.02;
};

AugmentFlags parse_augment(const std::string& list);

// image [c,h,w], mask [h,w]
Tensor hflip(const Tensor& x);
Tensor vflip(const Tensor& x);
// Counter-clockwise quarter turns on the trailing two axes.
Tensor rot90(const Tensor& x, int quarter_turns);

// Each enabled flag fires with probability 1/2; rot90 picks 1-3 turns.
void augment(Tensor& image, Tensor& mask, Rng& rng, const AugmentFlags& flags);

// ---------------------------------------------------------------- PPM masks

const std::array<std::array<std::uint8_t, 3>, 9>& palette();
void write_label_ppm(const std::string& path, const std::vector<std::int32_t>& labels,
                     std::int64_t h, std::int64_t w);
// Inverse of write_label_ppm; Io for colours outside the palette.
std::vector<std::int32_t> read_label_ppm(const std::string& path, std::int64_t& h,
                                         std::int64_t& w);

// ---------------------------------------------------------------- gradient suite

struct GradSuiteEntry {
  std::string name;
  double tol = 0.0;
  GradCheckReport report;
};

// f64 central-difference checks over every layer family, the VSS block, MSWT,
// adapters, the seg head and a small end-to-end model.
std::vector<GradSuiteEntry> run_grad_suite(std::uint64_t seed = 1);

// ---------------------------------------------------------------- CLI

// 0 success, 1 validation error (usage, config, labels), 2 runtime error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace acm::harness
