#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "acmseg/model.hpp"
#include "acmseg/rng.hpp"
#include "acmseg/tensor.hpp"

namespace acm::train {

// ---------------------------------------------------------------- losses

struct LossConfig {
  double alpha = 0.5;        // Dice weight
  double dice_smooth = 1.0;  // epsilon in numerator and denominator
};

// target [n,h,w] holds integral labels in [0, K); logits [n,K,h,w].
Tensor dice_loss(const Tensor& logits, const Tensor& target, double smooth = 1.0);
Tensor ce_loss(const Tensor& logits, const Tensor& target);
Tensor total_loss(const Tensor& logits, const Tensor& target, const LossConfig& cfg = {});

// ---------------------------------------------------------------- metrics

struct Mask {
  std::int64_t h = 0, w = 0;
  std::vector<std::uint8_t> data;  // row-major, nonzero = foreground

  std::int64_t count() const;
};

Mask mask_from_labels(std::span<const std::int32_t> labels, std::int64_t h, std::int64_t w,
                      std::int32_t cls);

// 2|P n G| / (|P| + |G|); both empty gives 1, exactly one empty gives 0.
double dsc_metric(const Mask& pred, const Mask& gt);

// Foreground pixels with at least one background 4-neighbour; outside the
// image counts as background. Returned as flat indices.
std::vector<std::int64_t> boundary_pixels(const Mask& m);

// Pools d(a, B) for a in A and d(b, A) for b in B over the two boundary sets,
// sorts ascending and returns element ceil(q * len) - 1. Distances are
// Euclidean between pixel centres scaled by spacing (sy, sx). Empty when
// either boundary set is empty. q = 1 gives the Hausdorff distance.
std::optional<double> boundary_percentile(const Mask& pred, const Mask& gt,
                                          std::array<double, 2> spacing, double q);
std::optional<double> hd95(const Mask& pred, const Mask& gt,
                           std::array<double, 2> spacing = {1.0, 1.0});

struct MetricsReport {
  std::int64_t num_classes = 0;
  std::vector<double> class_dsc;   // foreground classes 1..K-1, mean over images
  std::vector<double> class_hd95;  // mean over images where defined, NaN if never
  double mean_dsc = 0.0;
  double mean_hd95 = 0.0;          // over defined (image, class) cases, NaN if none
  std::int64_t cases = 0;          // images x foreground classes
  std::int64_t undefined_hd95 = 0;

  std::string to_string() const;
};

// Accumulates per-image results for foreground classes.
class MetricsAccumulator {
 public:
  MetricsAccumulator(std::int64_t num_classes, std::array<double, 2> spacing);
  void add(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt, std::int64_t h,
           std::int64_t w);
  MetricsReport report() const;

 private:
  std::int64_t k_;
  std::array<double, 2> spacing_;
  std::vector<double> dsc_sum_, hd_sum_;
  std::vector<std::int64_t> hd_count_;
  std::int64_t images_ = 0;
};

// Argmax over the class axis: logits [n,K,h,w] -> labels n*h*w.
std::vector<std::int32_t> predict_labels(const Tensor& logits);
std::vector<std::int32_t> labels_of(const Tensor& mask);

// ---------------------------------------------------------------- optimizer

// Bias-corrected Adam with decoupled weight decay p <- p (1 - lr wd) on
// parameters flagged for decay.
class AdamW {
 public:
  explicit AdamW(double weight_decay = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
                 double eps = 1e-8);

  void step(std::span<Parameter* const> params, double lr);
  std::int64_t steps() const { return t_; }

  // Moments as named tensors "optim.m.<param>" / "optim.v.<param>" and the step.
  std::vector<std::pair<std::string, Tensor>> state(std::span<Parameter* const> params) const;
  void load_state(std::span<Parameter* const> params,
                  const std::vector<std::pair<std::string, Tensor>>& state, std::int64_t t);

 private:
  double wd_, b1_, b2_, eps_;
  std::int64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

// lr_min + (lr0 - lr_min) (1 + cos(pi t / T)) / 2
double cosine_lr(std::int64_t t, std::int64_t total, double lr0, double lr_min = 0.0);

// ---------------------------------------------------------------- loops

struct Dataset {
  std::vector<Tensor> images;  // [3,h,w]
  std::vector<Tensor> masks;   // [h,w] integral labels

  std::size_t size() const { return images.size(); }
};

struct EpochLog {
  std::int64_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_dsc_mean = 0.0;
  double val_hd95_mean = 0.0;
  double seconds = 0.0;
};

using AugmentFn = std::function<void(Tensor& image, Tensor& mask, Rng& rng)>;

struct TrainConfig {
  double lr = 5e-4;
  double lr_min = 0.0;
  double weight_decay = 1e-3;
  LossConfig loss;
  std::int64_t epochs = 30;
  std::int64_t batch = 4;
  std::int64_t max_steps = 0;  // > 0 caps the run (and the schedule) at this many steps
  std::int64_t eval_every = 1;
  std::uint64_t seed = 0;
  std::array<double, 2> spacing{1.0, 1.0};
  std::string output_dir;  // empty: no CSV or checkpoints
  AugmentFn augment;
  std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  std::vector<double> step_losses;
  double best_dsc = -1.0;
  std::int64_t steps = 0;
};

TrainResult train_loop(model::Model& m, const Dataset& train, const Dataset& val,
                       const TrainConfig& cfg);

// Eval-mode forward over the dataset in chunks of `batch`.
MetricsReport evaluate(model::Model& m, const Dataset& data,
                       std::array<double, 2> spacing = {1.0, 1.0}, std::int64_t batch = 8);

inline const char* kCsvHeader = "epoch,lr,train_loss,val_dsc_mean,val_hd95_mean,seconds";
std::string csv_row(const EpochLog& e);

// Stacks the samples listed in `order` into [b,3,h,w] images and [b,h,w] labels.
std::pair<Tensor, Tensor> make_batch(const Dataset& d, std::span<const std::size_t> order);

}  // namespace acm::train
