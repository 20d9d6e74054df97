#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "acmseg/autograd.hpp"
#include "acmseg/ops.hpp"
#include "acmseg/train.hpp"

namespace acm::train {

std::string csv_row(const EpochLog& e) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%lld,%.6g,%.6g,%.6g,%.6g,%.6g", static_cast<long long>(e.epoch),
                e.lr, e.train_loss, e.val_dsc_mean, e.val_hd95_mean, e.seconds);
  return buf;
}

std::pair<Tensor, Tensor> make_batch(const Dataset& d, std::span<const std::size_t> order) {
  std::vector<Tensor> imgs, masks;
  for (auto i : order) {
    imgs.push_back(d.images.at(i));
    masks.push_back(d.masks.at(i));
  }
  return {stack(imgs), stack(masks)};
}

MetricsReport evaluate(model::Model& m, const Dataset& data, std::array<double, 2> spacing,
                       std::int64_t batch) {
  if (data.size() == 0) fail(Errc::EmptyDataset, "evaluate on an empty dataset");
  const nn::Mode saved = m.mode;
  m.mode = nn::Mode::eval;
  MetricsAccumulator acc(m.config().num_classes, spacing);
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t start = 0; start < idx.size(); start += static_cast<std::size_t>(batch)) {
    const auto count = std::min<std::size_t>(static_cast<std::size_t>(batch), idx.size() - start);
    const auto [x, y] = make_batch(data, std::span(idx).subspan(start, count));
    const auto pred = predict_labels(m.forward(x.to(m.dtype())));
    const auto gt = labels_of(y);
    const std::int64_t h = y.shape()[1], w = y.shape()[2];
    for (std::size_t b = 0; b < count; ++b) {
      acc.add(std::span(pred).subspan(b * h * w, h * w), std::span(gt).subspan(b * h * w, h * w),
              h, w);
    }
  }
  m.mode = saved;
  return acc.report();
}

TrainResult train_loop(model::Model& m, const Dataset& train, const Dataset& val,
                       const TrainConfig& cfg) {
  if (train.size() == 0) fail(Errc::EmptyDataset, "training set is empty");
  if (cfg.batch < 1 || cfg.epochs < 1 || cfg.eval_every < 1) {
    fail(Errc::InvalidConfig, "batch, epochs and eval_every must be positive");
  }
  const auto n = static_cast<std::int64_t>(train.size());
  const std::int64_t per_epoch = (n + cfg.batch - 1) / cfg.batch;
  const std::int64_t total = cfg.max_steps > 0 ? cfg.max_steps : cfg.epochs * per_epoch;
  const std::int64_t epochs = (total + per_epoch - 1) / per_epoch;

  std::ofstream csv;
  if (!cfg.output_dir.empty()) {
    std::filesystem::create_directories(cfg.output_dir);
    csv.open(cfg.output_dir + "/train_log.csv", std::ios::trunc);
    if (!csv) fail(Errc::Io, "cannot write " + cfg.output_dir + "/train_log.csv");
    char head[64];
    std::snprintf(head, sizeof head, "# alpha=%.6g\n", cfg.loss.alpha);
    csv << head << kCsvHeader << "\n";
  }

  Rng rng(cfg.seed);
  AdamW opt(cfg.weight_decay);
  const auto params = m.parameters();
  TrainResult result;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  std::int64_t step = 0;
  for (std::int64_t epoch = 1; epoch <= epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng.engine());
    double loss_sum = 0;
    std::int64_t loss_count = 0;
    double lr = cfg.lr;
    for (std::int64_t b = 0; b < per_epoch && step < total; ++b, ++step) {
      const auto start = static_cast<std::size_t>(b * cfg.batch);
      const auto count = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch),
                                               order.size() - start);
      auto [x, y] = make_batch(train, std::span(order).subspan(start, count));
      if (cfg.augment) {
        std::vector<Tensor> imgs, masks;
        for (std::size_t i = 0; i < count; ++i) {
          Tensor img = train.images[order[start + i]].clone();
          Tensor mask = train.masks[order[start + i]].clone();
          cfg.augment(img, mask, rng);
          imgs.push_back(img);
          masks.push_back(mask);
        }
        x = stack(imgs);
        y = stack(masks);
      }
      lr = cosine_lr(step, total, cfg.lr, cfg.lr_min);
      m.mode = nn::Mode::train;
      Tape tape;
      double loss_value = 0;
      {
        TapeScope scope(tape);
        const Tensor logits = m.forward(x.to(m.dtype()));
        const Tensor loss = total_loss(logits, y, cfg.loss);
        loss_value = loss.item();
        if (!std::isfinite(loss_value)) {
          fail(Errc::NonFiniteLoss, "loss became " + std::to_string(loss_value) + " at step " +
                                        std::to_string(step) + " (epoch " +
                                        std::to_string(epoch) + ")");
        }
        tape.backward(loss, params);
      }
      opt.step(params, lr);
      result.step_losses.push_back(loss_value);
      loss_sum += loss_value;
      ++loss_count;
    }

    EpochLog log;
    log.epoch = epoch;
    log.lr = lr;
    log.train_loss = loss_sum / static_cast<double>(std::max<std::int64_t>(loss_count, 1));
    log.val_dsc_mean = std::nan("");
    log.val_hd95_mean = std::nan("");
    const bool last = epoch == epochs;
    if (val.size() > 0 && (epoch % cfg.eval_every == 0 || last)) {
      const MetricsReport r = evaluate(m, val, cfg.spacing);
      log.val_dsc_mean = r.mean_dsc;
      log.val_hd95_mean = r.mean_hd95;
      if (r.mean_dsc > result.best_dsc) {
        result.best_dsc = r.mean_dsc;
        if (!cfg.output_dir.empty()) {
          model::save_checkpoint(cfg.output_dir + "/best.acmc", m,
                                 {static_cast<std::uint64_t>(step), {}});
        }
      }
    }
    log.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (csv.is_open()) {
      csv << csv_row(log) << "\n";
      csv.flush();
    }
    if (!cfg.output_dir.empty() && last) {
      model::save_checkpoint(cfg.output_dir + "/last.acmc", m,
                             {static_cast<std::uint64_t>(step), opt.state(params)});
    }
    if (cfg.on_epoch) cfg.on_epoch(log);
    result.epochs.push_back(log);
  }
  m.mode = nn::Mode::eval;
  result.steps = step;
  return result;
}

}  // namespace acm::train
