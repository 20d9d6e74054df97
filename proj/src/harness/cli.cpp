#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>

#include "acmseg/harness.hpp"
#include "acmseg/ops.hpp"

namespace acm::harness {

namespace fs = std::filesystem;

namespace {

bool is_validation(Errc c) {
  switch (c) {
    case Errc::InvalidConfig:
    case Errc::ConfigMismatch:
    case Errc::LabelOutOfRange:
    case Errc::EmptyDataset:
      return true;
    default:
      return false;
  }
}

int cmd_gen_data(std::uint64_t seed, std::int64_t count, std::int64_t size, std::int64_t classes,
                 const std::string& out_dir, std::ostream& out) {
  const Manifest m = gen_phantoms(seed, count, size, classes, out_dir);
  std::int64_t n[3] = {0, 0, 0};
  for (const auto& e : m.entries) ++n[static_cast<int>(e.split)];
  out << "wrote " << m.entries.size() << " phantoms to " << out_dir << " (train " << n[0] << ", val "
      << n[1] << ", test " << n[2] << ")\n";
  return 0;
}

int cmd_train(const std::string& config_path, std::ostream& out) {
  const RunConfig rc = load_run_config(config_path);
  if (rc.manifest.empty()) fail(Errc::InvalidConfig, "data.manifest is required for training");
  const Manifest man = read_manifest(rc.manifest);
  const train::Dataset tr = load_split(man, Split::train, rc.model.num_classes);
  const train::Dataset val = load_split(man, Split::val, rc.model.num_classes);
  auto m = model::Model::build(rc.model, rc.seed);
  fs::create_directories(rc.output_dir);
  {
    std::ofstream f(fs::path(rc.output_dir) / "config.txt");
    f << to_text(rc);
  }
  train::TrainConfig tc = rc.train_config();
  tc.on_epoch = [&out](const train::EpochLog& e) {
    char line[160];
    std::snprintf(line, sizeof line, "epoch %lld lr %.3g loss %.5f val_dsc %.4f val_hd95 %.3f (%.1fs)\n",
                  static_cast<long long>(e.epoch), e.lr, e.train_loss, e.val_dsc_mean, e.val_hd95_mean,
                  e.seconds);
    out << line << std::flush;
  };
  const auto res = train::train_loop(*m, tr, val, tc);
  out << "trained " << res.steps << " steps, " << m->count_params() << " parameters, checkpoints in "
      << rc.output_dir << "\n";
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& ckpt, const std::string& split,
             std::ostream& out) {
  const RunConfig rc = load_run_config(config_path);
  if (rc.manifest.empty()) fail(Errc::InvalidConfig, "data.manifest is required for evaluation");
  Split sp = Split::test;
  if (split == "train") sp = Split::train;
  else if (split == "val") sp = Split::val;
  auto loaded = model::load_checkpoint(ckpt);
  if (loaded.model->config().num_classes != rc.model.num_classes) {
    fail(Errc::ConfigMismatch, "checkpoint has " + std::to_string(loaded.model->config().num_classes) +
                                   " classes, config " + std::to_string(rc.model.num_classes));
  }
  const train::Dataset data = load_split(read_manifest(rc.manifest), sp, rc.model.num_classes);
  const auto r = train::evaluate(*loaded.model, data, rc.spacing);
  out << r.to_string();
  fs::create_directories(rc.output_dir);
  const std::string csv_path = (fs::path(rc.output_dir) / ("eval_" + split + ".csv")).string();
  std::ofstream csv(csv_path);
  if (!csv) fail(Errc::Io, "cannot write " + csv_path);
  char row[128];
  csv << "class,dsc,hd95\n";
  for (std::size_t k = 0; k < r.class_dsc.size(); ++k) {
    std::snprintf(row, sizeof row, "%zu,%.6g,%.6g\n", k + 1, r.class_dsc[k], r.class_hd95[k]);
    csv << row;
  }
  std::snprintf(row, sizeof row, "mean,%.6g,%.6g\n", r.mean_dsc, r.mean_hd95);
  csv << row;
  return 0;
}

int cmd_infer(const std::string& ckpt, const std::string& image, const std::string& out_path,
              std::ostream& out) {
  auto loaded = model::load_checkpoint(ckpt);
  auto& m = *loaded.model;
  const Tensor x = read_tensor(image);
  if (x.dim() != 3 || x.shape()[0] != 3) {
    fail(Errc::ShapeMismatch, image + ": expected [3,h,w], got " + to_string(x.shape()));
  }
  m.mode = nn::Mode::eval;
  const Tensor logits = m.forward(reshape(x, {1, 3, x.shape()[1], x.shape()[2]}).to(m.dtype()));
  const auto labels = train::predict_labels(logits);
  write_label_ppm(out_path, labels, x.shape()[1], x.shape()[2]);
  out << "wrote " << out_path << "\n";
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, std::ostream& out) {
  bool all = true;
  for (const auto& e : run_grad_suite(seed)) {
    char line[256];
    std::snprintf(line, sizeof line, "%s %-24s rel %.2e (tol %.0e, %zu coords)%s%s\n",
                  e.report.passed ? "PASS" : "FAIL", e.name.c_str(), e.report.max_rel_error, e.tol,
                  e.report.coords_checked, e.report.passed ? "" : " worst ", e.report.passed ? "" : e.report.worst.c_str());
    out << line;
    all = all && e.report.passed;
  }
  return all ? 0 : 2;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"acmseg: hybrid CNN / state-space segmentation"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  std::int64_t count = 100, size = 64, classes = 4;
  std::string out_dir, config, ckpt, image, out_path, split = "test";

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic phantom dataset");
  gen->add_option("--seed", seed);
  gen->add_option("--count", count)->check(CLI::PositiveNumber);
  gen->add_option("--size", size);
  gen->add_option("--classes", classes);
  gen->add_option("--out", out_dir)->required();

  auto* tr = app.add_subcommand("train", "Train from a run config");
  tr->add_option("config", config)->required();

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest split");
  ev->add_option("config", config)->required();
  ev->add_option("checkpoint", ckpt)->required();
  ev->add_option("--split", split)->check(CLI::IsMember({"train", "val", "test"}));

  auto* inf = app.add_subcommand("infer", "Write an argmax mask as a P6 PPM");
  inf->add_option("checkpoint", ckpt)->required();
  inf->add_option("image", image)->required();
  inf->add_option("out", out_path)->required();

  auto* gc = app.add_subcommand("gradcheck", "Run the f64 gradient suite");
  gc->add_option("--seed", seed);

  auto* pc = app.add_subcommand("param-count", "Print the trainable parameter count");
  pc->add_option("config", config)->required();

  if (argc > 1 && argv[1][0] != '-' && app.get_subcommand_no_throw(argv[1]) == nullptr) {
    err << "error: unknown subcommand '" << argv[1] << "'\n" << app.help();
    return 1;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(seed, count, size, classes, out_dir, out);
    if (tr->parsed()) return cmd_train(config, out);
    if (ev->parsed()) return cmd_eval(config, ckpt, split, out);
    if (inf->parsed()) return cmd_infer(ckpt, image, out_path, out);
    if (gc->parsed()) return cmd_gradcheck(seed, out);
    if (pc->parsed()) {
      out << model::Model::build(load_run_config(config).model, 0)->count_params() << "\n";
      return 0;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return is_validation(e.code()) ? 1 : 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace acm::harness
