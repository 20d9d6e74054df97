#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "acmseg/harness.hpp"

namespace acm::harness {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::int64_t to_int(const std::string& key, const std::string& v) {
  std::int64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    fail(Errc::InvalidConfig, key + ": expected an integer, got '" + v + "'");
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
    fail(Errc::InvalidConfig, key + ": expected a number, got '" + v + "'");
  }
  return out;
}

std::string read_text(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail(Errc::Io, "cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

std::string Manifest::resolve(const std::string& p) const {
  const fs::path path(p);
  if (path.is_absolute() || root.empty()) return p;
  return (fs::path(root) / path).string();
}

Manifest read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail(Errc::Io, "cannot open manifest " + path);
  Manifest m;
  m.root = fs::path(path).parent_path().string();
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty() || trim(line)[0] == '#') continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, '\t')) cols.push_back(c);
    if (cols.size() != 3) {
      fail(Errc::InvalidConfig, path + ":" + std::to_string(lineno) + ": expected 3 tab-separated columns");
    }
    ManifestEntry e{cols[0], cols[1], Split::train};
    if (cols[2] == "train") e.split = Split::train;
    else if (cols[2] == "val") e.split = Split::val;
    else if (cols[2] == "test") e.split = Split::test;
    else fail(Errc::InvalidConfig, path + ":" + std::to_string(lineno) + ": unknown split '" + cols[2] + "'");
    m.entries.push_back(std::move(e));
  }
  return m;
}

void write_manifest(const std::string& path, const Manifest& m) {
  std::ofstream f(path);
  if (!f) fail(Errc::Io, "cannot open " + path + " for writing");
  for (const auto& e : m.entries) f << e.image << '\t' << e.mask << '\t' << split_name(e.split) << '\n';
  if (!f) fail(Errc::Io, "write failed: " + path);
}

train::Dataset load_split(const Manifest& m, Split split, std::int64_t num_classes) {
  train::Dataset d;
  Shape first;
  for (const auto& e : m.entries) {
    if (e.split != split) continue;
    const std::string ip = m.resolve(e.image), mp = m.resolve(e.mask);
    for (const auto& p : {ip, mp})
      if (!fs::exists(p)) fail(Errc::Io, "manifest lists missing file " + p);
    Tensor img = read_tensor(ip), mask = read_tensor(mp);
    if (img.dim() != 3 || img.shape()[0] != 3) {
      fail(Errc::ShapeMismatch, ip + ": image must be [3,h,w], got " + to_string(img.shape()));
    }
    if (mask.dim() != 2 || mask.shape()[0] != img.shape()[1] || mask.shape()[1] != img.shape()[2]) {
      fail(Errc::ShapeMismatch, mp + ": mask " + to_string(mask.shape()) + " does not match image");
    }
    if (first.empty()) first = img.shape();
    if (img.shape() != first) fail(Errc::ShapeMismatch, ip + ": shape differs from the first image");
    for (auto l : train::labels_of(mask)) {
      if (l >= num_classes) {
        fail(Errc::LabelOutOfRange, mp + ": label " + std::to_string(l) + " >= num_classes " +
                                        std::to_string(num_classes));
      }
    }
    d.images.push_back(std::move(img));
    d.masks.push_back(std::move(mask));
  }
  return d;
}

train::TrainConfig RunConfig::train_config() const {
  train::TrainConfig t;
  t.lr = lr;
  t.lr_min = lr_min;
  t.weight_decay = weight_decay;
  t.loss.alpha = alpha;
  t.epochs = epochs;
  t.batch = batch;
  t.max_steps = max_steps;
  t.eval_every = eval_every;
  t.seed = seed;
  t.spacing = spacing;
  t.output_dir = output_dir;
  const AugmentFlags flags = parse_augment(augment);
  if (flags.hflip || flags.vflip || flags.rot90 || flags.noise) {
    t.augment = [flags](Tensor& img, Tensor& mask, Rng& rng) { harness::augment(img, mask, rng, flags); };
  }
  return t;
}

RunConfig parse_run_config(const std::string& text, const std::string& base_dir) {
  RunConfig c;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  auto rel = [&](const std::string& p) {
    if (p.empty() || fs::path(p).is_absolute() || base_dir.empty()) return p;
    return (fs::path(base_dir) / p).string();
  };
  while (std::getline(ss, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      fail(Errc::InvalidConfig, "line " + std::to_string(lineno) + ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq)), v = trim(line.substr(eq + 1));
    if (key.rfind("model.", 0) == 0) {
      if (!model::set_config_key(c.model, key.substr(6), v)) {
        fail(Errc::InvalidConfig, "unknown key '" + key + "'");
      }
    } else if (key == "train.lr") c.lr = to_double(key, v);
    else if (key == "train.lr_min") c.lr_min = to_double(key, v);
    else if (key == "train.wd") c.weight_decay = to_double(key, v);
    else if (key == "train.epochs") c.epochs = to_int(key, v);
    else if (key == "train.batch") c.batch = to_int(key, v);
    else if (key == "train.max_steps") c.max_steps = to_int(key, v);
    else if (key == "train.eval_every") c.eval_every = to_int(key, v);
    else if (key == "train.alpha") c.alpha = to_double(key, v);
    else if (key == "train.seed") {
      const auto s = to_int(key, v);
      if (s < 0) fail(Errc::InvalidConfig, "train.seed must be non-negative");
      c.seed = static_cast<std::uint64_t>(s);
    } else if (key == "train.augment") {
      parse_augment(v);
      c.augment = v;
    } else if (key == "data.manifest") c.manifest = rel(v);
    else if (key == "data.spacing") {
      const auto comma = v.find(',');
      if (comma == std::string::npos) fail(Errc::InvalidConfig, "data.spacing: expected 'sy,sx'");
      c.spacing = {to_double(key, trim(v.substr(0, comma))), to_double(key, trim(v.substr(comma + 1)))};
      if (c.spacing[0] <= 0 || c.spacing[1] <= 0) fail(Errc::InvalidConfig, "data.spacing must be positive");
    } else if (key == "io.output_dir") c.output_dir = rel(v);
    else fail(Errc::InvalidConfig, "unknown key '" + key + "'");
  }
  if (c.lr <= 0 || c.lr_min < 0 || c.weight_decay < 0) fail(Errc::InvalidConfig, "learning rates and wd must be non-negative");
  if (c.alpha < 0 || c.alpha > 1) fail(Errc::InvalidConfig, "train.alpha must be in [0, 1]");
  if (c.epochs < 1 || c.batch < 1 || c.max_steps < 0 || c.eval_every < 1) {
    fail(Errc::InvalidConfig, "epochs, batch and eval_every must be positive");
  }
  c.model.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  return parse_run_config(read_text(path), fs::path(path).parent_path().string());
}

std::string to_text(const RunConfig& c) {
  std::ostringstream os;
  std::istringstream model_lines(model::to_text(c.model));
  std::string l;
  while (std::getline(model_lines, l)) os << "model." << l << '\n';
  os.precision(17);
  os << "train.lr=" << c.lr << '\n'
     << "train.lr_min=" << c.lr_min << '\n'
     << "train.wd=" << c.weight_decay << '\n'
     << "train.epochs=" << c.epochs << '\n'
     << "train.batch=" << c.batch << '\n'
     << "train.max_steps=" << c.max_steps << '\n'
     << "train.eval_every=" << c.eval_every << '\n'
     << "train.alpha=" << c.alpha << '\n'
     << "train.seed=" << c.seed << '\n'
     << "train.augment=" << c.augment << '\n'
     << "data.manifest=" << c.manifest << '\n'
     << "data.spacing=" << c.spacing[0] << ',' << c.spacing[1] << '\n'
     << "io.output_dir=" << c.output_dir << '\n';
  return os.str();
}

}  // namespace acm::harness
