// SPDX-License-Identifier: Apache-2.0
#include "rdte/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "rdte/errors.hpp"

namespace rdte {

namespace {

void only_keys(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  for (const auto& key : known)
    if (!j.contains(key)) throw ConfigError(where + " is missing '" + key + "'");
}

std::size_t positive(const nlohmann::json& j, const char* key) {
  const auto& v = j.at(key);
  if (!v.is_number_unsigned() || v.get<std::uint64_t>() == 0)
    throw ConfigError(std::string("train.") + key + " must be a positive integer");
  return v.get<std::size_t>();
}

std::filesystem::path path_of(const nlohmann::json& v, const std::string& what) {
  if (!v.is_string() || v.get<std::string>().empty()) throw ConfigError(what + " must be a non-empty string");
  return v.get<std::string>();
}

std::vector<Tensor> snapshot(const ParamStore& ps) {
  std::vector<Tensor> out;
  for (const auto& [name, p] : ps) out.push_back(p.value);
  return out;
}

void restore(ParamStore& ps, const std::vector<Tensor>& values) {
  std::size_t i = 0;
  for (auto& [name, p] : ps) p.value = values[i++];
}

// Endless stream of sample indices: one fresh shuffle per epoch.
class BatchStream {
 public:
  BatchStream(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed), at_(n) {}

  std::vector<std::size_t> next(std::size_t batch) {
    std::vector<std::size_t> out;
    while (out.size() < batch) {
      if (at_ == order_.size()) reshuffle();
      out.push_back(order_[at_++]);
    }
    return out;
  }

 private:
  void reshuffle() {
    std::iota(order_.begin(), order_.end(), std::size_t(0));
    std::shuffle(order_.begin(), order_.end(), rng_);
    at_ = 0;
  }

  std::vector<std::size_t> order_;
  std::mt19937_64 rng_;
  std::size_t at_;
};

// A loss this large means logits off by thousands per pixel; a healthy run
// starts near ln(num_classes).
constexpr double kDivergedLoss = 1e4;

std::string row(std::size_t step, double loss) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%zu,%.9g\n", step, loss);
  return buf;
}

}  // namespace

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  only_keys(j, {"model", "train", "data", "out"}, "run config");
  RunConfig c;
  c.model = ModelConfig::from_json(j.at("model"));
  const auto& t = j.at("train");
  only_keys(t, {"steps", "batch", "lr", "seed"}, "train");
  c.train.steps = positive(t, "steps");
  c.train.batch = positive(t, "batch");
  if (!t.at("lr").is_number() || !(t.at("lr").get<double>() > 0) || !std::isfinite(t.at("lr").get<double>()))
    throw ConfigError("train.lr must be a positive finite number");
  c.train.lr = t.at("lr").get<double>();
  if (!t.at("seed").is_number_unsigned()) throw ConfigError("train.seed must be a non-negative integer");
  c.train.seed = t.at("seed").get<std::uint64_t>();
  only_keys(j.at("data"), {"dir"}, "data");
  c.data_dir = path_of(j.at("data").at("dir"), "data.dir");
  c.out = path_of(j.at("out"), "out");
  return c;
}

nlohmann::json RunConfig::to_json() const {
  return {{"model", model.to_json()},
          {"train", {{"steps", train.steps}, {"batch", train.batch}, {"lr", train.lr}, {"seed", train.seed}}},
          {"data", {{"dir", data_dir.string()}}},
          {"out", out.string()}};
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw NotFoundError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

std::filesystem::path checkpoint_file(const std::filesystem::path& out) { return out / "checkpoint.rdtc"; }
std::filesystem::path loss_log_file(const std::filesystem::path& out) { return out / "loss.csv"; }

void check_compatible(const ModelConfig& model, const Manifest& manifest) {
  if (manifest.size != model.height || manifest.size != model.width)
    throw ConfigError("dataset images are " + std::to_string(manifest.size) + "x" + std::to_string(manifest.size) +
                      " but the model expects " + std::to_string(model.height) + "x" + std::to_string(model.width));
  if (manifest.classes != model.num_classes)
    throw ConfigError("dataset has " + std::to_string(manifest.classes) + " classes but the model has " +
                      std::to_string(model.num_classes));
  if (model.in_channels != 1)
    throw ConfigError("dataset images have 1 channel but the model expects " + std::to_string(model.in_channels));
}

TrainResult train(const RunConfig& config, const StepCallback& on_step) {
  const Dataset data = read_dataset(config.data_dir);
  check_compatible(config.model, data.manifest);

  std::filesystem::create_directories(config.out);
  std::ofstream log(loss_log_file(config.out), std::ios::trunc);
  if (!log) throw ConfigError("cannot write " + loss_log_file(config.out).string());
  log << "step,loss\n";

  Model model(config.model);
  Adam opt;
  opt.lr = config.train.lr;
  BatchStream stream(data.samples.size(), config.train.seed);
  TrainResult result;

  // Parameters (and BN statistics) that last produced a finite loss.
  std::vector<Tensor> good = snapshot(model.params());
  std::size_t good_step = 0;

  for (std::size_t step = 1; step <= config.train.steps; ++step) {
    std::vector<Tensor> before = snapshot(model.params());
    const auto idx = stream.next(config.train.batch);
    Tape tape;
    Context ctx{tape, model.params(), Mode::train};
    LossParts lp = segmentation_loss(model.forward(ctx, tape.constant(batch_images(data.samples, idx))),
                                     batch_masks(data.samples, idx));
    const double loss = lp.total.value()[0];
    log << row(step, loss);
    if (on_step) on_step(step, loss);
    if (!std::isfinite(loss) || loss > kDivergedLoss) {
      restore(model.params(), good);
      save_checkpoint(checkpoint_file(config.out), model, good_step);
      result.diverged = true;
      return result;
    }
    good = std::move(before);
    good_step = step - 1;
    if (step == 1) result.first_loss = loss;
    result.last_loss = loss;
    backward(tape, lp.total, model.params());
    opt.step(model.params());
    result.steps_done = step;
  }
  save_checkpoint(checkpoint_file(config.out), model, result.steps_done);
  return result;
}

}  // namespace rdte
