#include "metalens/stafnet/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "metalens/errors.hpp"
#include "metalens/log.hpp"
#include "metalens/numerics/autograd.hpp"

namespace metalens::stafnet {

std::vector<TrainingSample> prepare_samples(const std::vector<TrainingPair>& pairs, const optics::PsfGrid& psf,
                                            const wiener::FilterBankConfig& bank) {
  std::vector<TrainingSample> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    if (p.clean.shape() != p.observed.shape()) throw ShapeError("pair " + p.id + ": clean and observed extents differ");
    out.push_back({p.id, p.clean, wiener::deconvolve_for(p.observed, psf, bank)});
  }
  return out;
}

TrainResult train_toy(const std::vector<TrainingSample>& samples, const NetworkConfig& config,
                      const TrainOptions& options) {
  return train_toy(samples, Checkpoint::fresh(config, options.seed), options);
}

TrainResult train_toy(const std::vector<TrainingSample>& samples, Checkpoint start, const TrainOptions& options) {
  if (samples.empty()) throw ContractError("training needs at least one pair");
  const auto& shape0 = samples.front().clean.shape();
  for (const auto& s : samples) {
    if (s.clean.shape() != shape0 || s.stack.images.empty() || s.stack.images.front().shape() != shape0) {
      throw ShapeError("all training pairs must share the same extents");
    }
  }
  if (!(options.lr >= 0.0)) throw ContractError("learning rate must be >= 0");

  TrainResult result{std::move(start), {}};
  Checkpoint& ck = result.checkpoint;
  ck.params.check(ck.config);
  std::mt19937_64 rng(numerics::seed_for(options.seed, "sampler"));
  if (!ck.rng_state.empty()) {
    std::istringstream is(ck.rng_state);
    is >> rng;
  }

  auto params = ck.params.named();
  std::vector<std::vector<double>> m(params.size()), v(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i].assign(params[i].tensor->numel(), 0.0);
    v[i].assign(params[i].tensor->numel(), 0.0);
  }

  result.losses.reserve(options.steps);
  for (std::size_t step = 1; step <= options.steps; ++step) {
    const auto& sample = samples[rng() % samples.size()];
    for (auto& p : params) p.tensor->zero_grad();
    double loss_value;
    {
      numerics::GradTape tape;
      numerics::GradTape::Scope scope(tape);
      const Tensor out = network_forward(sample.stack, ck.config, ck.params);
      const Tensor loss = numerics::mean(numerics::abs(numerics::sub(out, sample.clean)));
      loss_value = loss.item();
      if (!std::isfinite(loss_value)) throw TrainingError("training diverged: non-finite loss", ck.step + step);
      tape.backward(loss);
    }
    result.losses.push_back(loss_value);

    double lr = options.lr;
    if (options.cosine && options.steps > 1) {
      const double t = static_cast<double>(step - 1) / static_cast<double>(options.steps - 1);
      lr *= options.final_lr_ratio + (1.0 - options.final_lr_ratio) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
    }
    const double bc1 = 1.0 - std::pow(options.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(options.beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& t = *params[i].tensor;
      if (!t.has_grad()) continue;
      const auto g = t.grad();
      auto w = t.mutable_values();
      for (std::size_t j = 0; j < w.size(); ++j) {
        m[i][j] = options.beta1 * m[i][j] + (1.0 - options.beta1) * g[j];
        v[i][j] = options.beta2 * v[i][j] + (1.0 - options.beta2) * g[j] * g[j];
        w[j] -= lr * (m[i][j] / bc1) / (std::sqrt(v[i][j] / bc2) + options.eps);
      }
    }
    if (options.on_step) options.on_step(ck.step + step, loss_value);
    if (step % 100 == 0) log::info("step " + std::to_string(ck.step + step) + " loss " + std::to_string(loss_value));
  }
  for (auto& p : params) p.tensor->zero_grad();
  ck.step += options.steps;
  std::ostringstream os;
  os << rng;
  ck.rng_state = os.str();
  return result;
}

void write_loss_curve(const std::filesystem::path& path, const std::vector<double>& losses) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "step,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < losses.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i + 1, losses[i]);
    out << buf;
  }
}

}  // namespace metalens::stafnet
