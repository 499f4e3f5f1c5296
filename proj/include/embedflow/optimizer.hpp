#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace embedflow {

enum class OptimizerMode { FullBatch, Minibatch };
enum class LrSchedule { Constant, Cosine };

// Shared by the linear and ReLU trainers: plain gradient descent, optionally
// on shuffled mini-batches, with an optional cosine-annealed rate and a
// coupled weight-decay term added to every gradient.
struct OptimizerConfig {
  OptimizerMode mode = OptimizerMode::FullBatch;
  int epochs = 100;
  int batch_size = 50;
  double lr_start = 1e-2;
  double lr_end = 0.0;  // cosine target; ignored by the constant schedule
  LrSchedule schedule = LrSchedule::Constant;
  double weight_decay = 0.0;
  std::uint64_t shuffle_seed = 1;
};

inline double schedule_lr(const OptimizerConfig& cfg, long step, long total_steps) {
  if (cfg.schedule == LrSchedule::Constant) return cfg.lr_start;
  const double phase =
      total_steps > 0 ? static_cast<double>(step) / static_cast<double>(total_steps) : 0.0;
  return cfg.lr_end +
         0.5 * (cfg.lr_start - cfg.lr_end) * (1.0 + std::cos(std::numbers::pi * phase));
}

}  // namespace embedflow
