// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint layout, all integers little-endian:
//
//   "DVAE" | u32 version | u64 step | u32 config length | config text
//   u32 tensor count, then per tensor:
//     u32 name length | name | u32 rank | u32 dims[rank] | f32 data[numel]
//
// Tensor names: "param/<name>", "codebook/{embeddings,ema_size,ema_sum,usage}",
// "adam/steps", "adam/m/<name>", "adam/v/<name>", and "prior/<name>" when a
// prior is stored.

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>

#include "dualvae/config.hpp"
#include "dualvae/model.hpp"
#include "dualvae/prior.hpp"

namespace dualvae::inline DUALVAE_ABI {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointData {
    TrainConfig config;
    std::int64_t step = 0;
    std::unique_ptr<DualVaeModel> model;
    std::unique_ptr<ArPrior> prior;  // null when no stage-2 section
    bool has_optimizer = false;
    std::int64_t adam_steps = 0;
    std::vector<std::vector<real>> adam_m;  // aligned with model->params().entries()
    std::vector<std::vector<real>> adam_v;
};

void save_checkpoint(const std::filesystem::path& path, const TrainConfig& config, const DualVaeModel& model,
                     std::int64_t step, const Adam* adam = nullptr, const ArPrior* prior = nullptr);

/// Throws IoError on a bad magic number, a version mismatch or truncation.
CheckpointData load_checkpoint(const std::filesystem::path& path);

/// Copies stored optimiser moments into `adam`.
void restore_optimizer(Adam& adam, const CheckpointData& data);

}  // namespace dualvae
