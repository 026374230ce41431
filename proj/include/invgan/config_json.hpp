#pragma once

// JSON mappings for configuration types (checkpoints, manifests).

#include <json.hpp>

#include "invgan/losses.hpp"
#include "invgan/model.hpp"
#include "invgan/sampler.hpp"
#include "invgan/synth.hpp"
#include "invgan/trainer.hpp"
#include "invgan/volume.hpp"

namespace invgan {

NLOHMANN_JSON_SERIALIZE_ENUM(SelectionMode, {{SelectionMode::weighted, "weighted"},
                                             {SelectionMode::threshold, "threshold"}})

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(Dims, nx, ny, nz)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(Spacing, sx, sy, sz)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfig, patch_size, base_channels, fine_channels, leaky_slope,
                                                flow_init_std, seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LossConfig, ncc_window, lambda_adv, epsilon)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SamplerConfig, low, high, decay, scale, patch_size, seed, max_draws,
                                                mode, fixed_threshold)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, iterations, batch_size, lr_generator, lr_discriminator,
                                                beta1, beta2, clip_norm, patches_per_pair, adversarial_enabled,
                                                checkpoint_every, seed, model, loss, sampler)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SynthConfig, dims, spacing, blob_count, blob_sigma_range,
                                                field_amplitude, field_smoothness, landmark_count, taper_width, seed)

} // namespace invgan
