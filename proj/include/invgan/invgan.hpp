#pragma once

#include "invgan/autograd.hpp"
#include "invgan/checkpoint.hpp"
#include "invgan/config_json.hpp"
#include "invgan/error.hpp"
#include "invgan/eval.hpp"
#include "invgan/infer.hpp"
#include "invgan/losses.hpp"
#include "invgan/model.hpp"
#include "invgan/ops.hpp"
#include "invgan/optim.hpp"
#include "invgan/patch_archive.hpp"
#include "invgan/random.hpp"
#include "invgan/sampler.hpp"
#include "invgan/synth.hpp"
#include "invgan/tensor.hpp"
#include "invgan/trainer.hpp"
#include "invgan/volio.hpp"
#include "invgan/volume.hpp"
#include "invgan/warp.hpp"
