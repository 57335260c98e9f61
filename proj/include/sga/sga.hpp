// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "sga/core/error.hpp"
#include "sga/core/rng.hpp"
#include "sga/numerics/dense_array.hpp"
#include "sga/numerics/ops.hpp"
#include "sga/numerics/grad_tape.hpp"
#include "sga/numerics/grad_check.hpp"
#include "sga/numerics/sgat.hpp"
#include "sga/quantizer/image.hpp"
#include "sga/quantizer/token_grid.hpp"
#include "sga/quantizer/codebook.hpp"
#include "sga/quantizer/leakage.hpp"
#include "sga/attention/mask.hpp"
#include "sga/attention/dense_attention.hpp"
#include "sga/sparse/partition.hpp"
#include "sga/sparse/plan.hpp"
#include "sga/sparse/sparse_attention.hpp"
#include "sga/sparse/sparse_tape.hpp"
#include "sga/model/config.hpp"
#include "sga/model/weights.hpp"
#include "sga/model/transformer.hpp"
#include "sga/model/checkpoint.hpp"
#include "sga/sampler/topk.hpp"
#include "sga/sampler/edit.hpp"
#include "sga/sampler/guide.hpp"
#include "sga/evalbench/masks.hpp"
#include "sga/evalbench/tasks.hpp"
#include "sga/evalbench/train.hpp"
#include "sga/evalbench/ablation.hpp"
#include "sga/evalbench/rollout.hpp"
#include "sga/evalbench/ssim.hpp"
#include "sga/evalbench/bench.hpp"
#include "sga/evalbench/diversity.hpp"
#include "sga/compositing/composite.hpp"
#include "sga/compositing/pyramid.hpp"
#include "sga/compositing/decode.hpp"
