// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "dmae/ablation.hpp"
#include "dmae/checkpoint.hpp"
#include "dmae/config.hpp"
#include "dmae/data.hpp"
#include "dmae/diagnostics.hpp"
#include "dmae/downstream.hpp"
#include "dmae/grad_check.hpp"
#include "dmae/layers.hpp"
#include "dmae/masking.hpp"
#include "dmae/model.hpp"
#include "dmae/ops.hpp"
#include "dmae/optim.hpp"
#include "dmae/pretrain.hpp"
#include "dmae/tape.hpp"
#include "dmae/tensor.hpp"
