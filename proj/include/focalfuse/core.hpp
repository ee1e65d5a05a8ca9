// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "focalfuse/tensor/conv.hpp"
#include "focalfuse/tensor/errors.hpp"
#include "focalfuse/tensor/norm.hpp"
#include "focalfuse/tensor/parallel.hpp"
#include "focalfuse/tensor/pointwise.hpp"
#include "focalfuse/tensor/pool.hpp"
#include "focalfuse/tensor/resize.hpp"
#include "focalfuse/tensor/tensor.hpp"
