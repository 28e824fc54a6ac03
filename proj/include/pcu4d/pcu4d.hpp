#pragma once

#include "pcu4d/tensor.hpp"
#include "pcu4d/parallel.hpp"
#include "pcu4d/geometry.hpp"
#include "pcu4d/autodiff.hpp"
#include "pcu4d/layers.hpp"
#include "pcu4d/upsampler.hpp"
#include "pcu4d/discriminator.hpp"
#include "pcu4d/losses.hpp"
#include "pcu4d/checkpoint.hpp"
#include "pcu4d/data.hpp"
#include "pcu4d/training.hpp"
#include "pcu4d/bench.hpp"
