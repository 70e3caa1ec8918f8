#pragma once

#include "noiseprint/adam.hpp"
#include "noiseprint/benchmark.hpp"
#include "noiseprint/camera_sim.hpp"
#include "noiseprint/common.hpp"
#include "noiseprint/container.hpp"
#include "noiseprint/evaluation.hpp"
#include "noiseprint/filters.hpp"
#include "noiseprint/fingerprint.hpp"
#include "noiseprint/gradcheck.hpp"
#include "noiseprint/image_io.hpp"
#include "noiseprint/layers.hpp"
#include "noiseprint/localization.hpp"
#include "noiseprint/manifest.hpp"
#include "noiseprint/network.hpp"
#include "noiseprint/pretrain.hpp"
#include "noiseprint/siamese.hpp"
#include "noiseprint/tensor.hpp"
