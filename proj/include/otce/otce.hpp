#pragma once

#include "otce/error.hpp"
#include "otce/feature_set.hpp"
#include "otce/guidance.hpp"
#include "otce/io.hpp"
#include "otce/matrix.hpp"
#include "otce/metrics.hpp"
#include "otce/ot.hpp"
#include "otce/rank.hpp"
#include "otce/rng.hpp"
#include "otce/synth.hpp"

namespace otce {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace otce
