#pragma once

#include <string_view>

#include "bfkit/abc.hpp"
#include "bfkit/checkpoint.hpp"
#include "bfkit/config.hpp"
#include "bfkit/evaluation.hpp"
#include "bfkit/genome.hpp"
#include "bfkit/inference.hpp"
#include "bfkit/io.hpp"
#include "bfkit/kernels.hpp"
#include "bfkit/loops.hpp"
#include "bfkit/model.hpp"
#include "bfkit/normalize.hpp"
#include "bfkit/optim.hpp"
#include "bfkit/parallel.hpp"
#include "bfkit/rng.hpp"
#include "bfkit/simulator.hpp"
#include "bfkit/trainer.hpp"

namespace bfkit {

inline constexpr std::string_view version = "0.1.0";

}  // namespace bfkit
