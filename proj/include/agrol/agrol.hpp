#pragma once

#include "agrol/errors.hpp"
#include "agrol/numerics.hpp"
#include "agrol/random.hpp"
#include "agrol/rotations.hpp"
#include "agrol/skeleton.hpp"
#include "agrol/features.hpp"
#include "agrol/network.hpp"
#include "agrol/optimizer.hpp"
#include "agrol/diffusion.hpp"
#include "agrol/lossmetrics.hpp"
#include "agrol/mseq.hpp"
#include "agrol/checkpoint.hpp"
#include "agrol/synthdata.hpp"
#include "agrol/training.hpp"
#include "agrol/inference.hpp"
#include "agrol/commands.hpp"
