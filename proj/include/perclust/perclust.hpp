#pragma once

#include "perclust/autodiff.hpp"
#include "perclust/baselines.hpp"
#include "perclust/common.hpp"
#include "perclust/dataset.hpp"
#include "perclust/loss.hpp"
#include "perclust/metrics.hpp"
#include "perclust/model.hpp"
#include "perclust/optim.hpp"
#include "perclust/render.hpp"
#include "perclust/train.hpp"
