#pragma once

#include "semcom/attention.hpp"
#include "semcom/bytes.hpp"
#include "semcom/checkpoint.hpp"
#include "semcom/classifier.hpp"
#include "semcom/codec.hpp"
#include "semcom/diffusion.hpp"
#include "semcom/error.hpp"
#include "semcom/evaltasks.hpp"
#include "semcom/experiment.hpp"
#include "semcom/imgproc.hpp"
#include "semcom/learner.hpp"
#include "semcom/protocol.hpp"
#include "semcom/raster.hpp"
#include "semcom/report.hpp"
#include "semcom/rng.hpp"
#include "semcom/scenegen.hpp"
#include "semcom/session.hpp"
#include "semcom/tensor.hpp"
