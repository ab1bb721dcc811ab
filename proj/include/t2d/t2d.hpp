#pragma once

#include "t2d/bench.hpp"
#include "t2d/cf.hpp"
#include "t2d/checkpoint.hpp"
#include "t2d/coldstart.hpp"
#include "t2d/common.hpp"
#include "t2d/config.hpp"
#include "t2d/dataset.hpp"
#include "t2d/distribution.hpp"
#include "t2d/encoder.hpp"
#include "t2d/eval.hpp"
#include "t2d/judgement.hpp"
#include "t2d/optim.hpp"
#include "t2d/pipeline.hpp"
#include "t2d/synthetic.hpp"
#include "t2d/tokenizer.hpp"
