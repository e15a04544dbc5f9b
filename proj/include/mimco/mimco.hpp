#pragma once

#include "mimco/ablation.hpp"
#include "mimco/checkpoint.hpp"
#include "mimco/classifier.hpp"
#include "mimco/config.hpp"
#include "mimco/data.hpp"
#include "mimco/decoder.hpp"
#include "mimco/encoder.hpp"
#include "mimco/errors.hpp"
#include "mimco/eval.hpp"
#include "mimco/image.hpp"
#include "mimco/io.hpp"
#include "mimco/layers.hpp"
#include "mimco/masking.hpp"
#include "mimco/objective.hpp"
#include "mimco/optim.hpp"
#include "mimco/params.hpp"
#include "mimco/rng.hpp"
#include "mimco/tensor.hpp"
#include "mimco/tokenizer.hpp"
#include "mimco/trainer.hpp"
