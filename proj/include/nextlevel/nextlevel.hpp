#pragma once

#include "cache.hpp"
#include "chunker.hpp"
#include "common.hpp"
#include "encoder.hpp"
#include "eval.hpp"
#include "masking.hpp"
#include "model.hpp"
#include "packing.hpp"
#include "rng.hpp"
#include "synth.hpp"
#include "tensor.hpp"
#include "tokenizer.hpp"
#include "trainer.hpp"
