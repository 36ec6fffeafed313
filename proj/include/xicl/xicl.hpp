#pragma once

// Umbrella header: prompt construction and evaluation for cross-lingual
// in-context learning.

#include "xicl/aligner.hpp"
#include "xicl/corpus.hpp"
#include "xicl/embedding.hpp"
#include "xicl/errors.hpp"
#include "xicl/eval.hpp"
#include "xicl/inference.hpp"
#include "xicl/lang.hpp"
#include "xicl/net.hpp"
#include "xicl/prompt.hpp"
#include "xicl/rng.hpp"
#include "xicl/runner.hpp"
#include "xicl/util.hpp"
