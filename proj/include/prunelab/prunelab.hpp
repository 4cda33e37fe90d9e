#pragma once

// Umbrella header for the whole workbench. The HTTP rewriter adapter lives in
// rewriter_http.hpp and is not pulled in here to keep builds lean.

#include "prunelab/common.hpp"
#include "prunelab/corpus.hpp"
#include "prunelab/distill.hpp"
#include "prunelab/harness.hpp"
#include "prunelab/metrics.hpp"
#include "prunelab/model.hpp"
#include "prunelab/pruner.hpp"
#include "prunelab/quantizer.hpp"
#include "prunelab/tensor.hpp"
#include "prunelab/trainer.hpp"
