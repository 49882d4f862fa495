#pragma once

// Umbrella header.

#include "ftscore/arch/genome.hpp"
#include "ftscore/arch/graph.hpp"
#include "ftscore/arch/graph_json.hpp"
#include "ftscore/arch/layer.hpp"
#include "ftscore/arch/nb201.hpp"
#include "ftscore/baselines/proxies.hpp"
#include "ftscore/check/checks.hpp"
#include "ftscore/error.hpp"
#include "ftscore/eval/harness.hpp"
#include "ftscore/rank/correlation.hpp"
#include "ftscore/rank/loss.hpp"
#include "ftscore/rank/soft_rank.hpp"
#include "ftscore/rep/builder.hpp"
#include "ftscore/scorer/scorer.hpp"
#include "ftscore/search/nsga2.hpp"
#include "ftscore/search/search.hpp"
#include "ftscore/spectral/dft.hpp"
#include "ftscore/spectral/materialize.hpp"
#include "ftscore/tensor/adam.hpp"
#include "ftscore/tensor/checkpoint.hpp"
#include "ftscore/tensor/gradcheck.hpp"
#include "ftscore/tensor/opcheck.hpp"
#include "ftscore/tensor/ops.hpp"
#include "ftscore/tensor/tape.hpp"
#include "ftscore/tensor/tensor.hpp"
#include "ftscore/train/dataset.hpp"
#include "ftscore/train/de.hpp"
#include "ftscore/train/ensemble.hpp"
#include "ftscore/train/synthetic.hpp"
#include "ftscore/train/trainer.hpp"
#include "ftscore/util/digest.hpp"
#include "ftscore/util/parallel.hpp"
