#pragma once

#include "patchbench/adaptive.hpp"
#include "patchbench/analysis.hpp"
#include "patchbench/applier.hpp"
#include "patchbench/attack.hpp"
#include "patchbench/core.hpp"
#include "patchbench/dataset.hpp"
#include "patchbench/defense.hpp"
#include "patchbench/defense_adapter.hpp"
#include "patchbench/detector.hpp"
#include "patchbench/metrics.hpp"
#include "patchbench/parallel.hpp"
#include "patchbench/patch_io.hpp"
#include "patchbench/plot.hpp"
#include "patchbench/png_io.hpp"
#include "patchbench/rng.hpp"
#include "patchbench/runner.hpp"
#include "patchbench/scene.hpp"
#include "patchbench/subprocess.hpp"
