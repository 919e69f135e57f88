#pragma once

#include "loclesion/analysis.hpp"
#include "loclesion/artifacts.hpp"
#include "loclesion/common.hpp"
#include "loclesion/error.hpp"
#include "loclesion/harness.hpp"
#include "loclesion/localizer.hpp"
#include "loclesion/pipeline.hpp"
#include "loclesion/report.hpp"
#include "loclesion/rng.hpp"
#include "loclesion/runtime.hpp"
#include "loclesion/stimuli.hpp"
#include "loclesion/tokenizer.hpp"
