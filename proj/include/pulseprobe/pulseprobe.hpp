#pragma once

#include "pulseprobe/analysis.hpp"
#include "pulseprobe/compare.hpp"
#include "pulseprobe/config.hpp"
#include "pulseprobe/engine.hpp"
#include "pulseprobe/error.hpp"
#include "pulseprobe/fft.hpp"
#include "pulseprobe/frameset.hpp"
#include "pulseprobe/grid.hpp"
#include "pulseprobe/image.hpp"
#include "pulseprobe/io.hpp"
#include "pulseprobe/log.hpp"
#include "pulseprobe/opr.hpp"
#include "pulseprobe/parallel.hpp"
#include "pulseprobe/pipeline.hpp"
#include "pulseprobe/positions.hpp"
#include "pulseprobe/propagation.hpp"
#include "pulseprobe/rng.hpp"
#include "pulseprobe/schedule.hpp"
#include "pulseprobe/simulator.hpp"
#include "pulseprobe/stages.hpp"
#include "pulseprobe/wavefield.hpp"
#include "pulseprobe/window.hpp"
