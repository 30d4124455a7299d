#pragma once

// Umbrella header: the full spatiotemporal bone-surface estimation toolkit.

#include "spinesurf/common.hpp"
#include "spinesurf/config.hpp"
#include "spinesurf/eval.hpp"
#include "spinesurf/features.hpp"
#include "spinesurf/fft.hpp"
#include "spinesurf/geometry.hpp"
#include "spinesurf/io.hpp"
#include "spinesurf/labelgen.hpp"
#include "spinesurf/mesh.hpp"
#include "spinesurf/net.hpp"
#include "spinesurf/phantom.hpp"
#include "spinesurf/pipeline.hpp"
#include "spinesurf/tensor.hpp"
#include "spinesurf/volume.hpp"
