// Copyright Contributors to the cityforge project
// SPDX-License-Identifier: Apache-2.0
//
// Umbrella header.

#pragma once

#include "cityforge/compositor.hpp"
#include "cityforge/core.hpp"
#include "cityforge/encoders.hpp"
#include "cityforge/hdmap.hpp"
#include "cityforge/layout.hpp"
#include "cityforge/osm.hpp"
#include "cityforge/pipeline.hpp"
#include "cityforge/png_io.hpp"
#include "cityforge/procedural.hpp"
#include "cityforge/render.hpp"
#include "cityforge/traffic.hpp"
