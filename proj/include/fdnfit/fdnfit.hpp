// Copyright 2026 The fdnfit Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include "fdnfit/acoustics.hpp"
#include "fdnfit/audio_io.hpp"
#include "fdnfit/common.hpp"
#include "fdnfit/expm.hpp"
#include "fdnfit/fdn.hpp"
#include "fdnfit/fft.hpp"
#include "fdnfit/geq.hpp"
#include "fdnfit/optim.hpp"
#include "fdnfit/serialization.hpp"
#include "fdnfit/spectral.hpp"
