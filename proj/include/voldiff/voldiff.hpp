#pragma once

#include "voldiff/anomaly.hpp"
#include "voldiff/checkpoint.hpp"
#include "voldiff/condition.hpp"
#include "voldiff/control.hpp"
#include "voldiff/denoiser.hpp"
#include "voldiff/errors.hpp"
#include "voldiff/inpaint.hpp"
#include "voldiff/inverse.hpp"
#include "voldiff/metrics.hpp"
#include "voldiff/phantom.hpp"
#include "voldiff/posenc.hpp"
#include "voldiff/rng.hpp"
#include "voldiff/sampler.hpp"
#include "voldiff/schedule.hpp"
#include "voldiff/threadpool.hpp"
#include "voldiff/tiler.hpp"
#include "voldiff/toy_unet.hpp"
#include "voldiff/volume.hpp"
#include "voldiff/vvol.hpp"
