#ifndef OFM_OFM_HPP
#define OFM_OFM_HPP

// Umbrella header: the whole library.

#include "ofm/baselines.hpp"
#include "ofm/benchmark.hpp"
#include "ofm/checkpoint.hpp"
#include "ofm/config.hpp"
#include "ofm/experiment.hpp"
#include "ofm/hungarian.hpp"
#include "ofm/inversion.hpp"
#include "ofm/metrics_log.hpp"
#include "ofm/ode.hpp"
#include "ofm/ofm_trainer.hpp"
#include "ofm/plans.hpp"
#include "ofm/potential.hpp"
#include "ofm/quadrature.hpp"
#include "ofm/svg.hpp"

#endif  // OFM_OFM_HPP
