#ifndef DCR_DCR_HPP
#define DCR_DCR_HPP

#include "dcr/annotator_sim.hpp"
#include "dcr/autodiff.hpp"
#include "dcr/experiment.hpp"
#include "dcr/losses.hpp"
#include "dcr/metrics.hpp"
#include "dcr/models.hpp"
#include "dcr/random.hpp"
#include "dcr/tensor.hpp"
#include "dcr/training.hpp"

#endif  // DCR_DCR_HPP
