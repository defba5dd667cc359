#pragma once

// Umbrella header: rational polynomial chaos surrogates with sparse
// Bayesian training, and Bayesian-optimization MAP estimation for
// frequency-domain model updating.

#include "rpcebo/bayes_opt.hpp"
#include "rpcebo/complex_stats.hpp"
#include "rpcebo/dyn_models.hpp"
#include "rpcebo/inverse_problem.hpp"
#include "rpcebo/optim.hpp"
#include "rpcebo/pce_basis.hpp"
#include "rpcebo/rng.hpp"
#include "rpcebo/rpce_model.hpp"
#include "rpcebo/sbl_trainer.hpp"
#include "rpcebo/serialization.hpp"
#include "rpcebo/surrogate_posterior.hpp"
