#pragma once

#include "llmprior/backends.hpp"
#include "llmprior/bayes.hpp"
#include "llmprior/density_grid.hpp"
#include "llmprior/distributions.hpp"
#include "llmprior/elicitation.hpp"
#include "llmprior/fed.hpp"
#include "llmprior/fed_http.hpp"
#include "llmprior/mixture_reduction.hpp"
#include "llmprior/pooling.hpp"
#include "llmprior/serialization.hpp"
