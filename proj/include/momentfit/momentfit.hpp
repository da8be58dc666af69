#pragma once

#include "momentfit/errors.hpp"
#include "momentfit/summary_data.hpp"
#include "momentfit/incomplete_gamma.hpp"
#include "momentfit/erlang_mixture.hpp"
#include "momentfit/penalty.hpp"
#include "momentfit/likelihood.hpp"
#include "momentfit/lambda_select.hpp"
#include "momentfit/bfgs.hpp"
#include "momentfit/fitter.hpp"
#include "momentfit/uncertainty.hpp"
#include "momentfit/metrics.hpp"
#include "momentfit/distributions.hpp"
#include "momentfit/experiments.hpp"
#include "momentfit/csv.hpp"
#include "momentfit/json_io.hpp"
