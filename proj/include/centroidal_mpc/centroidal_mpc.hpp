#pragma once

#include "centroidal_mpc/common.hpp"
#include "centroidal_mpc/controller.hpp"
#include "centroidal_mpc/derivative_check.hpp"
#include "centroidal_mpc/log.hpp"
#include "centroidal_mpc/model.hpp"
#include "centroidal_mpc/nlp.hpp"
#include "centroidal_mpc/plan.hpp"
#include "centroidal_mpc/qp.hpp"
#include "centroidal_mpc/quintic_spline.hpp"
#include "centroidal_mpc/scenario.hpp"
#include "centroidal_mpc/simulation.hpp"
#include "centroidal_mpc/sqp.hpp"
#include "centroidal_mpc/transcription.hpp"
