#pragma once

#include "qrlab/asymptotics.hpp"
#include "qrlab/common.hpp"
#include "qrlab/config.hpp"
#include "qrlab/coupling_lab.hpp"
#include "qrlab/density_lab.hpp"
#include "qrlab/design_data.hpp"
#include "qrlab/distributions.hpp"
#include "qrlab/inference.hpp"
#include "qrlab/rate_fit.hpp"
#include "qrlab/report_io.hpp"
#include "qrlab/solver.hpp"
#include "qrlab/studies.hpp"
