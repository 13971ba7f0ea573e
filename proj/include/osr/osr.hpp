#pragma once

#include "osr/checkpoint.hpp"
#include "osr/dataset.hpp"
#include "osr/evaluation.hpp"
#include "osr/experiment.hpp"
#include "osr/ini.hpp"
#include "osr/losses.hpp"
#include "osr/network.hpp"
#include "osr/report.hpp"
#include "osr/spectra.hpp"
#include "osr/synthetic.hpp"
#include "osr/tensor.hpp"
#include "osr/training.hpp"
#include "osr/tuning.hpp"
