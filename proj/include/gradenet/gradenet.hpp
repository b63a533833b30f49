#pragma once

#include "gradenet/architectures.hpp"
#include "gradenet/augment.hpp"
#include "gradenet/datasetprep.hpp"
#include "gradenet/eval.hpp"
#include "gradenet/gradcheck.hpp"
#include "gradenet/network.hpp"
#include "gradenet/phantom.hpp"
#include "gradenet/training.hpp"
#include "gradenet/volume.hpp"
#include "gradenet/weights.hpp"
