#pragma once

#include "saflo/core.hpp"
#include "saflo/schedulers.hpp"
#include "saflo/netsim.hpp"
#include "saflo/manager.hpp"
#include "saflo/cnn.hpp"
#include "saflo/detector.hpp"
#include "saflo/workloads.hpp"
#include "saflo/adversary.hpp"
#include "saflo/harness.hpp"
