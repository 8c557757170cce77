#pragma once

#include "core.hpp"
#include "network.hpp"
#include "scenario.hpp"
#include "lq_kernel.hpp"
#include "admission.hpp"
#include "oracle.hpp"
#include "harness.hpp"
