#pragma once

#include "tinybox/error.hpp"
#include "tinybox/eval.hpp"
#include "tinybox/geometry.hpp"
#include "tinybox/gradcheck.hpp"
#include "tinybox/harness.hpp"
#include "tinybox/io.hpp"
#include "tinybox/msfd.hpp"
#include "tinybox/prune.hpp"
#include "tinybox/report.hpp"
#include "tinybox/rng.hpp"
#include "tinybox/salnwd.hpp"
#include "tinybox/tensor.hpp"
