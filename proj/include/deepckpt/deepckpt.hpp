#pragma once

#include "deepckpt/aggregate.hpp"
#include "deepckpt/bench.hpp"
#include "deepckpt/ckpt.hpp"
#include "deepckpt/cluster.hpp"
#include "deepckpt/config.hpp"
#include "deepckpt/crc32c.hpp"
#include "deepckpt/errors.hpp"
#include "deepckpt/recovery.hpp"
#include "deepckpt/simnet.hpp"
#include "deepckpt/taskres.hpp"
#include "deepckpt/xor_code.hpp"
