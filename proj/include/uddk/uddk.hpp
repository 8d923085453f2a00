#pragma once

#include "uddk/device.hpp"
#include "uddk/devreg.hpp"
#include "uddk/dma.hpp"
#include "uddk/driver.hpp"
#include "uddk/error.hpp"
#include "uddk/ixgbe.hpp"
#include "uddk/mempool.hpp"
#include "uddk/virtio.hpp"
