#pragma once

#include "ftscore/tensor/opcheck.hpp"

namespace ftscore::test {
using namespace ftscore::opcheck;
} // namespace ftscore::test
