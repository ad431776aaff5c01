#pragma once

#include <vector>

#include "vasense/experiments.hpp"

// 100 default-config trials at 0 dB and 100 at 10 dB, computed once and
// shared by the suites that need matched-seed pairs.
const std::vector<vasense::TrialResult>& shared_trials();
