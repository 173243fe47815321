#pragma once

#include "combolab/cli.hpp"
#include "combolab/config.hpp"
#include "combolab/data.hpp"
#include "combolab/discretize.hpp"
#include "combolab/gradcheck.hpp"
#include "combolab/gradsuite.hpp"
#include "combolab/losses.hpp"
#include "combolab/model.hpp"
#include "combolab/tape.hpp"
#include "combolab/tensor.hpp"
#include "combolab/train.hpp"
