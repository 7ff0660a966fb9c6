#pragma once

#include "saltseg/adadelta.hpp"
#include "saltseg/checkpoint.hpp"
#include "saltseg/config.hpp"
#include "saltseg/dataset.hpp"
#include "saltseg/error.hpp"
#include "saltseg/gradcheck.hpp"
#include "saltseg/image_io.hpp"
#include "saltseg/kernels.hpp"
#include "saltseg/loss.hpp"
#include "saltseg/model.hpp"
#include "saltseg/synth.hpp"
#include "saltseg/tensor.hpp"
#include "saltseg/training.hpp"
