#pragma once

#include "etcir/codebook.hpp"
#include "etcir/error.hpp"
#include "etcir/etc_cipher.hpp"
#include "etcir/evaluation.hpp"
#include "etcir/image_io.hpp"
#include "etcir/index.hpp"
#include "etcir/scd.hpp"
#include "etcir/synthetic.hpp"
