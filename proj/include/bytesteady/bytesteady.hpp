#pragma once

// Umbrella header.
#include "bytesteady/bytes.hpp"
#include "bytesteady/data.hpp"
#include "bytesteady/eval.hpp"
#include "bytesteady/hash.hpp"
#include "bytesteady/huffman.hpp"
#include "bytesteady/model.hpp"
#include "bytesteady/ngram.hpp"
#include "bytesteady/random.hpp"
#include "bytesteady/trainer.hpp"
