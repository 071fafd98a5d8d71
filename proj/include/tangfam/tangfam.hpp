#pragma once

#include "tangfam/classify.hpp"
#include "tangfam/deform.hpp"
#include "tangfam/envelope.hpp"
#include "tangfam/equivalence.hpp"
#include "tangfam/expression.hpp"
#include "tangfam/geodesic.hpp"
#include "tangfam/germ.hpp"
#include "tangfam/io.hpp"
#include "tangfam/series.hpp"
