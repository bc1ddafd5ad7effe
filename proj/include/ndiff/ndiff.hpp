#ifndef NDIFF_NDIFF_HPP
#define NDIFF_NDIFF_HPP

#include "ndiff/em.hpp"
#include "ndiff/errors.hpp"
#include "ndiff/kalman.hpp"
#include "ndiff/model.hpp"
#include "ndiff/smoother.hpp"

#endif  // NDIFF_NDIFF_HPP
