#pragma once

#include "otgeo/core.hpp"
#include "otgeo/sinkhorn.hpp"
#include "otgeo/geometry.hpp"
#include "otgeo/divergence.hpp"
#include "otgeo/gaussian.hpp"
#include "otgeo/oracle.hpp"
#include "otgeo/apps.hpp"
#include "otgeo/io.hpp"
