#pragma once

#include "primfit/error.hpp"
#include "primfit/core.hpp"
#include "primfit/select.hpp"
#include "primfit/quadric.hpp"
#include "primfit/curve.hpp"
#include "primfit/meshing.hpp"
#include "primfit/io.hpp"
#include "primfit/serialize.hpp"
#include "primfit/session.hpp"
