#pragma once

#include "cvdcm/choice_data.hpp"
#include "cvdcm/common.hpp"
#include "cvdcm/csv.hpp"
#include "cvdcm/dataset.hpp"
#include "cvdcm/embedding.hpp"
#include "cvdcm/gradient.hpp"
#include "cvdcm/manifest.hpp"
#include "cvdcm/model.hpp"
#include "cvdcm/params.hpp"
#include "cvdcm/semantics.hpp"
#include "cvdcm/simulator.hpp"
#include "cvdcm/spatial.hpp"
#include "cvdcm/trainer.hpp"
#include "cvdcm/zones.hpp"
