#pragma once

#include "misreport/data.hpp"
#include "misreport/error.hpp"
#include "misreport/estimators.hpp"
#include "misreport/gbt.hpp"
#include "misreport/learners.hpp"
#include "misreport/logistic.hpp"
#include "misreport/matrix.hpp"
#include "misreport/ocsvm.hpp"
#include "misreport/random.hpp"
#include "misreport/runner.hpp"
#include "misreport/simgen.hpp"
#include "misreport/uncertainty.hpp"
