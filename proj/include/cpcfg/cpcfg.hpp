#pragma once

#include "cpcfg/common.hpp"
#include "cpcfg/document.hpp"
#include "cpcfg/grammar.hpp"
#include "cpcfg/tree.hpp"
#include "cpcfg/chart_parser.hpp"
#include "cpcfg/record_types.hpp"
#include "cpcfg/record.hpp"
#include "cpcfg/metrics.hpp"
#include "cpcfg/oracle.hpp"
#include "cpcfg/neural.hpp"
#include "cpcfg/evaluate.hpp"
#include "cpcfg/training.hpp"
#include "cpcfg/synthgen.hpp"
