#pragma once

// Everything at once.

#include "apc/autoscaler.hpp"
#include "apc/cli.hpp"
#include "apc/compiler.hpp"
#include "apc/dsl/parser.hpp"
#include "apc/dsl/printer.hpp"
#include "apc/dsl/resolve.hpp"
#include "apc/errors.hpp"
#include "apc/fabric.hpp"
#include "apc/format.hpp"
#include "apc/machine.hpp"
#include "apc/netlist_json.hpp"
#include "apc/oracle.hpp"
#include "apc/scale_map.hpp"
#include "apc/simulator.hpp"
#include "apc/trace.hpp"
