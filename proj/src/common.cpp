#include "cvpm/common.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace cvpm {

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const ParseError*>(&e)) return 3;
  if (dynamic_cast<const ValidationError*>(&e)) return 3;
  if (dynamic_cast<const DataError*>(&e)) return 3;
  if (dynamic_cast<const ShapeError*>(&e)) return 3;
  if (dynamic_cast<const TrainError*>(&e)) return 4;
  if (dynamic_cast<const EvalError*>(&e)) return 5;
  return 1;
}

std::string format_double(double v) {
  char buf[40];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

}  // namespace cvpm
