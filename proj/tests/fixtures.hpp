#pragma once

#include <Eigen/Dense>

#include "ucr/common.hpp"
#include "ucr/system_model.hpp"

namespace fixtures {

inline ucr::Generator make_gen(int bus, double pmin, double pmax) {
  ucr::Generator g;
  g.bus = bus;
  g.startup_cost = 100.0;
  g.shutdown_cost = 50.0;
  g.energy_cost = 10.0;
  g.reserve_up_cost = 2.0;
  g.reserve_dn_cost = 2.0;
  g.adjust_up_cost = 15.0;
  g.adjust_dn_cost = 12.0;
  g.p_min = pmin;
  g.p_max = pmax;
  g.reserve_up_max = 0.4 * pmax;
  g.reserve_dn_max = 0.4 * pmax;
  g.ramp_up = 0.5 * pmax;
  g.ramp_dn = 0.5 * pmax;
  g.ramp_startup = pmax;
  g.ramp_shutdown = pmax;
  g.min_up = 1;
  g.min_dn = 1;
  g.initial_on = 0;
  return g;
}

inline ucr::PowerSystem single_gen_system(int periods = 1) {
  ucr::PowerSystem sys;
  sys.horizon = periods;
  sys.buses = {"b0"};
  sys.generators = {make_gen(0, 0.0, 100.0)};
  sys.ptdf_gen.resize(0, 1);
  sys.ptdf_bus.resize(0, 1);
  sys.validate();
  return sys;
}

inline ucr::PowerSystem two_gen_system(int periods, int buses = 2,
                                       bool with_line = false) {
  ucr::PowerSystem sys;
  sys.horizon = periods;
  for (int i = 0; i < buses; ++i) sys.buses.push_back("b" + std::to_string(i));
  sys.generators = {make_gen(0, 10.0, 120.0), make_gen(buses - 1, 0.0, 80.0)};
  sys.generators[0].initial_on = 1;
  sys.generators[1].energy_cost = 14.0;
  if (with_line) {
    sys.lines = {ucr::Line{0, buses - 1, 60.0}};
    sys.ptdf_gen.resize(1, 2);
    sys.ptdf_gen << 0.4, -0.3;
    sys.ptdf_bus.resize(1, buses);
    for (int i = 0; i < buses; ++i) sys.ptdf_bus(0, i) = (i == 0) ? 0.4 : -0.3;
  } else {
    sys.ptdf_gen.resize(0, 2);
    sys.ptdf_bus.resize(0, buses);
  }
  sys.validate();
  return sys;
}

// the benchmark generator fleet from the six-unit case
inline ucr::PowerSystem six_gen_system(int periods = 24) {
  ucr::PowerSystem sys;
  sys.horizon = periods;
  for (int i = 0; i < 4; ++i) sys.buses.push_back("b" + std::to_string(i));
  const double pmax[6] = {360, 140, 100, 100, 100, 100};
  const double pmin[6] = {100, 40, 0, 0, 0, 0};
  for (int g = 0; g < 6; ++g) {
    auto gen = make_gen(g % 4, pmin[g], pmax[g]);
    gen.min_up = 6;
    gen.min_dn = 6;
    gen.initial_on = (g < 2) ? 1 : 0;
    sys.generators.push_back(gen);
  }
  sys.ptdf_gen.resize(0, 6);
  sys.ptdf_bus.resize(0, 4);
  sys.validate();
  return sys;
}

inline ucr::PowerSystem random_system(ucr::Rng& rng, int gens, int buses,
                                      int periods, int lines) {
  ucr::PowerSystem sys;
  sys.horizon = periods;
  for (int i = 0; i < buses; ++i) sys.buses.push_back("b" + std::to_string(i));
  for (int g = 0; g < gens; ++g) {
    auto gen = make_gen(rng.uniform_int(0, buses - 1), 0.0,
                        50.0 + 100.0 * rng.uniform());
    gen.energy_cost = 5.0 + 10.0 * rng.uniform();
    gen.adjust_up_cost = 10.0 + 10.0 * rng.uniform();
    gen.adjust_dn_cost = 8.0 + 10.0 * rng.uniform();
    gen.initial_on = rng.uniform() < 0.5 ? 1 : 0;
    sys.generators.push_back(gen);
  }
  sys.ptdf_gen.resize(lines, gens);
  sys.ptdf_bus.resize(lines, buses);
  for (int l = 0; l < lines; ++l) {
    sys.lines.push_back(ucr::Line{0, 1 % buses, 150.0 + 100.0 * rng.uniform()});
    for (int g = 0; g < gens; ++g) sys.ptdf_gen(l, g) = rng.uniform(-0.5, 0.5);
    for (int i = 0; i < buses; ++i) sys.ptdf_bus(l, i) = rng.uniform(-0.5, 0.5);
  }
  sys.validate();
  return sys;
}

}  // namespace fixtures
