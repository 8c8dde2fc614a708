#pragma once

#include <Eigen/Dense>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "ucr/lp.hpp"

namespace ucr {

struct Generator {
  int bus = 0;
  double startup_cost = 0.0, shutdown_cost = 0.0;
  double energy_cost = 0.0;
  double reserve_up_cost = 0.0, reserve_dn_cost = 0.0;
  double adjust_up_cost = 0.0, adjust_dn_cost = 0.0;
  double p_min = 0.0, p_max = 0.0;
  double reserve_up_max = 0.0, reserve_dn_max = 0.0;
  double ramp_up = 0.0, ramp_dn = 0.0;       // within-period, unit stays on
  double ramp_startup = 0.0, ramp_shutdown = 0.0;
  int min_up = 1, min_dn = 1;
  int initial_on = 0;  // commitment state before period 1
};

struct Line {
  int from = 0, to = 0;
  double capacity = 0.0;
};

struct PowerSystem {
  int horizon = 0;
  std::vector<std::string> buses;
  std::vector<Generator> generators;
  std::vector<Line> lines;
  Eigen::MatrixXd ptdf_gen;  // lines x generators
  Eigen::MatrixXd ptdf_bus;  // lines x buses

  int num_buses() const { return static_cast<int>(buses.size()); }
  int num_gens() const { return static_cast<int>(generators.size()); }
  int num_lines() const { return static_cast<int>(lines.size()); }

  void validate() const {
    require(horizon >= 1, "system: horizon must be >= 1");
    require(!generators.empty(), "system: no generators");
    require(!buses.empty(), "system: no buses");
    for (int g = 0; g < num_gens(); ++g) {
      const auto& gen = generators[g];
      const std::string tag = "generator " + std::to_string(g) + ": ";
      require(gen.bus >= 0 && gen.bus < num_buses(), tag + "bad bus index");
      require(gen.p_min >= 0.0 && gen.p_min <= gen.p_max,
              tag + "need 0 <= p_min <= p_max");
      require(gen.min_up >= 1 && gen.min_up <= horizon,
              tag + "min_up outside [1, horizon]");
      require(gen.min_dn >= 1 && gen.min_dn <= horizon,
              tag + "min_dn outside [1, horizon]");
      for (double c : {gen.startup_cost, gen.shutdown_cost, gen.energy_cost,
                       gen.reserve_up_cost, gen.reserve_dn_cost,
                       gen.adjust_up_cost, gen.adjust_dn_cost})
        require(c >= 0.0, tag + "negative cost");
      for (double r : {gen.ramp_up, gen.ramp_dn, gen.ramp_startup,
                       gen.ramp_shutdown, gen.reserve_up_max,
                       gen.reserve_dn_max})
        require(r >= 0.0, tag + "negative rate or cap");
      require(gen.initial_on == 0 || gen.initial_on == 1,
              tag + "initial_on must be 0 or 1");
    }
    for (int l = 0; l < num_lines(); ++l)
      require(lines[l].capacity > 0.0,
              "line " + std::to_string(l) + ": capacity must be positive");
    require(ptdf_gen.rows() == num_lines() && ptdf_bus.rows() == num_lines(),
            "system: PTDF row count must equal line count");
    require(num_lines() == 0 || ptdf_gen.cols() == num_gens(),
            "system: ptdf_gen column count must equal generator count");
    require(num_lines() == 0 || ptdf_bus.cols() == num_buses(),
            "system: ptdf_bus column count must equal bus count");
  }
};

/* Column layout of the commitment stage: six generator-by-period blocks in a
   fixed order, generator-major inside each block. */
struct XLayout {
  int gens = 0, periods = 0, base = 0;
  enum Block { kOn = 0, kStart, kStop, kPower, kResUp, kResDn };

  int block_size() const { return gens * periods; }
  int size() const { return 6 * block_size(); }
  int at(Block b, int g, int t) const {
    return base + static_cast<int>(b) * block_size() + g * periods + t;
  }
};

struct YLayout {
  int gens = 0, periods = 0, base = 0;
  enum Block { kUp = 0, kDn };
  int block_size() const { return gens * periods; }
  int size() const { return 2 * block_size(); }
  int at(Block b, int g, int t) const {
    return base + static_cast<int>(b) * block_size() + g * periods + t;
  }
};

inline int load_index(const PowerSystem& sys, int bus, int t) {
  return bus * sys.horizon + t;
}

struct CommitmentSchedule {
  Eigen::MatrixXd on, start, stop;  // 0/1 valued
  Eigen::MatrixXd power, res_up, res_dn;

  static CommitmentSchedule zeros(int gens, int periods) {
    CommitmentSchedule s;
    for (auto* m : {&s.on, &s.start, &s.stop, &s.power, &s.res_up, &s.res_dn})
      *m = Eigen::MatrixXd::Zero(gens, periods);
    return s;
  }

  std::vector<double> to_vector(const XLayout& xl) const {
    std::vector<double> v(xl.size(), 0.0);
    for (int g = 0; g < xl.gens; ++g)
      for (int t = 0; t < xl.periods; ++t) {
        v[xl.at(XLayout::kOn, g, t)] = on(g, t);
        v[xl.at(XLayout::kStart, g, t)] = start(g, t);
        v[xl.at(XLayout::kStop, g, t)] = stop(g, t);
        v[xl.at(XLayout::kPower, g, t)] = power(g, t);
        v[xl.at(XLayout::kResUp, g, t)] = res_up(g, t);
        v[xl.at(XLayout::kResDn, g, t)] = res_dn(g, t);
      }
    return v;
  }

  static CommitmentSchedule from_vector(const XLayout& xl,
                                        const std::vector<double>& v,
                                        bool snap_binaries = true) {
    CommitmentSchedule s = zeros(xl.gens, xl.periods);
    for (int g = 0; g < xl.gens; ++g)
      for (int t = 0; t < xl.periods; ++t) {
        s.on(g, t) = v[xl.at(XLayout::kOn, g, t)];
        s.start(g, t) = v[xl.at(XLayout::kStart, g, t)];
        s.stop(g, t) = v[xl.at(XLayout::kStop, g, t)];
        s.power(g, t) = v[xl.at(XLayout::kPower, g, t)];
        s.res_up(g, t) = v[xl.at(XLayout::kResUp, g, t)];
        s.res_dn(g, t) = v[xl.at(XLayout::kResDn, g, t)];
      }
    if (snap_binaries)
      for (auto* m : {&s.on, &s.start, &s.stop})
        *m = m->unaryExpr([](double x) { return std::round(x); });
    return s;
  }
};

struct RedispatchPlan {
  Eigen::MatrixXd up, dn;

  static RedispatchPlan zeros(int gens, int periods) {
    RedispatchPlan p;
    p.up = Eigen::MatrixXd::Zero(gens, periods);
    p.dn = Eigen::MatrixXd::Zero(gens, periods);
    return p;
  }

  static RedispatchPlan from_vector(const YLayout& yl,
                                    const std::vector<double>& v) {
    RedispatchPlan p = zeros(yl.gens, yl.periods);
    for (int g = 0; g < yl.gens; ++g)
      for (int t = 0; t < yl.periods; ++t) {
        p.up(g, t) = v[yl.at(YLayout::kUp, g, t)];
        p.dn(g, t) = v[yl.at(YLayout::kDn, g, t)];
      }
    return p;
  }
};

struct Violation {
  std::string constraint;
  double residual = 0.0;  // positive amount by which the constraint fails
};

// ---------------------------------------------------------------------------
// JSON document

inline PowerSystem power_system_from_json(const nlohmann::json& doc) {
  PowerSystem sys;
  require(doc.contains("horizon"), "system json: missing horizon");
  sys.horizon = doc.at("horizon").get<int>();
  require(doc.contains("buses"), "system json: missing buses");
  for (const auto& b : doc.at("buses")) {
    if (b.is_string())
      sys.buses.push_back(b.get<std::string>());
    else
      sys.buses.push_back(std::to_string(b.get<long long>()));
  }
  require(doc.contains("generators"), "system json: missing generators");
  for (const auto& j : doc.at("generators")) {
    Generator g;
    g.bus = j.at("bus").get<int>();
    g.startup_cost = j.at("o_plus").get<double>();
    g.shutdown_cost = j.at("o_minus").get<double>();
    g.energy_cost = j.at("rho").get<double>();
    g.reserve_up_cost = j.at("gamma_plus").get<double>();
    g.reserve_dn_cost = j.at("gamma_minus").get<double>();
    g.adjust_up_cost = j.at("rho_plus").get<double>();
    g.adjust_dn_cost = j.at("rho_minus").get<double>();
    g.p_min = j.at("p_min").get<double>();
    g.p_max = j.at("p_max").get<double>();
    g.reserve_up_max = j.at("r_plus_max").get<double>();
    g.reserve_dn_max = j.at("r_minus_max").get<double>();
    g.ramp_up = j.at("k_plus").get<double>();
    g.ramp_dn = j.at("k_minus").get<double>();
    g.ramp_startup = j.at("k_up").get<double>();
    g.ramp_shutdown = j.at("k_down").get<double>();
    g.min_up = j.at("t_up").get<int>();
    g.min_dn = j.at("t_down").get<int>();
    g.initial_on = j.at("theta0").get<int>();
    sys.generators.push_back(g);
  }
  const int nl = doc.contains("lines") ? static_cast<int>(doc.at("lines").size()) : 0;
  if (doc.contains("lines"))
    for (const auto& j : doc.at("lines")) {
      Line l;
      l.from = j.at("from").get<int>();
      l.to = j.at("to").get<int>();
      l.capacity = j.at("capacity").get<double>();
      sys.lines.push_back(l);
    }
  sys.ptdf_gen = Eigen::MatrixXd::Zero(nl, sys.num_gens());
  sys.ptdf_bus = Eigen::MatrixXd::Zero(nl, sys.num_buses());
  if (nl > 0) {
    require(doc.contains("ptdf"), "system json: lines present but no ptdf");
    const auto& p = doc.at("ptdf");
    const auto& pg = p.at("gen");
    const auto& pb = p.at("bus");
    require(static_cast<int>(pg.size()) == nl && static_cast<int>(pb.size()) == nl,
            "system json: ptdf row count must equal line count");
    for (int l = 0; l < nl; ++l) {
      require(static_cast<int>(pg[l].size()) == sys.num_gens(),
              "system json: ptdf.gen row " + std::to_string(l) + " has wrong width");
      require(static_cast<int>(pb[l].size()) == sys.num_buses(),
              "system json: ptdf.bus row " + std::to_string(l) + " has wrong width");
      for (int g = 0; g < sys.num_gens(); ++g)
        sys.ptdf_gen(l, g) = pg[l][g].get<double>();
      for (int i = 0; i < sys.num_buses(); ++i)
        sys.ptdf_bus(l, i) = pb[l][i].get<double>();
    }
  }
  sys.validate();
  return sys;
}

inline nlohmann::json power_system_to_json(const PowerSystem& sys) {
  nlohmann::json doc;
  doc["horizon"] = sys.horizon;
  doc["buses"] = sys.buses;
  doc["generators"] = nlohmann::json::array();
  for (const auto& g : sys.generators) {
    doc["generators"].push_back({{"bus", g.bus},
                                 {"o_plus", g.startup_cost},
                                 {"o_minus", g.shutdown_cost},
                                 {"rho", g.energy_cost},
                                 {"gamma_plus", g.reserve_up_cost},
                                 {"gamma_minus", g.reserve_dn_cost},
                                 {"rho_plus", g.adjust_up_cost},
                                 {"rho_minus", g.adjust_dn_cost},
                                 {"p_min", g.p_min},
                                 {"p_max", g.p_max},
                                 {"r_plus_max", g.reserve_up_max},
                                 {"r_minus_max", g.reserve_dn_max},
                                 {"k_plus", g.ramp_up},
                                 {"k_minus", g.ramp_dn},
                                 {"k_up", g.ramp_startup},
                                 {"k_down", g.ramp_shutdown},
                                 {"t_up", g.min_up},
                                 {"t_down", g.min_dn},
                                 {"theta0", g.initial_on}});
  }
  doc["lines"] = nlohmann::json::array();
  for (const auto& l : sys.lines)
    doc["lines"].push_back(
        {{"from", l.from}, {"to", l.to}, {"capacity", l.capacity}});
  nlohmann::json pg = nlohmann::json::array(), pb = nlohmann::json::array();
  for (int l = 0; l < sys.num_lines(); ++l) {
    nlohmann::json rg = nlohmann::json::array(), rb = nlohmann::json::array();
    for (int g = 0; g < sys.num_gens(); ++g) rg.push_back(sys.ptdf_gen(l, g));
    for (int i = 0; i < sys.num_buses(); ++i) rb.push_back(sys.ptdf_bus(l, i));
    pg.push_back(rg);
    pb.push_back(rb);
  }
  doc["ptdf"] = {{"gen", pg}, {"bus", pb}};
  return doc;
}

inline PowerSystem load_power_system(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open system file " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const std::exception& e) {
    fail("system json " + path + ": " + e.what());
  }
  return power_system_from_json(doc);
}

// ---------------------------------------------------------------------------
// Pre-dispatch constraint system

/* Adds the commitment-stage variables and constraints to lp. Load is the
   signed net-load matrix (buses x periods); wind shows up as negative load.
   Rows keep stable names so violations and duals can be reported by name. */
inline XLayout add_predispatch_stage(LinearProgram* lp, const PowerSystem& sys,
                                     const Eigen::MatrixXd& load,
                                     bool binaries = true) {
  const int G = sys.num_gens(), T = sys.horizon, L = sys.num_lines();
  require(load.rows() == sys.num_buses() && load.cols() == T,
          "add_predispatch_stage: load matrix must be buses x periods");

  XLayout xl;
  xl.gens = G;
  xl.periods = T;
  xl.base = lp->num_cols();
  const VarKind bk = binaries ? VarKind::Binary : VarKind::Continuous;
  auto tag = [](const char* stem, int g, int t) {
    return std::string(stem) + "_g" + std::to_string(g) + "_t" +
           std::to_string(t);
  };
  for (int g = 0; g < G; ++g)
    for (int t = 0; t < T; ++t) lp->add_col(0, 1, 0, bk, tag("on", g, t));
  for (int g = 0; g < G; ++g)
    for (int t = 0; t < T; ++t) lp->add_col(0, 1, 0, bk, tag("start", g, t));
  for (int g = 0; g < G; ++g)
    for (int t = 0; t < T; ++t) lp->add_col(0, 1, 0, bk, tag("stop", g, t));
  for (int g = 0; g < G; ++g)
    for (int t = 0; t < T; ++t)
      lp->add_col(0, sys.generators[g].p_max, 0, VarKind::Continuous,
                  tag("p", g, t));
  for (int g = 0; g < G; ++g)
    for (int t = 0; t < T; ++t)
      lp->add_col(0, sys.generators[g].reserve_up_max, 0, VarKind::Continuous,
                  tag("rup", g, t));
  for (int g = 0; g < G; ++g)
    for (int t = 0; t < T; ++t)
      lp->add_col(0, sys.generators[g].reserve_dn_max, 0, VarKind::Continuous,
                  tag("rdn", g, t));

  // (8a) system balance per period
  for (int t = 0; t < T; ++t) {
    std::vector<std::pair<int, double>> row;
    for (int g = 0; g < G; ++g) row.push_back({xl.at(XLayout::kPower, g, t), 1.0});
    double rhs = 0.0;
    for (int i = 0; i < sys.num_buses(); ++i) rhs += load(i, t);
    lp->add_row(RowSense::Equal, rhs, row, "balance_t" + std::to_string(t));
  }
  // (8b) line flow, both signs
  for (int l = 0; l < L; ++l)
    for (int t = 0; t < T; ++t) {
      std::vector<std::pair<int, double>> row;
      double shift = 0.0;
      for (int g = 0; g < G; ++g)
        row.push_back({xl.at(XLayout::kPower, g, t), sys.ptdf_gen(l, g)});
      for (int i = 0; i < sys.num_buses(); ++i)
        shift += sys.ptdf_bus(l, i) * load(i, t);
      const std::string stem = "_l" + std::to_string(l) + "_t" + std::to_string(t);
      lp->add_row(RowSense::LessEqual, sys.lines[l].capacity + shift, row,
                  "flow_hi" + stem);
      lp->add_row(RowSense::GreaterEqual, -sys.lines[l].capacity + shift, row,
                  "flow_lo" + stem);
    }
  for (int g = 0; g < G; ++g) {
    const auto& gen = sys.generators[g];
    // (8d) minimum up time inside the horizon
    for (int t = 0; t + gen.min_up <= T; ++t) {
      std::vector<std::pair<int, double>> row;
      for (int tau = t; tau < t + gen.min_up; ++tau)
        row.push_back({xl.at(XLayout::kOn, g, tau), 1.0});
      row.push_back({xl.at(XLayout::kStart, g, t), -double(gen.min_up)});
      lp->add_row(RowSense::GreaterEqual, 0.0, row, tag("minup", g, t));
    }
    // (8e) tail windows stay on until the horizon ends
    for (int t = std::max(0, T - gen.min_up + 1); t < T; ++t) {
      std::vector<std::pair<int, double>> row;
      for (int tau = t; tau < T; ++tau)
        row.push_back({xl.at(XLayout::kOn, g, tau), 1.0});
      row.push_back({xl.at(XLayout::kStart, g, t), -double(T - t)});
      lp->add_row(RowSense::GreaterEqual, 0.0, row, tag("minup_tail", g, t));
    }
    // (8f) minimum down time
    for (int t = 0; t + gen.min_dn <= T; ++t) {
      std::vector<std::pair<int, double>> row;
      for (int tau = t; tau < t + gen.min_dn; ++tau)
        row.push_back({xl.at(XLayout::kOn, g, tau), -1.0});
      row.push_back({xl.at(XLayout::kStop, g, t), -double(gen.min_dn)});
      lp->add_row(RowSense::GreaterEqual, -double(gen.min_dn), row,
                  tag("mindn", g, t));
    }
    // (8g) tail
    for (int t = std::max(0, T - gen.min_dn + 1); t < T; ++t) {
      std::vector<std::pair<int, double>> row;
      for (int tau = t; tau < T; ++tau)
        row.push_back({xl.at(XLayout::kOn, g, tau), -1.0});
      row.push_back({xl.at(XLayout::kStop, g, t), -double(T - t)});
      lp->add_row(RowSense::GreaterEqual, -double(T - t), row,
                  tag("mindn_tail", g, t));
    }
    // (8h) state bookkeeping, boundary state from config
    for (int t = 0; t < T; ++t) {
      std::vector<std::pair<int, double>> row = {
          {xl.at(XLayout::kOn, g, t), 1.0},
          {xl.at(XLayout::kStart, g, t), -1.0},
          {xl.at(XLayout::kStop, g, t), 1.0}};
      double rhs = 0.0;
      if (t == 0)
        rhs = double(gen.initial_on);
      else
        row.push_back({xl.at(XLayout::kOn, g, t - 1), -1.0});
      lp->add_row(RowSense::Equal, rhs, row, tag("state", g, t));
    }
    // (8i) no simultaneous start and stop
    for (int t = 0; t < T; ++t)
      lp->add_row(RowSense::LessEqual, 1.0,
                  {{xl.at(XLayout::kStart, g, t), 1.0},
                   {xl.at(XLayout::kStop, g, t), 1.0}},
                  tag("onoff", g, t));
    // (8j) reserves only while committed
    for (int t = 0; t < T; ++t) {
      lp->add_row(RowSense::LessEqual, 0.0,
                  {{xl.at(XLayout::kResUp, g, t), 1.0},
                   {xl.at(XLayout::kOn, g, t), -gen.reserve_up_max}},
                  tag("rup_cap", g, t));
      lp->add_row(RowSense::LessEqual, 0.0,
                  {{xl.at(XLayout::kResDn, g, t), 1.0},
                   {xl.at(XLayout::kOn, g, t), -gen.reserve_dn_max}},
                  tag("rdn_cap", g, t));
    }
    // (8k) headroom on both sides of the scheduled point
    for (int t = 0; t < T; ++t) {
      lp->add_row(RowSense::LessEqual, 0.0,
                  {{xl.at(XLayout::kPower, g, t), -1.0},
                   {xl.at(XLayout::kOn, g, t), gen.p_min},
                   {xl.at(XLayout::kResDn, g, t), 1.0}},
                  tag("floor", g, t));
      lp->add_row(RowSense::LessEqual, 0.0,
                  {{xl.at(XLayout::kPower, g, t), 1.0},
                   {xl.at(XLayout::kOn, g, t), -gen.p_max},
                   {xl.at(XLayout::kResUp, g, t), 1.0}},
                  tag("ceil", g, t));
    }
    // (8l)/(8m) ramping between consecutive periods, reserves included
    for (int t = 1; t < T; ++t) {
      lp->add_row(RowSense::LessEqual, 0.0,
                  {{xl.at(XLayout::kPower, g, t), 1.0},
                   {xl.at(XLayout::kResUp, g, t), 1.0},
                   {xl.at(XLayout::kPower, g, t - 1), -1.0},
                   {xl.at(XLayout::kResDn, g, t - 1), 1.0},
                   {xl.at(XLayout::kOn, g, t - 1), -gen.ramp_up},
                   {xl.at(XLayout::kStart, g, t), -gen.ramp_startup}},
                  tag("ramp_up", g, t));
      lp->add_row(RowSense::LessEqual, 0.0,
                  {{xl.at(XLayout::kPower, g, t), -1.0},
                   {xl.at(XLayout::kResDn, g, t), 1.0},
                   {xl.at(XLayout::kPower, g, t - 1), 1.0},
                   {xl.at(XLayout::kResUp, g, t - 1), 1.0},
                   {xl.at(XLayout::kOn, g, t), -gen.ramp_dn},
                   {xl.at(XLayout::kStop, g, t), -gen.ramp_shutdown}},
                  tag("ramp_dn", g, t));
    }
  }
  return xl;
}

// commitment-stage cost coefficients in XLayout order
inline std::vector<double> predispatch_cost_vector(const PowerSystem& sys,
                                                   const XLayout& xl) {
  std::vector<double> c(xl.size(), 0.0);
  for (int g = 0; g < xl.gens; ++g) {
    const auto& gen = sys.generators[g];
    for (int t = 0; t < xl.periods; ++t) {
      c[xl.at(XLayout::kStart, g, t) - xl.base] = gen.startup_cost;
      c[xl.at(XLayout::kStop, g, t) - xl.base] = gen.shutdown_cost;
      c[xl.at(XLayout::kPower, g, t) - xl.base] = gen.energy_cost;
      c[xl.at(XLayout::kResUp, g, t) - xl.base] = gen.reserve_up_cost;
      c[xl.at(XLayout::kResDn, g, t) - xl.base] = gen.reserve_dn_cost;
    }
  }
  return c;
}

inline double predispatch_cost(const PowerSystem& sys,
                               const CommitmentSchedule& x) {
  double total = 0.0;
  for (int g = 0; g < sys.num_gens(); ++g) {
    const auto& gen = sys.generators[g];
    for (int t = 0; t < sys.horizon; ++t)
      total += gen.startup_cost * x.start(g, t) +
               gen.shutdown_cost * x.stop(g, t) +
               gen.energy_cost * x.power(g, t) +
               gen.reserve_up_cost * x.res_up(g, t) +
               gen.reserve_dn_cost * x.res_dn(g, t);
  }
  return total;
}

inline double redispatch_cost(const PowerSystem& sys,
                              const RedispatchPlan& y) {
  double total = 0.0;
  for (int g = 0; g < sys.num_gens(); ++g) {
    const auto& gen = sys.generators[g];
    for (int t = 0; t < sys.horizon; ++t)
      total += gen.adjust_up_cost * y.up(g, t) +
               gen.adjust_dn_cost * y.dn(g, t);
  }
  return total;
}

// ---------------------------------------------------------------------------
// Compact form A y >= B x + D u + E

struct CompactTwoStage {
  XLayout xl;  // base 0
  YLayout yl;  // base 0
  int udim = 0;
  std::vector<std::vector<std::pair<int, double>>> a_rows, b_rows, d_rows;
  std::vector<double> e;
  std::vector<double> c;  // over x
  std::vector<double> f;  // over y
  std::vector<std::string> row_names;

  int num_rows() const { return static_cast<int>(e.size()); }

  double rhs_value(int i, const std::vector<double>& x,
                   const std::vector<double>& u) const {
    double v = e[i];
    for (const auto& [j, co] : b_rows[i]) v += co * x[j];
    for (const auto& [j, co] : d_rows[i]) v += co * u[j];
    return v;
  }

  double lhs_value(int i, const std::vector<double>& y) const {
    double v = 0.0;
    for (const auto& [j, co] : a_rows[i]) v += co * y[j];
    return v;
  }
};

inline CompactTwoStage build_compact_form(const PowerSystem& sys) {
  const int G = sys.num_gens(), T = sys.horizon, L = sys.num_lines();
  const int I = sys.num_buses();
  CompactTwoStage cf;
  cf.xl = XLayout{G, T, 0};
  cf.yl = YLayout{G, T, 0};
  cf.udim = I * T;
  cf.c = predispatch_cost_vector(sys, cf.xl);
  cf.f.assign(cf.yl.size(), 0.0);
  for (int g = 0; g < G; ++g)
    for (int t = 0; t < T; ++t) {
      cf.f[cf.yl.at(YLayout::kUp, g, t)] = sys.generators[g].adjust_up_cost;
      cf.f[cf.yl.at(YLayout::kDn, g, t)] = sys.generators[g].adjust_dn_cost;
    }

  auto push = [&](std::vector<std::pair<int, double>> a,
                  std::vector<std::pair<int, double>> b,
                  std::vector<std::pair<int, double>> d, double e0,
                  std::string name) {
    cf.a_rows.push_back(std::move(a));
    cf.b_rows.push_back(std::move(b));
    cf.d_rows.push_back(std::move(d));
    cf.e.push_back(e0);
    cf.row_names.push_back(std::move(name));
  };

  // balance equality split into >= and <=
  for (int t = 0; t < T; ++t) {
    std::vector<std::pair<int, double>> a, b, d;
    for (int g = 0; g < G; ++g) {
      a.push_back({cf.yl.at(YLayout::kUp, g, t), 1.0});
      a.push_back({cf.yl.at(YLayout::kDn, g, t), -1.0});
      b.push_back({cf.xl.at(XLayout::kPower, g, t), -1.0});
    }
    for (int i = 0; i < I; ++i) d.push_back({load_index(sys, i, t), 1.0});
    push(a, b, d, 0.0, "balance_ge_t" + std::to_string(t));
    for (auto& [j, v] : a) v = -v;
    for (auto& [j, v] : b) v = -v;
    for (auto& [j, v] : d) v = -v;
    push(a, b, d, 0.0, "balance_le_t" + std::to_string(t));
  }
  // line flow
  for (int l = 0; l < L; ++l)
    for (int t = 0; t < T; ++t) {
      std::vector<std::pair<int, double>> a, b, d;
      for (int g = 0; g < G; ++g) {
        const double pi = sys.ptdf_gen(l, g);
        if (pi == 0.0) continue;
        a.push_back({cf.yl.at(YLayout::kUp, g, t), -pi});
        a.push_back({cf.yl.at(YLayout::kDn, g, t), pi});
        b.push_back({cf.xl.at(XLayout::kPower, g, t), pi});
      }
      for (int i = 0; i < I; ++i) {
        const double pi = sys.ptdf_bus(l, i);
        if (pi != 0.0) d.push_back({load_index(sys, i, t), -pi});
      }
      const std::string stem = "_l" + std::to_string(l) + "_t" + std::to_string(t);
      push(a, b, d, -sys.lines[l].capacity, "flow_hi" + stem);
      for (auto& [j, v] : a) v = -v;
      for (auto& [j, v] : b) v = -v;
      for (auto& [j, v] : d) v = -v;
      push(a, b, d, -sys.lines[l].capacity, "flow_lo" + stem);
    }
  // adjustment caps; nonnegativity lives in the y bounds
  for (int g = 0; g < G; ++g)
    for (int t = 0; t < T; ++t)
      push({{cf.yl.at(YLayout::kUp, g, t), -1.0}},
           {{cf.xl.at(XLayout::kResUp, g, t), -1.0}}, {}, 0.0,
           "up_cap_g" + std::to_string(g) + "_t" + std::to_string(t));
  for (int g = 0; g < G; ++g)
    for (int t = 0; t < T; ++t)
      push({{cf.yl.at(YLayout::kDn, g, t), -1.0}},
           {{cf.xl.at(XLayout::kResDn, g, t), -1.0}}, {}, 0.0,
           "dn_cap_g" + std::to_string(g) + "_t" + std::to_string(t));
  return cf;
}

/* LP for the inner problem min F.y over Y(x, u). */
inline LinearProgram redispatch_lp(const CompactTwoStage& cf,
                                   const std::vector<double>& x,
                                   const std::vector<double>& u) {
  LinearProgram lp;
  for (int j = 0; j < cf.yl.size(); ++j)
    lp.add_col(0.0, kInf, cf.f[j], VarKind::Continuous, "y" + std::to_string(j));
  for (int i = 0; i < cf.num_rows(); ++i)
    lp.add_row(RowSense::GreaterEqual, cf.rhs_value(i, x, u), cf.a_rows[i],
               cf.row_names[i]);
  return lp;
}

// direct evaluation of re-dispatch feasibility, used as the oracle counterpart
inline bool redispatch_feasible_direct(const PowerSystem& sys,
                                       const CommitmentSchedule& x,
                                       const RedispatchPlan& y,
                                       const Eigen::MatrixXd& u,
                                       double tol = 1e-7) {
  const int G = sys.num_gens(), T = sys.horizon;
  for (int t = 0; t < T; ++t) {
    double lhs = 0.0, rhs = 0.0;
    for (int g = 0; g < G; ++g)
      lhs += x.power(g, t) + y.up(g, t) - y.dn(g, t);
    for (int i = 0; i < sys.num_buses(); ++i) rhs += u(i, t);
    if (std::abs(lhs - rhs) > tol) return false;
  }
  for (int l = 0; l < sys.num_lines(); ++l)
    for (int t = 0; t < T; ++t) {
      double flow = 0.0;
      for (int g = 0; g < G; ++g)
        flow += sys.ptdf_gen(l, g) * (x.power(g, t) + y.up(g, t) - y.dn(g, t));
      for (int i = 0; i < sys.num_buses(); ++i)
        flow -= sys.ptdf_bus(l, i) * u(i, t);
      if (flow > sys.lines[l].capacity + tol ||
          flow < -sys.lines[l].capacity - tol)
        return false;
    }
  for (int g = 0; g < G; ++g)
    for (int t = 0; t < T; ++t) {
      if (y.up(g, t) < -tol || y.up(g, t) > x.res_up(g, t) + tol) return false;
      if (y.dn(g, t) < -tol || y.dn(g, t) > x.res_dn(g, t) + tol) return false;
    }
  return true;
}

// ---------------------------------------------------------------------------
// Validators

inline std::vector<Violation> check_ramp_feasibility(
    const PowerSystem& sys, const CommitmentSchedule& x,
    const RedispatchPlan& y, double tol = 1e-9) {
  std::vector<Violation> out;
  for (int g = 0; g < sys.num_gens(); ++g) {
    const auto& gen = sys.generators[g];
    for (int t = 1; t < sys.horizon; ++t) {
      const double now = x.power(g, t) + y.up(g, t) - y.dn(g, t);
      const double prev = x.power(g, t - 1) + y.up(g, t - 1) - y.dn(g, t - 1);
      const double up_room =
          gen.ramp_up * x.on(g, t - 1) + gen.ramp_startup * x.start(g, t);
      const double dn_room =
          gen.ramp_dn * x.on(g, t) + gen.ramp_shutdown * x.stop(g, t);
      if (now - prev > up_room + tol)
        out.push_back({"redispatch_ramp_up_g" + std::to_string(g) + "_t" +
                           std::to_string(t),
                       now - prev - up_room});
      if (prev - now > dn_room + tol)
        out.push_back({"redispatch_ramp_dn_g" + std::to_string(g) + "_t" +
                           std::to_string(t),
                       prev - now - dn_room});
    }
  }
  return out;
}

inline std::vector<Violation> validate_schedule(const PowerSystem& sys,
                                                const Eigen::MatrixXd& load,
                                                const CommitmentSchedule& x,
                                                double tol = 1e-6) {
  LinearProgram lp;
  const XLayout xl = add_predispatch_stage(&lp, sys, load);
  const std::vector<double> xv = x.to_vector(xl);
  std::vector<Violation> out;
  for (int j = 0; j < lp.num_cols(); ++j) {
    const double v = xv[j];
    if (j < 3 * xl.block_size() && std::abs(v - std::round(v)) > tol)
      out.push_back({lp.col_name(j) + "_integrality",
                     std::abs(v - std::round(v))});
    if (v < lp.lower[j] - tol)
      out.push_back({lp.col_name(j) + "_lb", lp.lower[j] - v});
    if (v > lp.upper[j] + tol)
      out.push_back({lp.col_name(j) + "_ub", v - lp.upper[j]});
  }
  for (int i = 0; i < lp.num_rows(); ++i) {
    const double r = lp.row_violation(i, xv);
    if (r > tol) out.push_back({lp.row_name(i), r});
  }
  return out;
}

}  // namespace ucr
