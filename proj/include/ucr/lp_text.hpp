#pragma once

#include <cctype>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ucr/lp.hpp"

namespace ucr {

/* Text form of a model, LP-file flavoured. The Bounds section lists every
   column in order, so a parse rebuilds the exact column layout; rows and the
   objective carry only nonzeros. Numbers are %.17g and round-trip exactly. */
inline std::string write_lp_text(const LinearProgram& lp) {
  std::ostringstream os;
  os << (lp.maximize ? "Maximize\n" : "Minimize\n");
  os << " obj:";
  bool any = false;
  for (int j = 0; j < lp.num_cols(); ++j) {
    const double c = lp.objective[j];
    if (c == 0.0) continue;
    os << (c < 0 ? " - " : (any ? " + " : " ")) << fmt17(std::abs(c)) << ' '
       << lp.col_name(j);
    any = true;
  }
  if (!any) os << " 0 " << (lp.num_cols() ? lp.col_name(0) : "x0");
  os << "\nSubject To\n";
  for (int i = 0; i < lp.num_rows(); ++i) {
    os << ' ' << lp.row_name(i) << ':';
    bool first = true;
    for (const auto& [j, c] : lp.rows[i]) {
      if (c == 0.0) continue;
      os << (c < 0 ? " - " : (first ? " " : " + ")) << fmt17(std::abs(c)) << ' '
         << lp.col_name(j);
      first = false;
    }
    if (first) os << " 0 " << lp.col_name(0);
    switch (lp.sense[i]) {
      case RowSense::LessEqual: os << " <= "; break;
      case RowSense::GreaterEqual: os << " >= "; break;
      case RowSense::Equal: os << " = "; break;
    }
    os << fmt17(lp.rhs[i]) << '\n';
  }
  os << "Bounds\n";
  for (int j = 0; j < lp.num_cols(); ++j) {
    const double lo = lp.lower[j], hi = lp.upper[j];
    const std::string name = lp.col_name(j);
    if (lo == hi)
      os << ' ' << name << " = " << fmt17(lo) << '\n';
    else if (std::isfinite(lo) && std::isfinite(hi))
      os << ' ' << fmt17(lo) << " <= " << name << " <= " << fmt17(hi) << '\n';
    else if (std::isfinite(lo))
      os << ' ' << name << " >= " << fmt17(lo) << '\n';
    else if (std::isfinite(hi))
      os << ' ' << name << " <= " << fmt17(hi) << '\n';
    else
      os << ' ' << name << " free\n";
  }
  bool any_bin = false;
  for (int j = 0; j < lp.num_cols(); ++j)
    if (lp.kind[j] == VarKind::Binary) {
      if (!any_bin) os << "Binary\n";
      any_bin = true;
      os << ' ' << lp.col_name(j) << '\n';
    }
  os << "End\n";
  return os.str();
}

namespace detail {

inline std::vector<std::string> lp_tokens(const std::string& text) {
  std::vector<std::string> toks;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line[0] == '\\') continue;
    std::istringstream ls(line);
    std::string t;
    while (ls >> t) toks.push_back(t);
    toks.push_back("\n");
  }
  return toks;
}

inline bool lp_is_number(const std::string& t, double* out) {
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (end == t.c_str() || *end != '\0') return false;
  *out = v;
  return true;
}

}  // namespace detail

inline LinearProgram parse_lp_text(const std::string& text) {
  auto toks = detail::lp_tokens(text);
  LinearProgram lp;
  std::map<std::string, int> col_of;

  // Bounds first so the column order matches the writer
  std::size_t k = 0;
  auto section_at = [&](std::size_t i, std::string* name) {
    std::string t = toks[i];
    for (auto& c : t) c = static_cast<char>(std::tolower(c));
    if (t == "minimize" || t == "maximize" || t == "bounds" ||
        t == "binary" || t == "end") {
      *name = t;
      return true;
    }
    if (t == "subject" && i + 1 < toks.size()) {
      std::string t2 = toks[i + 1];
      for (auto& c : t2) c = static_cast<char>(std::tolower(c));
      if (t2 == "to") {
        *name = "subject";
        return true;
      }
    }
    return false;
  };

  std::string sec;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    std::string s;
    if (toks[i] != "\n" && section_at(i, &s)) {
      if (s == "bounds") {
        for (std::size_t j = i + 1; j < toks.size();) {
          if (toks[j] == "\n") {
            ++j;
            continue;
          }
          std::string s2;
          if (section_at(j, &s2)) break;
          std::vector<std::string> line;
          while (j < toks.size() && toks[j] != "\n") line.push_back(toks[j++]);
          double num = 0.0;
          std::string name;
          double lo = 0.0, hi = kInf;
          if (line.size() == 2 && line[1] == "free") {
            name = line[0];
            lo = -kInf;
            hi = kInf;
          } else if (line.size() == 3 && line[1] == "=") {
            name = line[0];
            require(detail::lp_is_number(line[2], &num), "bounds: bad number");
            lo = hi = num;
          } else if (line.size() == 3 && line[1] == ">=") {
            name = line[0];
            require(detail::lp_is_number(line[2], &num), "bounds: bad number");
            lo = num;
            hi = kInf;
          } else if (line.size() == 3 && line[1] == "<=") {
            name = line[0];
            require(detail::lp_is_number(line[2], &num), "bounds: bad number");
            lo = -kInf;
            hi = num;
          } else if (line.size() == 5 && line[1] == "<=" && line[3] == "<=") {
            require(detail::lp_is_number(line[0], &lo) &&
                        detail::lp_is_number(line[4], &hi),
                    "bounds: bad number");
            name = line[2];
          } else {
            fail("bounds: unrecognized line");
          }
          require(!col_of.count(name), "bounds: duplicate column " + name);
          col_of[name] = lp.add_col(lo, hi, 0.0, VarKind::Continuous, name);
        }
      }
    }
  }
  require(!col_of.empty(), "parse_lp_text: no Bounds section");

  auto col = [&](const std::string& name) {
    auto it = col_of.find(name);
    require(it != col_of.end(), "unknown column " + name);
    return it->second;
  };

  // expression parser: [sign] [coeff] name ... terminated by sense or newline
  auto parse_terms = [&](std::size_t* i,
                         std::vector<std::pair<int, double>>* terms) {
    double sign = 1.0;
    bool have_coeff = false;
    double coeff = 1.0;
    while (*i < toks.size() && toks[*i] != "\n") {
      const std::string& t = toks[*i];
      if (t == "<=" || t == ">=" || t == "=") return;
      if (t == "+") {
        sign = 1.0;
      } else if (t == "-") {
        sign = -1.0;
      } else {
        double v;
        if (detail::lp_is_number(t, &v)) {
          coeff = v;
          have_coeff = true;
        } else {
          terms->push_back({col(t), sign * (have_coeff ? coeff : 1.0)});
          sign = 1.0;
          coeff = 1.0;
          have_coeff = false;
        }
      }
      ++(*i);
    }
  };

  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (toks[i] == "\n") continue;
    if (!section_at(i, &sec)) continue;
    if (sec == "minimize" || sec == "maximize") {
      lp.maximize = (sec == "maximize");
      std::size_t j = i + 1;
      while (j < toks.size() && toks[j] == "\n") ++j;
      std::string label = toks[j];
      require(!label.empty() && label.back() == ':', "objective: label expected");
      ++j;
      std::vector<std::pair<int, double>> terms;
      parse_terms(&j, &terms);
      for (auto& [c, v] : terms) lp.objective[c] += v;
      i = j;
    } else if (sec == "subject") {
      std::size_t j = i + 2;
      while (j < toks.size()) {
        while (j < toks.size() && toks[j] == "\n") ++j;
        if (j >= toks.size()) break;
        std::string s2;
        if (section_at(j, &s2)) break;
        std::string label = toks[j];
        require(label.back() == ':', "row: label expected");
        label.pop_back();
        ++j;
        std::vector<std::pair<int, double>> terms;
        parse_terms(&j, &terms);
        require(j < toks.size() && toks[j] != "\n", "row: sense expected");
        RowSense sense = RowSense::Equal;
        if (toks[j] == "<=") sense = RowSense::LessEqual;
        else if (toks[j] == ">=") sense = RowSense::GreaterEqual;
        else require(toks[j] == "=", "row: bad sense " + toks[j]);
        ++j;
        double rhs;
        require(j < toks.size() && detail::lp_is_number(toks[j], &rhs),
                "row: rhs expected");
        ++j;
        lp.add_row(sense, rhs, std::move(terms), label);
        i = j;
      }
      i = j - 1;
    } else if (sec == "binary") {
      std::size_t j = i + 1;
      while (j < toks.size()) {
        if (toks[j] == "\n") {
          ++j;
          continue;
        }
        std::string s2;
        if (section_at(j, &s2)) break;
        lp.kind[col(toks[j])] = VarKind::Binary;
        ++j;
      }
      i = j - 1;
    }
  }
  return lp;
}

}  // namespace ucr
