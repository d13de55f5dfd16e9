#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "fedce/errors.hpp"

namespace fedce::lp {

enum class Relation { GreaterEqual, Equal };

struct Constraint {
  std::vector<double> coefficients;
  Relation relation = Relation::GreaterEqual;
  double rhs = 0.0;
};

struct Bounds {
  std::optional<double> lower;
  std::optional<double> upper;
};

// minimize objective . x  subject to the constraints and optional bounds.
// Variables without bounds are free.
struct Problem {
  std::vector<double> objective;
  std::vector<Constraint> constraints;
  std::vector<Bounds> bounds;  // empty, or one entry per variable

  std::size_t variables() const { return objective.size(); }

  void add(std::vector<double> coefficients, Relation relation, double rhs) {
    constraints.push_back({std::move(coefficients), relation, rhs});
  }
};

enum class Status { Optimal, Infeasible, Unbounded };

inline const char* to_string(Status s) {
  switch (s) {
    case Status::Optimal: return "optimal";
    case Status::Infeasible: return "infeasible";
    case Status::Unbounded: return "unbounded";
  }
  return "?";
}

struct Solution {
  Status status = Status::Infeasible;
  std::vector<double> x;
  double objective_value = 0.0;
  std::vector<std::size_t> tight_constraints;  // slack < tight_tolerance
  std::vector<double> duals;                   // one multiplier per constraint
  std::size_t pivots = 0;
};

struct Options {
  double feasibility_tolerance = 1e-7;
  double tight_tolerance = 1e-7;
  double pivot_tolerance = 1e-9;
  double cost_tolerance = 1e-10;
  double breakdown_pivot = 1e-12;
  std::size_t max_pivots = 1'000'000;
  std::size_t max_constraints = (std::size_t{1} << 16) + 8;
};

namespace detail {

// Row of the primal in "a . x >= b" form, remembering where it came from.
struct GeRow {
  const std::vector<double>* coefficients = nullptr;  // null => unit row
  std::size_t unit_index = 0;
  double sign = 1.0;
  double rhs = 0.0;
  std::ptrdiff_t constraint = -1;  // -1 for bound rows

  double coeff(std::size_t var) const {
    if (coefficients == nullptr) return var == unit_index ? sign : 0.0;
    return sign * (*coefficients)[var];
  }
};

// Dense simplex tableau for   min d.y  s.t.  M y = c, y >= 0
// with one artificial column per row. Artificial columns are never allowed
// to re-enter; they stay in the tableau so that the simplex multipliers
// can be read from their reduced costs. Pivoting follows Bland's rule.
class DualTableau {
 public:
  DualTableau(const std::vector<GeRow>& rows, const std::vector<double>& c, const Options& opt)
      : m_(c.size()), k_(rows.size()), width_(k_ + m_ + 1), opt_(opt),
        data_(m_ * width_, 0.0), cost_row_(width_, 0.0), basis_(m_), sign_(m_, 1.0) {
    for (std::size_t r = 0; r < m_; ++r) {
      sign_[r] = c[r] < 0.0 ? -1.0 : 1.0;
      double* row = row_ptr(r);
      for (std::size_t j = 0; j < k_; ++j) row[j] = sign_[r] * rows[j].coeff(r);
      row[k_ + r] = 1.0;
      row[width_ - 1] = sign_[r] * c[r];
      basis_[r] = k_ + r;
    }
  }

  // Phase 1: minimize the sum of artificials. Returns the residual sum.
  double phase_one() {
    std::fill(cost_row_.begin(), cost_row_.end(), 0.0);
    for (std::size_t r = 0; r < m_; ++r) {
      const double* row = row_ptr(r);
      for (std::size_t j = 0; j < k_; ++j) cost_row_[j] -= row[j];
      cost_row_[width_ - 1] -= row[width_ - 1];
    }
    if (iterate() != Outcome::Optimal) throw NumericalBreakdown("simplex phase 1 reported unbounded");
    return -cost_row_[width_ - 1];
  }

  // Pivot basic artificials out where the row still has a usable entry.
  void expel_artificials() {
    for (std::size_t r = 0; r < m_; ++r) {
      if (basis_[r] < k_) continue;
      const double* row = row_ptr(r);
      for (std::size_t j = 0; j < k_; ++j) {
        if (std::abs(row[j]) > opt_.pivot_tolerance) {
          pivot(r, j);
          break;
        }
      }
    }
  }

  enum class Outcome { Optimal, Unbounded };

  Outcome phase_two(const std::vector<double>& costs) {
    std::fill(cost_row_.begin(), cost_row_.end(), 0.0);
    for (std::size_t j = 0; j < k_; ++j) cost_row_[j] = costs[j];
    for (std::size_t r = 0; r < m_; ++r) {
      const double cb = basis_[r] < k_ ? costs[basis_[r]] : 0.0;
      if (cb == 0.0) continue;
      const double* row = row_ptr(r);
      for (std::size_t j = 0; j < width_; ++j) cost_row_[j] -= cb * row[j];
    }
    return iterate();
  }

  // Primal variable r = sign_r * reduced cost of artificial r.
  double multiplier(std::size_t r) const { return sign_[r] * cost_row_[k_ + r]; }

  // Value of structural column j in the current basic solution.
  std::vector<double> column_values() const {
    std::vector<double> y(k_, 0.0);
    for (std::size_t r = 0; r < m_; ++r) {
      if (basis_[r] < k_) y[basis_[r]] = std::max(0.0, rhs(r));
    }
    return y;
  }

  const std::vector<std::size_t>& basis() const { return basis_; }
  std::size_t structural() const { return k_; }
  std::size_t pivots() const { return pivots_; }

 private:
  double* row_ptr(std::size_t r) { return data_.data() + r * width_; }
  const double* row_ptr(std::size_t r) const { return data_.data() + r * width_; }
  double rhs(std::size_t r) const { return row_ptr(r)[width_ - 1]; }

  Outcome iterate() {
    while (true) {
      std::size_t enter = k_;
      for (std::size_t j = 0; j < k_; ++j) {
        if (cost_row_[j] < -opt_.cost_tolerance) {
          enter = j;
          break;
        }
      }
      if (enter == k_) return Outcome::Optimal;

      std::size_t leave = m_;
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t r = 0; r < m_; ++r) {
        const double a = row_ptr(r)[enter];
        if (a <= opt_.pivot_tolerance) continue;
        const double ratio = std::max(0.0, rhs(r)) / a;
        if (leave == m_) {
          best = ratio;
          leave = r;
          continue;
        }
        const double slack = 1e-12 * std::max(1.0, best);
        if (ratio < best - slack) {
          best = ratio;
          leave = r;
        } else if (ratio <= best + slack && basis_[r] < basis_[leave]) {
          leave = r;
        }
      }
      if (leave == m_) return Outcome::Unbounded;
      pivot(leave, enter);
    }
  }

  void pivot(std::size_t r, std::size_t j) {
    if (++pivots_ > opt_.max_pivots) throw NumericalBreakdown("simplex pivot limit exceeded");
    double* prow = row_ptr(r);
    const double piv = prow[j];
    if (std::abs(piv) < opt_.breakdown_pivot) {
      throw NumericalBreakdown("simplex pivot magnitude below " + std::to_string(opt_.breakdown_pivot));
    }
    const double inv = 1.0 / piv;
    for (std::size_t c = 0; c < width_; ++c) prow[c] *= inv;
    prow[j] = 1.0;
    for (std::size_t i = 0; i < m_; ++i) {
      if (i == r) continue;
      double* row = row_ptr(i);
      const double f = row[j];
      if (f == 0.0) continue;
      for (std::size_t c = 0; c < width_; ++c) row[c] -= f * prow[c];
      row[j] = 0.0;
      if (row[width_ - 1] < 0.0 && row[width_ - 1] > -1e-11) row[width_ - 1] = 0.0;
    }
    const double f = cost_row_[j];
    if (f != 0.0) {
      for (std::size_t c = 0; c < width_; ++c) cost_row_[c] -= f * prow[c];
      cost_row_[j] = 0.0;
    }
    basis_[r] = j;
  }

  std::size_t m_;
  std::size_t k_;
  std::size_t width_;
  Options opt_;
  std::vector<double> data_;
  std::vector<double> cost_row_;
  std::vector<std::size_t> basis_;
  std::vector<double> sign_;
  std::size_t pivots_ = 0;
};

// Solves the square system A x = b with partial pivoting; false if singular.
inline bool solve_square(std::vector<std::vector<double>> a, std::vector<double> b, std::vector<double>& x) {
  const std::size_t n = b.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t best = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::abs(a[r][col]) > std::abs(a[best][col])) best = r;
    }
    if (std::abs(a[best][col]) < 1e-12) return false;
    std::swap(a[best], a[col]);
    std::swap(b[best], b[col]);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a[r][col] / a[col][col];
      if (f == 0.0) continue;
      for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  x.assign(n, 0.0);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t c = i + 1; c < n; ++c) s -= a[i][c] * x[c];
    x[i] = s / a[i][i];
  }
  return true;
}

inline void validate(const Problem& p, const Options& opt) {
  const std::size_t n = p.variables();
  if (n == 0) throw InvalidArgument("LP needs at least one variable");
  if (p.constraints.empty()) throw InvalidArgument("LP needs at least one constraint");
  if (p.constraints.size() > opt.max_constraints) throw InvalidArgument("LP has too many constraints");
  if (!p.bounds.empty() && p.bounds.size() != n) throw InvalidArgument("LP bounds size mismatch");
  for (double c : p.objective) {
    if (!std::isfinite(c)) throw InvalidArgument("LP objective must be finite");
  }
  for (const auto& con : p.constraints) {
    if (con.coefficients.size() != n) throw InvalidArgument("LP constraint length mismatch");
    if (!std::isfinite(con.rhs)) throw InvalidArgument("LP rhs must be finite");
    for (double a : con.coefficients) {
      if (!std::isfinite(a)) throw InvalidArgument("LP coefficients must be finite");
    }
  }
}

}  // namespace detail

inline double slack(const Constraint& con, const std::vector<double>& x) {
  double lhs = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) lhs += con.coefficients[i] * x[i];
  return lhs - con.rhs;
}

// Two-phase dense simplex. The primal has few variables and many rows, so
// the tableau is built for the dual (one column per primal row) and the
// primal point is recovered from the simplex multipliers.
inline Solution solve(const Problem& problem, const Options& opt = {}) {
  detail::validate(problem, opt);
  const std::size_t n = problem.variables();

  std::vector<detail::GeRow> rows;
  rows.reserve(problem.constraints.size() + 2 * n);
  for (std::size_t k = 0; k < problem.constraints.size(); ++k) {
    const auto& con = problem.constraints[k];
    rows.push_back({&con.coefficients, 0, 1.0, con.rhs, static_cast<std::ptrdiff_t>(k)});
    if (con.relation == Relation::Equal) {
      rows.push_back({&con.coefficients, 0, -1.0, -con.rhs, static_cast<std::ptrdiff_t>(k)});
    }
  }
  for (std::size_t i = 0; i < problem.bounds.size(); ++i) {
    const auto& b = problem.bounds[i];
    if (b.lower) rows.push_back({nullptr, i, 1.0, *b.lower, -1});
    if (b.upper) rows.push_back({nullptr, i, -1.0, -*b.upper, -1});
  }

  Solution sol;
  detail::DualTableau tableau(rows, problem.objective, opt);
  const double residual = tableau.phase_one();
  double scale = 1.0;
  for (double c : problem.objective) scale = std::max(scale, std::abs(c));

  if (residual > opt.feasibility_tolerance * scale) {
    // The dual is infeasible: the primal is either unbounded or infeasible.
    // Settle it with a feasibility problem whose dual is always feasible.
    Problem feas;
    feas.objective.assign(n + 1, 0.0);
    feas.objective[n] = 1.0;
    for (const auto& row : rows) {
      std::vector<double> a(n + 1, 0.0);
      for (std::size_t i = 0; i < n; ++i) a[i] = row.coeff(i);
      a[n] = 1.0;
      feas.add(std::move(a), Relation::GreaterEqual, row.rhs);
    }
    std::vector<double> t_floor(n + 1, 0.0);
    t_floor[n] = 1.0;
    feas.add(std::move(t_floor), Relation::GreaterEqual, 0.0);
    Options feas_opt = opt;
    feas_opt.max_constraints = std::numeric_limits<std::size_t>::max();
    const Solution f = solve(feas, feas_opt);
    sol.status = (f.status == Status::Optimal && f.objective_value <= opt.feasibility_tolerance)
                     ? Status::Unbounded
                     : Status::Infeasible;
    sol.pivots = tableau.pivots() + f.pivots;
    return sol;
  }

  tableau.expel_artificials();
  std::vector<double> costs(rows.size());
  for (std::size_t j = 0; j < rows.size(); ++j) costs[j] = -rows[j].rhs;
  if (tableau.phase_two(costs) == detail::DualTableau::Outcome::Unbounded) {
    sol.status = Status::Infeasible;
    sol.pivots = tableau.pivots();
    return sol;
  }

  // Primal point: re-solve the basic rows exactly when the basis is
  // structural, otherwise fall back to the multipliers.
  std::vector<double> x(n);
  bool resolved = false;
  const auto& basis = tableau.basis();
  if (std::all_of(basis.begin(), basis.end(), [&](std::size_t b) { return b < tableau.structural(); })) {
    std::vector<std::vector<double>> a(n, std::vector<double>(n));
    std::vector<double> b(n);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t i = 0; i < n; ++i) a[r][i] = rows[basis[r]].coeff(i);
      b[r] = rows[basis[r]].rhs;
    }
    resolved = detail::solve_square(std::move(a), std::move(b), x);
  }
  if (!resolved) {
    for (std::size_t r = 0; r < n; ++r) x[r] = tableau.multiplier(r);
  }

  // Certify against the original rows; the tableau arithmetic is not trusted.
  for (const auto& row : rows) {
    double lhs = 0.0;
    for (std::size_t i = 0; i < n; ++i) lhs += row.coeff(i) * x[i];
    if (lhs - row.rhs < -opt.feasibility_tolerance) {
      throw NumericalBreakdown("simplex returned a point violating a constraint by " +
                               std::to_string(row.rhs - lhs));
    }
  }

  sol.status = Status::Optimal;
  sol.x = std::move(x);
  sol.objective_value = 0.0;
  for (std::size_t i = 0; i < n; ++i) sol.objective_value += problem.objective[i] * sol.x[i];
  const auto y = tableau.column_values();
  sol.duals.assign(problem.constraints.size(), 0.0);
  for (std::size_t j = 0; j < rows.size(); ++j) {
    if (rows[j].constraint >= 0) sol.duals[static_cast<std::size_t>(rows[j].constraint)] += rows[j].sign * y[j];
  }
  for (std::size_t k = 0; k < problem.constraints.size(); ++k) {
    if (std::abs(slack(problem.constraints[k], sol.x)) < opt.tight_tolerance) sol.tight_constraints.push_back(k);
  }
  sol.pivots = tableau.pivots();
  return sol;
}

}  // namespace fedce::lp
