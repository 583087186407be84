#include "cryomux/cell_matrix.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "cryomux/constants.hpp"
#include "cryomux/errors.hpp"

namespace cryomux {

void validate(const CellState& cell) {
  if (!(cell.c_cell() > 0.0) || cell.c_storage < 0.0 || cell.c_gate < 0.0) {
    throw ValidationError("cell: capacitances must be non-negative with a positive sum");
  }
  if (!(cell.r_g > 0.0)) throw ValidationError("cell: r_g must be positive");
  if (!std::isfinite(cell.v_g)) throw ValidationError("cell: v_g not finite");
  validate(cell.access);
  validate(cell.device);
}

std::string CellIndex::label() const {
  if (row < 9 && col < 9) return "Q" + std::to_string(row + 1) + std::to_string(col + 1);
  return "Q" + std::to_string(row + 1) + "_" + std::to_string(col + 1);
}

CellIndex CellIndex::parse(const std::string& label) {
  auto index = [&](const std::string& digits) -> std::size_t {
    if (digits.empty() || digits.size() > 6 ||
        !std::all_of(digits.begin(), digits.end(), [](unsigned char c) { return std::isdigit(c); })) {
      throw ValidationError("malformed cell label '" + label + "'");
    }
    const auto v = std::stoul(digits);
    if (v == 0) throw ValidationError("cell labels are one-based: '" + label + "'");
    return v - 1;
  };
  if (label.size() < 3 || label[0] != 'Q') throw ValidationError("malformed cell label '" + label + "'");
  const std::string rest = label.substr(1);
  if (const auto sep = rest.find('_'); sep != std::string::npos) {
    return {index(rest.substr(0, sep)), index(rest.substr(sep + 1))};
  }
  if (rest.size() != 2) throw ValidationError("malformed cell label '" + label + "'");
  return {index(rest.substr(0, 1)), index(rest.substr(1, 1))};
}

double equilibrium_gate_voltage(const CellState& cell, double v_dl, double v_wl) {
  const double r_acc = access_resistance(cell.access, v_wl - v_dl);
  return v_dl * cell.r_g / (r_acc + cell.r_g);
}

double retention_time(const CellState& cell, double v_wl, double v_dl) {
  const double r_acc = access_resistance(cell.access, v_wl - v_dl);
  return cell.c_cell() * cell.r_g * r_acc / (cell.r_g + r_acc);
}

namespace {

double relaxed_gate_voltage(const CellState& cell, double v_dl, double v_wl, double dt) {
  const double r_acc = access_resistance(cell.access, v_wl - v_dl);
  const double v_eq = v_dl * cell.r_g / (r_acc + cell.r_g);
  const double tau = cell.c_cell() * cell.r_g * r_acc / (cell.r_g + r_acc);
  return v_eq + (cell.v_g - v_eq) * std::exp(-dt / tau);
}

}  // namespace

CellState step_cell(const CellState& cell, double v_dl, double v_wl, double dt) {
  if (!(dt > 0.0)) throw ValidationError("step_cell: dt must be positive");
  CellState next = cell;
  next.v_g = relaxed_gate_voltage(cell, v_dl, v_wl, dt);
  return next;
}

std::pair<std::size_t, std::size_t> lines_required(std::size_t n_devices) {
  if (n_devices == 0) throw ValidationError("lines_required: need at least one device");
  auto root = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n_devices))));
  while (root * root > n_devices) --root;
  while ((root + 1) * (root + 1) <= n_devices) ++root;
  if (root * root != n_devices) {
    throw ValidationError("lines_required: " + std::to_string(n_devices) + " is not a perfect square");
  }
  return {2 * root, root};
}

Complex cell_branch_impedance(const CellState& cell, double v_wl, double v_dl, double v_s,
                              double f_probe) {
  const double w = 2.0 * constants::pi * f_probe;
  const double v_ov = v_wl - v_dl;
  const Complex y_acc = Complex(1.0 / access_resistance(cell.access, v_ov),
                                w * access_capacitance(cell.access, v_ov));
  const double c_node = cell.c_cell() + dispersive_capacitance(cell.device, cell.v_g, f_probe, v_s);
  const Complex y_gate = Complex(1.0 / cell.r_g, w * c_node);
  return 1.0 / y_acc + 1.0 / y_gate;
}

MatrixConfig::MatrixConfig(std::size_t rows, std::size_t cols, const CellState& prototype)
    : n_rows(rows),
      n_cols(cols),
      cells(rows * cols, prototype),
      row_resonators(rows),
      v_wl(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(cols))),
      v_dl(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(rows))),
      v_s(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols))) {}

void validate(const MatrixConfig& m) {
  if (m.n_rows == 0 || m.n_cols == 0) throw ValidationError("matrix: empty grid");
  if (m.cells.size() != m.n_rows * m.n_cols) throw ValidationError("matrix: incomplete cell grid");
  if (m.row_resonators.size() != m.n_rows) throw ValidationError("matrix: every row needs exactly one resonator");
  if (static_cast<std::size_t>(m.v_wl.size()) != m.n_cols || static_cast<std::size_t>(m.v_dl.size()) != m.n_rows ||
      static_cast<std::size_t>(m.v_s.rows()) != m.n_rows || static_cast<std::size_t>(m.v_s.cols()) != m.n_cols) {
    throw ValidationError("matrix: line level vectors do not match the grid");
  }
  for (const auto& c : m.cells) validate(c);
  for (const auto& r : m.row_resonators) validate(r);
}

Complex matrix_gate_load(const MatrixConfig& m, std::size_t row, double f_probe) {
  if (row >= m.n_rows) throw ValidationError("matrix_gate_load: row out of range");
  Complex y(0.0, 0.0);
  const auto r = static_cast<Eigen::Index>(row);
  for (std::size_t col = 0; col < m.n_cols; ++col) {
    const auto c = static_cast<Eigen::Index>(col);
    y += 1.0 / cell_branch_impedance(m.cell(row, col), m.v_wl(c), m.v_dl(r), m.v_s(r, c), f_probe);
  }
  return 1.0 / y;
}

void step_matrix(MatrixConfig& m, double dt) {
  if (!(dt > 0.0)) throw ValidationError("step_matrix: dt must be positive");
  for (std::size_t row = 0; row < m.n_rows; ++row) {
    for (std::size_t col = 0; col < m.n_cols; ++col) {
      auto& cell = m.cell(row, col);
      cell.v_g = relaxed_gate_voltage(cell, m.v_dl(static_cast<Eigen::Index>(row)),
                                      m.v_wl(static_cast<Eigen::Index>(col)), dt);
    }
  }
}

double cell_current(const MatrixConfig& m, CellIndex idx) {
  const auto& cell = m.cell(idx);
  return coulomb_current(cell.device, cell.v_g,
                         m.v_s(static_cast<Eigen::Index>(idx.row), static_cast<Eigen::Index>(idx.col)));
}

}  // namespace cryomux
