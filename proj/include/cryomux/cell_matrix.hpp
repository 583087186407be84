#pragma once

// Access-transistor / storage-capacitor / quantum-dot cells and their wiring
// into shared word-lines (columns), data-lines (rows) and row resonators.

#include <compare>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cryomux/device_model.hpp"
#include "cryomux/rf_chain.hpp"

namespace cryomux {

struct CellState {
  double v_g = 0.0;             ///< stored QD gate voltage (V)
  double c_storage = 200e-15;   ///< storage capacitor (F)
  double c_gate = 0.2e-15;      ///< QD transistor gate capacitance (F)
  double r_g = 1e12;            ///< QD gate leakage (ohm)
  AccessTransistorParams access;
  DeviceParams device;

  /// Parallel sum of storage and gate capacitance.
  double c_cell() const { return c_storage + c_gate; }

  bool operator==(const CellState&) const = default;
};

void validate(const CellState& cell);

/// Zero-based (row, column) position; label() gives the 1-based "Qij" name
/// ("Qi_j" once an index exceeds 9).
struct CellIndex {
  std::size_t row = 0;
  std::size_t col = 0;
  auto operator<=>(const CellIndex&) const = default;
  std::string label() const;
  /// Inverse of label(); throws ValidationError on malformed labels.
  static CellIndex parse(const std::string& label);
};

/// Effective gate voltage v_dl * R_G / (R_acc + R_G).
double equilibrium_gate_voltage(const CellState& cell, double v_dl, double v_wl);

/// Relaxation time C_cell * (R_G || R_acc) at the given biases.
double retention_time(const CellState& cell, double v_wl, double v_dl);

/// Exact exponential relaxation of v_g toward the equilibrium voltage under
/// constant biases over `dt` seconds. Throws ValidationError for dt <= 0.
CellState step_cell(const CellState& cell, double v_dl, double v_wl, double dt);

/// Control lines and resonators needed for n_devices cells: (2 sqrt N, sqrt N).
/// Throws ValidationError unless n_devices is a positive perfect square.
std::pair<std::size_t, std::size_t> lines_required(std::size_t n_devices);

/// Impedance of one cell seen from its data-line: the access transistor
/// (R_acc || C_acc) in series with the gate node
/// (R_G || C_cell + dispersive capacitance).
Complex cell_branch_impedance(const CellState& cell, double v_wl, double v_dl, double v_s,
                              double f_probe);

/// Chip configuration together with the instantaneous line levels.
struct MatrixConfig {
  std::size_t n_rows = 0;
  std::size_t n_cols = 0;
  std::vector<CellState> cells;              ///< row-major
  std::vector<ResonatorSpec> row_resonators; ///< one per row
  Eigen::VectorXd v_wl;                      ///< per column (V)
  Eigen::VectorXd v_dl;                      ///< per row (V)
  Eigen::MatrixXd v_s;                       ///< per cell (V)

  MatrixConfig() = default;
  MatrixConfig(std::size_t rows, std::size_t cols, const CellState& prototype);

  CellState& cell(std::size_t row, std::size_t col) { return cells[row * n_cols + col]; }
  const CellState& cell(std::size_t row, std::size_t col) const { return cells[row * n_cols + col]; }
  CellState& cell(CellIndex idx) { return cell(idx.row, idx.col); }
  const CellState& cell(CellIndex idx) const { return cell(idx.row, idx.col); }
};

void validate(const MatrixConfig& m);

/// Parallel combination of every cell branch in `row` at the current line
/// levels; this is the load terminating the row resonator.
Complex matrix_gate_load(const MatrixConfig& m, std::size_t row, double f_probe);

/// Steps every cell of the matrix by dt at the current line levels.
void step_matrix(MatrixConfig& m, double dt);

/// Source-drain current of one cell at its stored gate voltage.
double cell_current(const MatrixConfig& m, CellIndex idx);

}  // namespace cryomux
