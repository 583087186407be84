#pragma once

// YAML program files: one mapping per segment with its duration, active
// cells and line levels (a scalar for a constant, [start, end] for a ramp).

#include <string>

#include "cryomux/mux_controller.hpp"

namespace cryomux::io {

std::string serialize_program(const WaveformProgram& program);

/// Throws ValidationError, with the line where possible, on malformed input.
WaveformProgram parse_program(const std::string& yaml_text);
WaveformProgram load_program(const std::string& path);

}  // namespace cryomux::io
