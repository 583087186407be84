#pragma once

namespace cryomux::constants {

// CODATA 2018 exact values.
inline constexpr double elementary_charge = 1.602176634e-19;  // C
inline constexpr double planck = 6.62607015e-34;              // J s
inline constexpr double boltzmann = 1.380649e-23;             // J/K
inline constexpr double pi = 3.14159265358979323846;

}  // namespace cryomux::constants
