#include "cryomux/io/report.hpp"

#include <cmath>

#include <fmt/format.h>

#include "cryomux/constants.hpp"

namespace cryomux::io {

namespace {

std::string num(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  return fmt::format("{:.6g}", v);
}

}  // namespace

nlohmann::json to_json(const PeakFit& f) {
  return {{"amplitude_v", f.amplitude},   {"amplitude_err", f.amplitude_err}, {"center_v", f.center},
          {"center_err", f.center_err},   {"fwhm_v", f.fwhm},                 {"fwhm_err", f.fwhm_err},
          {"offset_v", f.offset},         {"offset_err", f.offset_err},       {"gamma_hz", f.gamma},
          {"r_squared", f.r_squared},     {"residual_norm", f.residual_norm}, {"converged", f.converged},
          {"message", f.message}};
}

nlohmann::json to_json(const RetentionFit& f) {
  return {{"tau_s", f.tau},           {"v0_v", f.v0},           {"ratio", f.ratio},
          {"residual_norm", f.residual_norm}, {"converged", f.converged}, {"message", f.message}};
}

nlohmann::json to_json(const ResonanceFit& f) {
  return {{"f_res_hz", f.f_res},         {"delta_f_hz", f.delta_f}, {"q", f.q},
          {"delta_s11_db", f.delta_s11_db}, {"baseline", f.baseline}, {"r_squared", f.r_squared},
          {"converged", f.converged},       {"message", f.message}};
}

nlohmann::json to_json(const DiamondExtraction& d) {
  return {{"e_c_mev", d.e_c / (1e-3 * constants::elementary_charge)}, {"delta_v_s_v", d.delta_v_s}, {"diamonds", d.diamonds},
          {"apex_v_dl", d.apex_v_dl}};
}

std::string format_benchmark(const std::vector<BenchmarkRow>& rows) {
  std::string out = "device,amplitude_v,fwhm_v,sigma_v,snr,t_int_s,t_min_s,alpha,gamma_hz,r_squared\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{},{},{},{},{},{},{}\n", r.device, num(r.amplitude), num(r.fwhm), num(r.sigma),
                       num(r.snr), num(r.t_int), num(r.t_min), num(r.alpha), num(r.gamma), num(r.r_squared));
  }
  return out;
}

std::string json_line(const nlohmann::json& record) { return record.dump(); }

}  // namespace cryomux::io
