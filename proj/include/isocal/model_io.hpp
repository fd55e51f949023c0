#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "isocal/baselines.hpp"
#include "isocal/context.hpp"
#include "isocal/dual_tower.hpp"
#include "isocal/isotonic_layer.hpp"
#include "isocal/training.hpp"

namespace isocal {

// Training provenance stored with every model. Values are echoed verbatim
// on load so save -> load -> save round-trips byte-identically.
struct ModelMeta {
    std::uint64_t seed = 0;
    int epochs = 0;
    double final_loss = 0.0;
    long sample_count = 0;
};

inline constexpr int kModelFormatVersion = 1;

void save_isotonic(const std::string& path, const IsotonicConfig& cfg,
                   const IsotonicParams& params, const ModelMeta& meta);
void save_pava(const std::string& path, const StepFunction& f, const ModelMeta& meta);
void save_platt(const std::string& path, const PlattParams& p, const ModelMeta& meta);
void save_calibration(const std::string& path, const IsotonicConfig& cfg,
                      const CalibrationResult& result, const ModelMeta& meta);
void save_dual_tower(const std::string& path, const DualTowerModel& model, const ModelMeta& meta);

// Tagged union of everything the envelope can carry; `kind` says which
// fields are live (isotonic | pava | platt | calibration | dual_tower).
struct LoadedModel {
    std::string kind;
    ModelMeta meta;
    IsotonicConfig iso_cfg;
    IsotonicParams iso_params;
    StepFunction pava;
    PlattParams platt;
    std::map<std::string, IsotonicParams> calibration;
    std::vector<std::string> calibration_fallbacks;
    DualTowerModel dual;
};

LoadedModel load_model(const std::string& path);

// Persist a loaded model unchanged (round-trip support for tooling).
void save_model(const std::string& path, const LoadedModel& model);

}  // namespace isocal
