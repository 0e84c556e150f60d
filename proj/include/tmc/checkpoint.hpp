#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "tmc/network.hpp"
#include "tmc/tangent.hpp"

namespace tmc {

struct CheckpointMeta {
    std::uint64_t seed = 0;
    int task_count = 0;
    std::string train_digest;  // free-form description of the producing config
};

// On-disk model state: a self-describing text header (format version, spec,
// metadata, payload checksum) followed by the parameters as little-endian
// 64-bit floats with an explicit count. Round trips are bit-exact.
struct Checkpoint {
    static constexpr int current_version = 1;

    int format_version = current_version;
    enum class Kind { base, tangent };
    Kind kind = Kind::base;
    NetworkSpec spec;
    std::string anchor_fingerprint;  // tangent only
    ParamVector payload;             // weights (base) or delta (tangent)
    std::vector<ComponentRecord> component_log;
    bool has_component_log = false;
    CheckpointMeta meta;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint make_base_checkpoint(const BaseModel& model, CheckpointMeta meta = {});
Checkpoint make_tangent_checkpoint(const TangentModel& model, CheckpointMeta meta = {});

BaseModel to_base_model(const Checkpoint& ckpt);
// Verifies the stored anchor fingerprint against `base` before binding.
TangentModel to_tangent_model(const Checkpoint& ckpt, std::shared_ptr<const BaseModel> base);

}  // namespace tmc
