#include "tmc/checkpoint.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>

#include "tmc/errors.hpp"

namespace tmc {

namespace {

using json = nlohmann::ordered_json;

constexpr char kMagic[] = "TMCCKPT";

std::vector<unsigned char> payload_bytes(const Checkpoint& ckpt) {
    std::size_t total = ckpt.payload.dim();
    for (const auto& rec : ckpt.component_log) total += rec.delta.dim();
    std::vector<unsigned char> bytes(total * sizeof(double));
    std::size_t off = 0;
    auto append = [&](const ParamVector& v) {
        std::memcpy(bytes.data() + off, v.raw().data(), v.dim() * sizeof(double));
        off += v.dim() * sizeof(double);
    };
    append(ckpt.payload);
    for (const auto& rec : ckpt.component_log) append(rec.delta);
    return bytes;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    const std::vector<unsigned char> payload = payload_bytes(ckpt);

    json header;
    header["format_version"] = ckpt.format_version;
    header["kind"] = ckpt.kind == Checkpoint::Kind::base ? "base" : "tangent";
    header["spec"] = ckpt.spec.encode();
    if (ckpt.kind == Checkpoint::Kind::tangent) header["anchor_fingerprint"] = ckpt.anchor_fingerprint;
    header["payload_count"] = ckpt.payload.dim();
    header["payload_sha256"] = sha256_hex(payload);
    if (ckpt.has_component_log) {
        json log = json::array();
        for (const auto& rec : ckpt.component_log) {
            log.push_back({{"task_id", rec.task_id}, {"coeff", rec.coeff}, {"count", rec.delta.dim()}});
        }
        header["component_log"] = std::move(log);
    }
    header["meta"] = {{"seed", ckpt.meta.seed},
                      {"task_count", ckpt.meta.task_count},
                      {"train_digest", ckpt.meta.train_digest}};

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("save_checkpoint: cannot open " + path.string() + " for writing");
    out << kMagic << " " << ckpt.format_version << "\n";
    out << header.dump() << "\n";
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size()));
    if (!out) throw IoError("save_checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_checkpoint: cannot open " + path.string());

    std::string magic;
    int version = 0;
    in >> magic >> version;
    in.ignore(1);  // newline
    if (magic != kMagic) throw IoError("load_checkpoint: not a checkpoint file: " + path.string());
    if (version != Checkpoint::current_version)
        throw IoError("load_checkpoint: unsupported format version " + std::to_string(version));

    std::string header_line;
    if (!std::getline(in, header_line)) throw IoError("load_checkpoint: truncated header");
    json header;
    try {
        header = json::parse(header_line);
    } catch (const json::exception& e) {
        throw IoError(std::string("load_checkpoint: corrupt header: ") + e.what());
    }

    Checkpoint ckpt;
    try {
        ckpt.format_version = header.at("format_version").get<int>();
        const std::string kind = header.at("kind").get<std::string>();
        if (kind == "base") {
            ckpt.kind = Checkpoint::Kind::base;
        } else if (kind == "tangent") {
            ckpt.kind = Checkpoint::Kind::tangent;
            ckpt.anchor_fingerprint = header.at("anchor_fingerprint").get<std::string>();
        } else {
            throw IoError("load_checkpoint: unknown kind '" + kind + "'");
        }
        ckpt.spec = NetworkSpec::decode(header.at("spec").get<std::string>());
        ckpt.meta.seed = header.at("meta").at("seed").get<std::uint64_t>();
        ckpt.meta.task_count = header.at("meta").at("task_count").get<int>();
        ckpt.meta.train_digest = header.at("meta").at("train_digest").get<std::string>();

        const std::size_t main_count = header.at("payload_count").get<std::size_t>();
        std::size_t total = main_count;
        std::vector<std::pair<int, double>> log_entries;
        std::vector<std::size_t> log_counts;
        if (header.contains("component_log")) {
            ckpt.has_component_log = true;
            for (const auto& rec : header.at("component_log")) {
                log_entries.emplace_back(rec.at("task_id").get<int>(), rec.at("coeff").get<double>());
                log_counts.push_back(rec.at("count").get<std::size_t>());
                total += log_counts.back();
            }
        }

        std::vector<unsigned char> payload(total * sizeof(double));
        in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
        if (in.gcount() != static_cast<std::streamsize>(payload.size()))
            throw IoError("load_checkpoint: truncated payload in " + path.string());

        const std::string checksum = header.at("payload_sha256").get<std::string>();
        if (sha256_hex(payload) != checksum)
            throw IoError("load_checkpoint: payload checksum mismatch in " + path.string());

        auto take = [&payload](std::size_t offset, std::size_t count) {
            std::vector<double> v(count);
            std::memcpy(v.data(), payload.data() + offset * sizeof(double), count * sizeof(double));
            return ParamVector(std::move(v));
        };
        ckpt.payload = take(0, main_count);
        std::size_t offset = main_count;
        for (std::size_t i = 0; i < log_entries.size(); ++i) {
            ckpt.component_log.push_back(
                {log_entries[i].first, log_entries[i].second, take(offset, log_counts[i])});
            offset += log_counts[i];
        }
    } catch (const json::exception& e) {
        throw IoError(std::string("load_checkpoint: malformed header field: ") + e.what());
    }
    return ckpt;
}

Checkpoint make_base_checkpoint(const BaseModel& model, CheckpointMeta meta) {
    Checkpoint ckpt;
    ckpt.kind = Checkpoint::Kind::base;
    ckpt.spec = model.spec();
    ckpt.payload = model.weights();
    ckpt.meta = std::move(meta);
    return ckpt;
}

Checkpoint make_tangent_checkpoint(const TangentModel& model, CheckpointMeta meta) {
    Checkpoint ckpt;
    ckpt.kind = Checkpoint::Kind::tangent;
    ckpt.spec = model.base().spec();
    ckpt.anchor_fingerprint = model.base().fingerprint();
    ckpt.payload = model.delta();
    meta.task_count = model.task_count();
    ckpt.meta = std::move(meta);
    if (model.log_enabled()) {
        ckpt.has_component_log = true;
        ckpt.component_log = model.component_log();
    }
    return ckpt;
}

BaseModel to_base_model(const Checkpoint& ckpt) {
    if (ckpt.kind != Checkpoint::Kind::base)
        throw IoError("to_base_model: checkpoint holds a tangent model, not base weights");
    return BaseModel(ckpt.spec, ckpt.payload);
}

TangentModel to_tangent_model(const Checkpoint& ckpt, std::shared_ptr<const BaseModel> base) {
    if (ckpt.kind != Checkpoint::Kind::tangent)
        throw IoError("to_tangent_model: checkpoint holds base weights, not a tangent model");
    if (ckpt.anchor_fingerprint != base->fingerprint())
        throw IoError("to_tangent_model: anchor fingerprint mismatch; this delta belongs to a "
                      "different base model");
    std::optional<std::vector<ComponentRecord>> log;
    if (ckpt.has_component_log) log = ckpt.component_log;
    return TangentModel(std::move(base), ckpt.payload, ckpt.meta.task_count, std::move(log));
}

}  // namespace tmc
