#include "p3d/checkpoint.h"

#include <bit>
#include <fstream>
#include <iterator>
#include <json.hpp>

#include "p3d/error.h"

namespace p3d {

namespace {

static_assert(sizeof(float) == 4);

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_floats(std::string& out, const Tensor& t) {
    const std::size_t base = out.size();
    out.resize(base + t.numel() * 4);
    char* dst = out.data() + base;
    for (float f : t.data()) {
        const auto u = std::bit_cast<std::uint32_t>(f);
        for (int i = 0; i < 4; ++i) *dst++ = static_cast<char>((u >> (8 * i)) & 0xFF);
    }
}

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    std::string_view take(std::size_t n, const char* what) {
        if (bytes_.size() - pos_ < n) throw FormatError(std::string("checkpoint truncated while reading ") + what);
        std::string_view s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    std::uint64_t u64() {
        std::string_view s = take(8, "manifest length");
        std::uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[i]);
        return v;
    }

    void floats(Tensor& t, const std::string& what) {
        std::string_view s = take(t.numel() * 4, what.c_str());
        for (std::size_t k = 0; k < t.numel(); ++k) {
            std::uint32_t u = 0;
            for (int i = 3; i >= 0; --i) u = (u << 8) | static_cast<unsigned char>(s[k * 4 + i]);
            t[k] = std::bit_cast<float>(u);
        }
    }

    bool at_end() const { return pos_ == bytes_.size(); }

private:
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& checkpoint) {
    const ParameterSet& params = checkpoint.params;
    const bool with_optimizer = !checkpoint.optimizer.empty();
    if (with_optimizer && checkpoint.optimizer.size() != params.size())
        throw ContractViolation("checkpoint: optimizer state count does not match parameter count");

    nlohmann::json manifest;
    manifest["params"] = nlohmann::json::array();
    for (ParamId id = 0; id < params.size(); ++id) {
        nlohmann::json entry;
        entry["name"] = params.name(id);
        entry["shape"] = params.value(id).shape();
        entry["adam_step"] = with_optimizer ? checkpoint.optimizer[id].step : 0;
        manifest["params"].push_back(std::move(entry));
    }
    manifest["optimizer"] = with_optimizer;
    manifest["scalars"] = checkpoint.scalars;
    const std::string text = manifest.dump();

    std::string out;
    out.append(kCheckpointMagic);
    out.push_back(static_cast<char>(kCheckpointVersion));
    put_u64(out, text.size());
    out.append(text);
    for (ParamId id = 0; id < params.size(); ++id) put_floats(out, params.value(id));
    if (with_optimizer) {
        for (ParamId id = 0; id < params.size(); ++id) {
            put_floats(out, checkpoint.optimizer[id].m);
            put_floats(out, checkpoint.optimizer[id].v);
        }
    }
    return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
    Reader in(bytes);
    if (in.take(4, "magic") != kCheckpointMagic) throw FormatError("not a checkpoint: bad magic");
    const auto version = static_cast<std::uint8_t>(in.take(1, "version")[0]);
    if (version != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
    const std::uint64_t length = in.u64();
    std::string_view text = in.take(length, "manifest");

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint manifest is not valid JSON: ") + e.what());
    }

    Checkpoint cp;
    std::vector<std::uint64_t> steps;
    try {
        for (const auto& entry : manifest.at("params")) {
            Shape shape = entry.at("shape").get<Shape>();
            cp.params.add(entry.at("name").get<std::string>(), Tensor(std::move(shape)));
            steps.push_back(entry.at("adam_step").get<std::uint64_t>());
        }
        cp.scalars = manifest.at("scalars").get<std::map<std::string, double>>();
        if (manifest.at("optimizer").get<bool>()) {
            for (ParamId id = 0; id < cp.params.size(); ++id) {
                AdamState s = AdamState::for_shape(cp.params.value(id).shape());
                s.step = steps[id];
                cp.optimizer.push_back(std::move(s));
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed checkpoint manifest: ") + e.what());
    } catch (const ContractViolation& e) {
        throw FormatError(std::string("malformed checkpoint manifest: ") + e.what());
    }

    for (ParamId id = 0; id < cp.params.size(); ++id) in.floats(cp.params.value(id), cp.params.name(id));
    for (ParamId id = 0; id < cp.optimizer.size(); ++id) {
        in.floats(cp.optimizer[id].m, cp.params.name(id) + " first moment");
        in.floats(cp.optimizer[id].v, cp.params.name(id) + " second moment");
    }
    if (!in.at_end()) throw FormatError("checkpoint has trailing bytes");
    return cp;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
    const std::string bytes = encode_checkpoint(checkpoint);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_checkpoint(bytes);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

}  // namespace p3d
