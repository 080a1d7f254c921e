#pragma once
// Versioned binary checkpoints: agent bookkeeping plus every named parameter
// tensor, with a trailing content checksum. Loading validates magic, version,
// checksum, and that names and shapes match the receiving model exactly.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "iclnav/autodiff.hpp"
#include "iclnav/errors.hpp"
#include "iclnav/rng.hpp"
#include "iclnav/tensor.hpp"

namespace iclnav {

struct CheckpointHeader {
    int32_t stage = 1;
    int32_t action_count = 0;
    int64_t episodes_in_stage = 0;  // epsilon schedule position
    int64_t train_steps = 0;
    int64_t global_episode = 0;
    uint64_t config_hash = 0;
    uint64_t seed = 0;
};

namespace detail_ckpt {

constexpr char kMagic[8] = {'I', 'C', 'L', 'N', 'A', 'V', 'C', '1'};
constexpr uint32_t kVersion = 1;

template <typename T>
void append(std::string& buf, const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const char* p = reinterpret_cast<const char*>(&v);
    buf.append(p, sizeof(T));
}

struct Cursor {
    const std::string& buf;
    size_t pos = 0;
    template <typename T>
    T take() {
        static_assert(std::is_trivially_copyable_v<T>);
        if (pos + sizeof(T) > buf.size()) throw CheckpointMismatch("checkpoint is truncated");
        T v;
        std::memcpy(&v, buf.data() + pos, sizeof(T));
        pos += sizeof(T);
        return v;
    }
    std::string take_bytes(size_t n) {
        if (pos + n > buf.size()) throw CheckpointMismatch("checkpoint is truncated");
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace detail_ckpt

struct CheckpointData {
    CheckpointHeader header;
    std::vector<Parameter> parameters;
    uint64_t checksum = 0;
};

inline std::string serialize_checkpoint(const CheckpointHeader& header,
                                        const std::vector<const Parameter*>& params) {
    using detail_ckpt::append;
    std::string buf;
    buf.append(detail_ckpt::kMagic, sizeof(detail_ckpt::kMagic));
    append(buf, detail_ckpt::kVersion);
    append(buf, header.stage);
    append(buf, header.action_count);
    append(buf, header.episodes_in_stage);
    append(buf, header.train_steps);
    append(buf, header.global_episode);
    append(buf, header.config_hash);
    append(buf, header.seed);
    append(buf, static_cast<uint32_t>(params.size()));
    for (const Parameter* p : params) {
        append(buf, static_cast<uint32_t>(p->name.size()));
        buf.append(p->name);
        append(buf, static_cast<uint8_t>(p->trainable ? 1 : 0));
        append(buf, static_cast<uint32_t>(p->value.shape.size()));
        for (int d : p->value.shape) append(buf, static_cast<int32_t>(d));
        const auto& data = p->value.data;
        buf.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(double));
    }
    uint64_t checksum = fnv1a64(buf.data(), buf.size());
    append(buf, checksum);
    return buf;
}

inline void save_checkpoint(const std::string& path, const CheckpointHeader& header,
                            const std::vector<const Parameter*>& params) {
    std::string buf = serialize_checkpoint(header, params);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot open checkpoint for writing: " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw ValidationError("checkpoint write failed: " + path);
}

inline CheckpointData parse_checkpoint(const std::string& buf, const std::string& source) {
    if (buf.size() < sizeof(detail_ckpt::kMagic) + sizeof(uint32_t) + sizeof(uint64_t))
        throw CheckpointMismatch(source + ": too short to be a checkpoint");
    if (std::memcmp(buf.data(), detail_ckpt::kMagic, sizeof(detail_ckpt::kMagic)) != 0)
        throw CheckpointMismatch(source + ": bad magic");
    uint64_t stored;
    std::memcpy(&stored, buf.data() + buf.size() - sizeof(uint64_t), sizeof(uint64_t));
    uint64_t computed = fnv1a64(buf.data(), buf.size() - sizeof(uint64_t));
    if (stored != computed) throw CheckpointMismatch(source + ": checksum mismatch");

    detail_ckpt::Cursor c{buf, sizeof(detail_ckpt::kMagic)};
    if (c.take<uint32_t>() != detail_ckpt::kVersion)
        throw CheckpointMismatch(source + ": unsupported version");
    CheckpointData out;
    out.checksum = stored;
    out.header.stage = c.take<int32_t>();
    out.header.action_count = c.take<int32_t>();
    out.header.episodes_in_stage = c.take<int64_t>();
    out.header.train_steps = c.take<int64_t>();
    out.header.global_episode = c.take<int64_t>();
    out.header.config_hash = c.take<uint64_t>();
    out.header.seed = c.take<uint64_t>();
    uint32_t count = c.take<uint32_t>();
    out.parameters.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t name_len = c.take<uint32_t>();
        Parameter p;
        p.name = c.take_bytes(name_len);
        p.trainable = c.take<uint8_t>() != 0;
        uint32_t rank = c.take<uint32_t>();
        p.value.shape.clear();
        size_t count_d = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            int32_t dim = c.take<int32_t>();
            if (dim < 0) throw CheckpointMismatch(source + ": negative dimension");
            p.value.shape.push_back(dim);
            count_d *= static_cast<size_t>(dim);
        }
        std::string raw = c.take_bytes(count_d * sizeof(double));
        p.value.data.resize(count_d);
        std::memcpy(p.value.data.data(), raw.data(), raw.size());
        out.parameters.push_back(std::move(p));
    }
    if (c.pos != buf.size() - sizeof(uint64_t))
        throw CheckpointMismatch(source + ": trailing bytes after parameters");
    return out;
}

inline CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointMismatch("cannot open checkpoint " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_checkpoint(buf, path);
}

/// The stored trailing checksum, without deserializing the tensors.
inline uint64_t checkpoint_checksum(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointMismatch("cannot open checkpoint " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < sizeof(uint64_t)) throw CheckpointMismatch(path + ": too short");
    uint64_t stored;
    std::memcpy(&stored, buf.data() + buf.size() - sizeof(uint64_t), sizeof(uint64_t));
    return stored;
}

/// Copies stored tensors into the live parameters, matching on name. Every
/// stored tensor must land somewhere and every target must be filled; any
/// miss or shape difference is a CheckpointMismatch.
inline void restore_parameters(const CheckpointData& ckpt, std::vector<Parameter*> targets) {
    std::map<std::string, Parameter*> by_name;
    for (Parameter* p : targets) {
        if (!by_name.emplace(p->name, p).second)
            throw ValidationError("duplicate parameter name " + p->name);
    }
    if (ckpt.parameters.size() != by_name.size())
        throw CheckpointMismatch("checkpoint holds " + std::to_string(ckpt.parameters.size()) +
                                 " tensors, model wants " + std::to_string(by_name.size()));
    for (const Parameter& stored : ckpt.parameters) {
        auto it = by_name.find(stored.name);
        if (it == by_name.end())
            throw CheckpointMismatch("checkpoint tensor '" + stored.name + "' has no home");
        Parameter* dst = it->second;
        if (stored.value.shape != dst->value.shape)
            throw CheckpointMismatch("shape mismatch for '" + stored.name + "'");
        dst->value = stored.value;
        dst->grad = Tensor{};
    }
}

}  // namespace iclnav
