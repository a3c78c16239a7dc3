#include "procver/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

namespace procver {

namespace {

constexpr char kMagic[4] = {'P', 'V', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

std::array<std::uint32_t, 256> make_crc_table() {
    std::array<std::uint32_t, 256> table{};
    for (std::uint32_t i = 0; i < 256; ++i) {
        std::uint32_t c = i;
        for (int bit = 0; bit < 8; ++bit) {
            c = (c & 1) ? (0xEDB88320u ^ (c >> 1)) : (c >> 1);
        }
        table[i] = c;
    }
    return table;
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
}

void put_f64(std::string& out, double v) {
    put_u64(out, std::bit_cast<std::uint64_t>(v));
}

void put_string(std::string& out, const std::string& s) {
    put_u64(out, s.size());
    out += s;
}

void put_tensor(std::string& out, const Tensor& t) {
    put_u64(out, t.rank());
    for (std::size_t d : t.shape) {
        put_u64(out, d);
    }
    put_u64(out, t.size());
    for (double v : t.data) {
        put_f64(out, v);
    }
}

struct Reader {
    const unsigned char* p;
    std::size_t len;
    std::size_t off = 0;

    void need(std::size_t n) const {
        if (off + n > len) {
            throw DataError("checkpoint: truncated");
        }
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(p[off + static_cast<std::size_t>(i)]) << (8 * i);
        }
        off += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<std::uint64_t>(p[off + static_cast<std::size_t>(i)]) << (8 * i);
        }
        off += 8;
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::uint8_t u8() {
        need(1);
        return p[off++];
    }
    std::string str() {
        const std::uint64_t n = u64();
        need(n);
        std::string s(reinterpret_cast<const char*>(p + off), n);
        off += n;
        return s;
    }
    Tensor tensor() {
        const std::uint64_t rank = u64();
        if (rank > 4) {
            throw DataError("checkpoint: implausible tensor rank");
        }
        std::vector<std::size_t> shape(rank);
        for (std::uint64_t i = 0; i < rank; ++i) {
            shape[i] = u64();
        }
        const std::uint64_t count = u64();
        if (count != shape_product(shape)) {
            throw DataError("checkpoint: tensor payload size mismatch");
        }
        Tensor t;
        t.shape = std::move(shape);
        t.data.resize(count);
        for (std::uint64_t i = 0; i < count; ++i) {
            t.data[i] = f64();
        }
        return t;
    }
};

} // namespace

std::uint32_t crc32(const unsigned char* data, std::size_t len) {
    static const std::array<std::uint32_t, 256> table = make_crc_table();
    std::uint32_t c = 0xFFFFFFFFu;
    for (std::size_t i = 0; i < len; ++i) {
        c = table[(c ^ data[i]) & 0xffu] ^ (c >> 8);
    }
    return c ^ 0xFFFFFFFFu;
}

Checkpoint make_checkpoint(const CatModel& model, const AdamState* optimizer, const Rng* rng,
                           const std::string& trainer_state_json) {
    Checkpoint ck;
    ck.config = model.config();
    ck.trainer_state_json = trainer_state_json;
    for (const Parameter& p : model.parameters()) {
        ck.params.emplace_back(p.name, p.value);
    }
    if (optimizer != nullptr) {
        if (optimizer->m.size() != ck.params.size()) {
            throw ShapeError("checkpoint: optimizer tracks a different parameter count");
        }
        ck.has_optimizer = true;
        ck.adam_config = optimizer->config;
        ck.adam_step_count = optimizer->step_count;
        ck.adam_m = optimizer->m;
        ck.adam_v = optimizer->v;
    }
    if (rng != nullptr) {
        ck.rng_state = rng->serialize();
    }
    return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    std::string out;
    out.append(kMagic, 4);
    put_u32(out, kVersion);
    put_string(out, model_config_to_json(ck.config));
    put_string(out, ck.trainer_state_json);
    put_u64(out, ck.params.size());
    for (const auto& [name, value] : ck.params) {
        put_string(out, name);
        put_tensor(out, value);
    }
    out.push_back(ck.has_optimizer ? 1 : 0);
    if (ck.has_optimizer) {
        if (ck.adam_m.size() != ck.params.size() || ck.adam_v.size() != ck.params.size()) {
            throw ShapeError("checkpoint: moment count does not match parameter count");
        }
        put_f64(out, ck.adam_config.beta1);
        put_f64(out, ck.adam_config.beta2);
        put_f64(out, ck.adam_config.eps);
        put_f64(out, ck.adam_config.weight_decay);
        put_u64(out, ck.adam_step_count);
        for (std::size_t i = 0; i < ck.params.size(); ++i) {
            put_tensor(out, ck.adam_m[i]);
            put_tensor(out, ck.adam_v[i]);
        }
    }
    out.push_back(ck.rng_state.empty() ? 0 : 1);
    if (!ck.rng_state.empty()) {
        put_string(out, ck.rng_state);
    }
    put_u32(out, crc32(reinterpret_cast<const unsigned char*>(out.data()), out.size()));

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw IoError("cannot open checkpoint '" + path + "' for writing");
    }
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) {
        throw IoError("short write to checkpoint '" + path + "'");
    }
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw IoError("cannot open checkpoint '" + path + "'");
    }
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw DataError("checkpoint '" + path + "': missing PVCK header");
    }
    const auto* data = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::size_t body = bytes.size() - 4;
    Reader tail{data + body, 4, 0};
    if (tail.u32() != crc32(data, body)) {
        throw DataError("checkpoint '" + path + "': checksum mismatch (corrupt file)");
    }

    Reader r{data, body, 4}; // past the magic
    if (r.u32() != kVersion) {
        throw DataError("checkpoint '" + path + "': unsupported version");
    }
    Checkpoint ck;
    ck.config = model_config_from_json(r.str());
    ck.trainer_state_json = r.str();
    const std::uint64_t n = r.u64();
    for (std::uint64_t i = 0; i < n; ++i) {
        std::string name = r.str();
        ck.params.emplace_back(std::move(name), r.tensor());
    }
    ck.has_optimizer = r.u8() != 0;
    if (ck.has_optimizer) {
        ck.adam_config.beta1 = r.f64();
        ck.adam_config.beta2 = r.f64();
        ck.adam_config.eps = r.f64();
        ck.adam_config.weight_decay = r.f64();
        ck.adam_step_count = r.u64();
        for (std::uint64_t i = 0; i < n; ++i) {
            ck.adam_m.push_back(r.tensor());
            ck.adam_v.push_back(r.tensor());
        }
    }
    if (r.u8() != 0) {
        ck.rng_state = r.str();
    }
    if (r.off != body) {
        throw DataError("checkpoint '" + path + "': trailing bytes");
    }
    return ck;
}

CatModel model_from_checkpoint(const Checkpoint& ck) {
    CatModel model(ck.config);
    std::vector<Parameter*> params = model.parameters();
    if (params.size() != ck.params.size()) {
        throw DataError("checkpoint: expected " + std::to_string(params.size()) +
                        " parameters, found " + std::to_string(ck.params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& [name, value] = ck.params[i];
        if (params[i]->name != name) {
            throw DataError("checkpoint: parameter '" + name + "' where '" + params[i]->name +
                            "' was expected");
        }
        if (!params[i]->value.same_shape(value)) {
            throw DataError("checkpoint: parameter '" + name + "' has shape " +
                            value.shape_str() + ", expected " + params[i]->value.shape_str());
        }
        params[i]->value = value;
    }
    return model;
}

void restore_optimizer(AdamState& opt, const Checkpoint& ck) {
    if (!ck.has_optimizer) {
        throw DataError("checkpoint holds no optimizer state");
    }
    opt.config = ck.adam_config;
    opt.step_count = ck.adam_step_count;
    opt.m = ck.adam_m;
    opt.v = ck.adam_v;
}

} // namespace procver
