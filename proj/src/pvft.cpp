#include "procver/pvft.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include "procver/errors.hpp"

namespace procver {

namespace {

constexpr char kMagic[4] = {'P', 'V', 'F', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) |
           (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) |
           (static_cast<std::uint32_t>(p[3]) << 24);
}

FeatureHeader parse_header(const std::string& path, const unsigned char* buf, std::size_t len) {
    if (len < 16 || std::memcmp(buf, kMagic, 4) != 0) {
        throw IoError("feature file '" + path + "': missing PVFT header");
    }
    FeatureHeader h;
    h.version = get_u32(buf + 4);
    h.num_frames = get_u32(buf + 8);
    h.dim = get_u32(buf + 12);
    if (h.version != kVersion) {
        throw DataError("feature file '" + path + "': unsupported version " +
                        std::to_string(h.version));
    }
    if (h.num_frames == 0 || h.dim == 0) {
        throw DataError("feature file '" + path + "': zero frames or zero dim");
    }
    return h;
}

} // namespace

FeatureHeader read_feature_header(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open feature file '" + path + "'");
    }
    unsigned char buf[16];
    in.read(reinterpret_cast<char*>(buf), 16);
    if (in.gcount() != 16) {
        throw IoError("feature file '" + path + "': truncated header");
    }
    return parse_header(path, buf, 16);
}

Tensor read_features(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open feature file '" + path + "'");
    }
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto* buf = reinterpret_cast<const unsigned char*>(bytes.data());
    const FeatureHeader h = parse_header(path, buf, bytes.size());
    const std::size_t expect = 16 + 4ull * h.num_frames * h.dim;
    if (bytes.size() != expect) {
        throw DataError("feature file '" + path + "': payload is " +
                        std::to_string(bytes.size() - 16) + " bytes, header implies " +
                        std::to_string(expect - 16));
    }
    Tensor out({h.num_frames, h.dim});
    const unsigned char* p = buf + 16;
    for (std::size_t i = 0; i < out.data.size(); ++i, p += 4) {
        out.data[i] = static_cast<double>(std::bit_cast<float>(get_u32(p)));
    }
    if (!out.all_finite()) {
        throw DataError("feature file '" + path + "': non-finite feature values");
    }
    return out;
}

void write_features(const std::string& path, const Tensor& features) {
    const std::size_t frames = features.rows();
    const std::size_t dim = features.cols();
    std::string bytes;
    bytes.reserve(16 + 4 * features.size());
    bytes.append(kMagic, 4);
    put_u32(bytes, kVersion);
    put_u32(bytes, static_cast<std::uint32_t>(frames));
    put_u32(bytes, static_cast<std::uint32_t>(dim));
    for (double v : features.data) {
        put_u32(bytes, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open '" + path + "' for writing");
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("short write to '" + path + "'");
    }
}

} // namespace procver
