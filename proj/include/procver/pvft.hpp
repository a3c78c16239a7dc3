#pragma once

#include <cstdint>
#include <string>

#include "procver/tensor.hpp"

namespace procver {

// Binary frame-feature files: "PVFT" magic, little-endian u32 version (=1),
// u32 num_frames, u32 dim, then num_frames*dim little-endian f32, row-major.

struct FeatureHeader {
    std::uint32_t version = 1;
    std::uint32_t num_frames = 0;
    std::uint32_t dim = 0;
};

FeatureHeader read_feature_header(const std::string& path);

// Widens the stored f32 payload into a (num_frames x dim) double tensor.
Tensor read_features(const std::string& path);

// Rounds to f32 on write; features must be rank-2.
void write_features(const std::string& path, const Tensor& features);

} // namespace procver
