#pragma once

#include <string>

#include "procver/dataset.hpp"

namespace procver {

// Loads and fully validates a dataset manifest: schema (unknown keys are
// rejected), id uniqueness, split consistency, and per-video feature-file
// headers cross-checked against the declared dim and num_frames.
Dataset load_manifest(const std::string& path);

// Canonical serialization: sorted keys, two-space indent, trailing newline.
// Saving, loading and saving again reproduces the bytes exactly.
void save_manifest(const Dataset& ds, const std::string& path);

std::string manifest_to_string(const Dataset& ds);

} // namespace procver
