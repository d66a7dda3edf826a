#pragma once

#include <filesystem>

#include "fpba/archive.hpp"
#include "fpba/detector.hpp"

namespace fpba {

/// Detector checkpoint: an .npz with one array per parameter tensor and a
/// "manifest.json" member (architecture, preprocessing, training record and
/// parameter checksum). Loading rebuilds the network from the manifest and
/// rejects any shape or checksum disagreement.
void save_detector(const std::filesystem::path& path, const Detector& det);
Detector load_detector(const std::filesystem::path& path);

// Shared helpers for containers that embed networks.
void put_params(Archive& ar, const std::string& prefix, const nn::Sequential& net);
void get_params(const Archive& ar, const std::string& prefix, nn::Sequential& net);

}  // namespace fpba
