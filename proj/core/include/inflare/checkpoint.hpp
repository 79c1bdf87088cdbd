#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "inflare/denoiser.hpp"

namespace inflare::checkpoint {

inline constexpr char kMagic[6] = {'I', 'F', 'L', 'O', 'W', '1'};

// "IFLOW1", u64 little-endian header length, JSON header, then little-endian
// f64 parameters (net block, then EMA block).
std::vector<std::uint8_t> encode(const denoiser::TrainedDenoiser& model);
denoiser::TrainedDenoiser decode(std::span<const std::uint8_t> bytes);

void save(const std::filesystem::path& path, const denoiser::TrainedDenoiser& model);
denoiser::TrainedDenoiser load(const std::filesystem::path& path);

}  // namespace inflare::checkpoint
