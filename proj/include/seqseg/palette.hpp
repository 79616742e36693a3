#pragma once

#include <array>
#include <cstdint>

namespace seqseg {

// Fixed class-id -> RGB table, shared by the dataset renderer and the probe
// map writer. Classes 0 and 1 are the two background surfaces.
inline constexpr int kMaxClasses = 12;
inline constexpr std::array<std::array<uint8_t, 3>, kMaxClasses> kPalette = {{
    {70, 70, 70},     // 0: upper surface
    {128, 64, 128},   // 1: lower surface
    {220, 20, 60},    // 2
    {0, 200, 60},     // 3
    {0, 100, 255},    // 4
    {250, 220, 0},    // 5
    {255, 128, 0},    // 6
    {0, 220, 220},    // 7
    {255, 0, 255},    // 8
    {160, 90, 40},    // 9
    {240, 240, 240},  // 10
    {0, 0, 160},      // 11
}};

}  // namespace seqseg
