#pragma once

#include <string>

#include "cdsr/image.hpp"

namespace cdsr {

/// Read an 8-bit PNG as RGB in [0,1] (value/255). Gray and RGBA inputs are
/// expanded/flattened to RGB.
ImagePlane read_png(const std::string& path);

/// Write an RGB or single-channel image as 8-bit PNG, round-clamping each
/// value with round(v*255) into [0,255].
void write_png(const std::string& path, const ImagePlane& img);

}  // namespace cdsr
