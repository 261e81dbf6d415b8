#ifndef LDREG_IO_HPP
#define LDREG_IO_HPP

#include <string>

#include "ldreg/tensor.hpp"
#include "ldreg/volume.hpp"

namespace ldreg {

// Volumes and masks are stored either as NIfTI-1 single files (".nii",
// ".nii.gz"; gz handled transparently on read) or as a raw fallback: a
// little-endian payload file plus a text sidecar "<path>.txt" listing shape,
// spacing, origin and dtype. The raw round trip is bit-exact.
Volume load_volume(const std::string &path);
void save_volume(const std::string &path, const Volume &v);

LabelMask load_mask(const std::string &path);
void save_mask(const std::string &path, const LabelMask &m);

// Displacement fields always use the raw representation: float32 (3,D,H,W)
// payload plus a sidecar carrying the "normalized-displacement" convention
// tag. Loading rejects sidecars without that tag.
Tensor load_field(const std::string &path);
void save_field(const std::string &path, const Tensor &field);

// 8-bit RGB PNG, rows top to bottom, rgb.size() == 3*width*height.
// Output bytes are deterministic for fixed input.
void save_png_rgb(const std::string &path, int64_t width, int64_t height,
                  const std::vector<uint8_t> &rgb);

} // namespace ldreg

#endif
