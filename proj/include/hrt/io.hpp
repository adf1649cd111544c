#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "hrt/metrics.hpp"
#include "hrt/tensor.hpp"

namespace hrt::io {

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// 8-bit raster, channels interleaved.
struct Image8 {
    int h = 0, w = 0, channels = 1;
    std::vector<std::uint8_t> px;
};

// PNG (any bit depth / colour type, converted to 8 bits) or binary/ASCII PGM.
// `channels` is 1 (colour is reduced to luma) or 3 (grey is replicated).
Image8 read_image(const std::string& path, int channels);
void write_png(const std::string& path, const Image8& img);

// round(v * 255) with halves rounded up, clamped to [0,255].
std::uint8_t to_u8(double v);
// (1,C,H,W) tensor in [0,1] -> image with C channels (C = 1 or 3).
Image8 to_image(const Tensor& t);
// Image -> (1,C,H,W) tensor in [0,1].
Tensor to_tensor(const Image8& img);

// Quotes a field when it contains a comma, quote, CR or LF; quotes are doubled.
std::string csv_field(const std::string& s);
std::string csv_row(const std::vector<std::string>& fields);
// RFC 4180 parser: quoted fields, doubled quotes, CRLF or LF line ends.
std::vector<std::vector<std::string>> parse_csv(const std::string& text);

// Shortest decimal that reads back to the same double.
std::string fmt(double v);

struct LabelledCurve {
    std::string label;
    std::vector<double> precision, recall;
};
// Static SVG line plot of precision against recall.
std::string pr_svg(const std::vector<LabelledCurve>& curves);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& data);

}  // namespace hrt::io
