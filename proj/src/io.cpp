#include "hrt/io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <memory>
#include <sstream>

namespace hrt::io {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const { std::fclose(f); }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

File open(const std::string& path, const char* mode) {
    File f(std::fopen(path.c_str(), mode));
    if (!f) throw IoError("cannot open " + path);
    return f;
}

Image8 convert(Image8 in, int channels) {
    if (in.channels == channels) return in;
    Image8 out{in.h, in.w, channels, std::vector<std::uint8_t>(static_cast<std::size_t>(in.h) * in.w * channels)};
    for (std::size_t p = 0; p < static_cast<std::size_t>(in.h) * in.w; ++p) {
        if (channels == 1) {
            const std::uint8_t* c = &in.px[p * 3];
            out.px[p] = static_cast<std::uint8_t>(std::lround(0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]));
        } else {
            std::fill_n(&out.px[p * 3], 3, in.px[p]);
        }
    }
    return out;
}

// libpng reports through these instead of printing to stderr.
void png_fail(png_structp png, png_const_charp msg) {
    *static_cast<std::string*>(png_get_error_ptr(png)) = msg;
    png_longjmp(png, 1);
}
void png_quiet(png_structp, png_const_charp) {}

Image8 read_png(const std::string& path) {
    File f = open(path, "rb");
    std::string why;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &why, png_fail, png_quiet);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("libpng initialisation failed");
    }
    Image8 img;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("corrupt PNG " + path + ": " + why);
    }
    png_init_io(png, f.get());
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_packing(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);
    img.w = static_cast<int>(png_get_image_width(png, info));
    img.h = static_cast<int>(png_get_image_height(png, info));
    img.channels = png_get_channels(png, info) >= 3 ? 3 : 1;
    img.px.resize(static_cast<std::size_t>(img.h) * img.w * img.channels);
    for (int y = 0; y < img.h; ++y) rows.push_back(&img.px[static_cast<std::size_t>(y) * img.w * img.channels]);
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

Image8 read_pgm(const std::string& path) {
    const std::string data = read_file(path);
    std::size_t pos = 2;
    const auto token = [&]() -> long {
        while (pos < data.size()) {
            if (data[pos] == '#') {
                while (pos < data.size() && data[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(data[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
        long v = 0;
        const auto [end, ec] = std::from_chars(data.data() + pos, data.data() + data.size(), v);
        if (ec != std::errc()) throw IoError("malformed PGM header: " + path);
        pos = static_cast<std::size_t>(end - data.data());
        return v;
    };
    const bool binary = data[1] == '5';
    Image8 img;
    img.w = static_cast<int>(token());
    img.h = static_cast<int>(token());
    const long maxval = token();
    if (img.w <= 0 || img.h <= 0 || maxval <= 0 || maxval > 255) throw IoError("unsupported PGM (8-bit only): " + path);
    const std::size_t n = static_cast<std::size_t>(img.h) * img.w;
    img.px.resize(n);
    if (binary) {
        ++pos;  // single whitespace after maxval
        if (data.size() < pos + n) throw IoError("truncated PGM: " + path);
        for (std::size_t i = 0; i < n; ++i) {
            img.px[i] = static_cast<std::uint8_t>(static_cast<unsigned char>(data[pos + i]) * 255 / maxval);
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) img.px[i] = static_cast<std::uint8_t>(token() * 255 / maxval);
    }
    return img;
}

}  // namespace

Image8 read_image(const std::string& path, int channels) {
    std::string head;
    {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open " + path);
        head.resize(8);
        in.read(head.data(), 8);
        head.resize(static_cast<std::size_t>(in.gcount()));
    }
    Image8 img;
    if (head.size() >= 8 && png_sig_cmp(reinterpret_cast<png_const_bytep>(head.data()), 0, 8) == 0) {
        img = read_png(path);
    } else if (head.size() >= 2 && head[0] == 'P' && (head[1] == '5' || head[1] == '2')) {
        img = read_pgm(path);
    } else {
        throw IoError("not a PNG or PGM file: " + path);
    }
    return convert(std::move(img), channels);
}

void write_png(const std::string& path, const Image8& img) {
    File f = open(path, "wb");
    std::string why;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &why, png_fail, png_quiet);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("cannot write PNG " + path + ": " + why);
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8,
                 img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < img.h; ++y) {
        png_write_row(png, const_cast<png_bytep>(&img.px[static_cast<std::size_t>(y) * img.w * img.channels]));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

std::uint8_t to_u8(double v) {
    return static_cast<std::uint8_t>(std::clamp(std::floor(v * 255.0 + 0.5), 0.0, 255.0));
}

Image8 to_image(const Tensor& t) {
    if (t.rank() != 4 || t.dim(0) != 1 || (t.dim(1) != 1 && t.dim(1) != 3)) {
        throw ShapeError("to_image: expected (1,1|3,H,W), got " + shape_str(t.shape()));
    }
    Image8 img{static_cast<int>(t.dim(2)), static_cast<int>(t.dim(3)), static_cast<int>(t.dim(1)), {}};
    const std::size_t hw = static_cast<std::size_t>(img.h) * img.w;
    img.px.resize(hw * img.channels);
    for (int c = 0; c < img.channels; ++c)
        for (std::size_t p = 0; p < hw; ++p) img.px[p * img.channels + c] = to_u8(t.at(c * hw + p));
    return img;
}

Tensor to_tensor(const Image8& img) {
    const std::size_t hw = static_cast<std::size_t>(img.h) * img.w;
    std::vector<double> v(hw * img.channels);
    for (int c = 0; c < img.channels; ++c)
        for (std::size_t p = 0; p < hw; ++p) v[c * hw + p] = img.px[p * img.channels + c] / 255.0;
    return Tensor({1, img.channels, img.h, img.w}, std::move(v));
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

std::string csv_row(const std::vector<std::string>& fields) {
    std::string out;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out += ',';
        out += csv_field(fields[i]);
    }
    return out + "\r\n";
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false, any = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
        } else if (c == '"') {
            quoted = true;
            any = true;
        } else if (c == ',') {
            row.push_back(std::move(field));
            field.clear();
            any = true;
        } else if (c == '\r' || c == '\n') {
            if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
            row.push_back(std::move(field));
            field.clear();
            rows.push_back(std::move(row));
            row.clear();
            any = false;
        } else {
            field += c;
            any = true;
        }
    }
    if (quoted) throw IoError("csv: unterminated quoted field");
    if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string fmt(double v) {
    char buf[32];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

std::string pr_svg(const std::vector<LabelledCurve>& curves) {
    constexpr double W = 480, H = 400, L = 60, R = 20, T = 20, B = 50;
    const double pw = W - L - R, ph = H - T - B;
    const auto X = [&](double r) { return L + r * pw; };
    const auto Y = [&](double p) { return T + (1 - p) * ph; };
    static const char* colours[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
      << ' ' << H << "\">\n";
    s << "<rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    s << "<g font-family=\"sans-serif\" font-size=\"12\">\n";
    for (int i = 0; i <= 10; ++i) {
        const double v = i / 10.0;
        s << "<line x1=\"" << X(v) << "\" y1=\"" << Y(0) << "\" x2=\"" << X(v) << "\" y2=\"" << Y(1)
          << "\" stroke=\"#e0e0e0\"/>\n";
        s << "<line x1=\"" << X(0) << "\" y1=\"" << Y(v) << "\" x2=\"" << X(1) << "\" y2=\"" << Y(v)
          << "\" stroke=\"#e0e0e0\"/>\n";
        if (i % 2 == 0) {
            s << "<text x=\"" << X(v) << "\" y=\"" << Y(0) + 16 << "\" text-anchor=\"middle\">" << v << "</text>\n";
            s << "<text x=\"" << X(0) - 6 << "\" y=\"" << Y(v) + 4 << "\" text-anchor=\"end\">" << v << "</text>\n";
        }
    }
    s << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"black\"/>\n";
    s << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">Recall</text>\n";
    s << "<text x=\"16\" y=\"" << T + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << T + ph / 2
      << ")\">Precision</text>\n";
    for (std::size_t c = 0; c < curves.size(); ++c) {
        const char* colour = colours[c % std::size(colours)];
        s << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < curves[c].recall.size(); ++i) {
            s << (i ? " " : "") << X(curves[c].recall[i]) << ',' << Y(curves[c].precision[i]);
        }
        s << "\"/>\n";
        const double ly = T + 16 + 16 * static_cast<double>(c);
        s << "<line x1=\"" << L + 10 << "\" y1=\"" << ly - 4 << "\" x2=\"" << L + 30 << "\" y2=\"" << ly - 4
          << "\" stroke=\"" << colour << "\" stroke-width=\"2\"/>\n";
        std::string label;
        for (char ch : curves[c].label) {
            if (ch == '<') label += "&lt;";
            else if (ch == '>') label += "&gt;";
            else if (ch == '&') label += "&amp;";
            else label += ch;
        }
        s << "<text x=\"" << L + 36 << "\" y=\"" << ly << "\">" << label << "</text>\n";
    }
    s << "</g>\n</svg>\n";
    return s.str();
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    return {std::istreambuf_iterator<char>(in), {}};
}

void write_file(const std::string& path, const std::string& data) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << data;
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace hrt::io
