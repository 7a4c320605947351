#pragma once

#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "roivqa/bbox.hpp"
#include "roivqa/corpus.hpp"
#include "roivqa/error.hpp"
#include "roivqa/png_io.hpp"
#include "roivqa/rng.hpp"

namespace roivqa {

struct Color {
    std::uint8_t r = 0;
    std::uint8_t g = 0;
    std::uint8_t b = 0;
    std::string name;  // palette name, or empty for custom colors

    friend bool operator==(const Color&, const Color&) = default;
};

/// The four option colors, in the order the templates list them.
inline const std::vector<Color>& palette() {
    static const std::vector<Color> p = {
        {255, 255, 0, "Yellow"},
        {128, 0, 128, "Purple"},
        {0, 255, 0, "Green"},
        {255, 0, 0, "Red"},
    };
    return p;
}

inline Color palette_color(const std::string& name) {
    for (const auto& c : palette())
        if (c.name == name) return c;
    throw Error("unknown palette color: " + name);
}

enum class BoxStyle { outline, filled };

inline const char* to_string(BoxStyle s) {
    return s == BoxStyle::outline ? "outline" : "filled";
}

struct OverlayBox {
    BBox bbox;
    Color color;
    BoxStyle style = BoxStyle::outline;
    int thickness = 3;  // outline only
};

struct OverlaySpec {
    std::vector<OverlayBox> boxes;
};

/// Raster form of an overlay: a coverage mask plus the marker color at each
/// covered pixel. Uncovered pixels have no defined color.
struct OverlayLayer {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> mask;   // 1 byte per pixel, 0 or 1
    std::vector<std::uint8_t> color;  // 3 bytes per pixel, valid where mask=1

    bool covered(int x, int y) const {
        return mask[static_cast<std::size_t>(y) * width + x] != 0;
    }
};

inline OverlayLayer render_overlay(int width, int height,
                                   const OverlaySpec& spec) {
    OverlayLayer layer;
    layer.width = width;
    layer.height = height;
    layer.mask.assign(static_cast<std::size_t>(width) * height, 0);
    layer.color.assign(static_cast<std::size_t>(width) * height * 3, 0);

    for (const auto& box : spec.boxes) {
        const BBox& b = box.bbox;
        if (b.degenerate()) throw Error("overlay: degenerate bbox");
        if (!b.inside(width, height)) throw Error("overlay: box out of bounds");
        int t = box.thickness;
        if (box.style == BoxStyle::outline) {
            if (t < 1) throw Error("overlay: outline thickness must be >= 1");
            const int limit = std::min(b.width(), b.height()) / 2;
            if (t > limit && limit >= 1)
                throw Error("overlay: thickness exceeds half the box size");
            if (limit < 1) t = 0;  // box too thin to hollow out; fill it
        }
        for (int y = b.y1; y < b.y2; ++y) {
            for (int x = b.x1; x < b.x2; ++x) {
                if (box.style == BoxStyle::outline && t > 0) {
                    const bool on_ring = x < b.x1 + t || x >= b.x2 - t ||
                                         y < b.y1 + t || y >= b.y2 - t;
                    if (!on_ring) continue;
                }
                const std::size_t i =
                    static_cast<std::size_t>(y) * width + x;
                layer.mask[i] = 1;
                layer.color[i * 3] = box.color.r;
                layer.color[i * 3 + 1] = box.color.g;
                layer.color[i * 3 + 2] = box.color.b;
            }
        }
    }
    return layer;
}

/// One channel of the blend: round((alpha*marker + (255-alpha)*base) / 255)
/// in integer arithmetic. 255 is odd, so no exact .5 ties exist and adding
/// 127 before dividing rounds half-up.
inline std::uint8_t blend_channel(int alpha, std::uint8_t marker,
                                  std::uint8_t base) {
    const int num = alpha * marker + (255 - alpha) * base;
    return static_cast<std::uint8_t>((num + 127) / 255);
}

inline ImageRGB8 blend(const ImageRGB8& base, const OverlayLayer& layer,
                       int alpha) {
    if (alpha < 0 || alpha > 255) throw Error("blend: alpha out of range");
    if (base.width != layer.width || base.height != layer.height)
        throw Error("blend: dimension mismatch");
    if (base.pixels.size() !=
        static_cast<std::size_t>(base.width) * base.height * 3)
        throw Error("blend: pixel buffer does not match dimensions");
    ImageRGB8 out = base;
    const std::size_t n = static_cast<std::size_t>(base.width) * base.height;
    for (std::size_t i = 0; i < n; ++i) {
        if (!layer.mask[i]) continue;
        for (int c = 0; c < 3; ++c)
            out.pixels[i * 3 + c] = blend_channel(alpha, layer.color[i * 3 + c],
                                                  base.pixels[i * 3 + c]);
    }
    return out;
}

struct AlphaPolicy {
    enum class Mode { fixed, dynamic };
    Mode mode = Mode::fixed;
    int value = 128;  // fixed mode
    int lo = 96;      // dynamic mode
    int hi = 255;

    static AlphaPolicy fixed(int a) {
        if (a < 0 || a > 255) throw Error("alpha must be in [0,255]");
        AlphaPolicy p;
        p.mode = Mode::fixed;
        p.value = a;
        return p;
    }

    static AlphaPolicy dynamic(int lo = 96, int hi = 255) {
        if (lo < 0 || hi > 255 || lo > hi)
            throw Error("dynamic alpha range must satisfy 0 <= lo <= hi <= 255");
        AlphaPolicy p;
        p.mode = Mode::dynamic;
        p.lo = lo;
        p.hi = hi;
        return p;
    }

    std::string describe() const {
        if (mode == Mode::fixed) return std::to_string(value);
        return "dynamic[" + std::to_string(lo) + "," + std::to_string(hi) + "]";
    }
};

/// Draws the blending weight for one item. Keyed by (seed, qa_id) rather
/// than by any shared stream, so the result is independent of how items are
/// scheduled across workers.
inline int sample_alpha(const AlphaPolicy& policy, std::uint64_t seed,
                        const std::string& qa_id) {
    if (policy.mode == AlphaPolicy::Mode::fixed) return policy.value;
    SplitMix64 rng(item_key(seed, qa_id));
    return policy.lo +
           static_cast<int>(rng.next_below(
               static_cast<std::uint64_t>(policy.hi - policy.lo) + 1));
}

struct CompositedImage {
    std::string composite_id;
    std::string base_image_id;
    OverlaySpec overlay;
    int alpha_used = 0;
    ImageRGB8 pixels;
    std::string file;  // output path, set when written
};

inline CompositedImage composite_item(const ImageRecord& base,
                                      const OverlaySpec& spec,
                                      const AlphaPolicy& policy,
                                      std::uint64_t seed,
                                      const std::string& qa_id) {
    for (const auto& box : spec.boxes)
        if (!box.bbox.inside(base.width, base.height))
            throw Error("composite: region outside image " + base.image_id);
    const int alpha = sample_alpha(policy, seed, qa_id);
    OverlayLayer layer = render_overlay(base.width, base.height, spec);
    CompositedImage out;
    out.composite_id = qa_id;
    out.base_image_id = base.image_id;
    out.overlay = spec;
    out.alpha_used = alpha;
    out.pixels = blend(base.image(), layer, alpha);
    return out;
}

inline ojson sidecar_record(const std::string& qa_id,
                            const CompositedImage& comp) {
    ojson j;
    j["qa_id"] = qa_id;
    j["composite_id"] = comp.composite_id;
    j["alpha_used"] = comp.alpha_used;
    ojson boxes = ojson::array();
    for (const auto& box : comp.overlay.boxes) {
        ojson bj;
        bj["bbox"] = {box.bbox.x1, box.bbox.y1, box.bbox.x2, box.bbox.y2};
        bj["color"] = box.color.name.empty()
                          ? "rgb(" + std::to_string(box.color.r) + "," +
                                std::to_string(box.color.g) + "," +
                                std::to_string(box.color.b) + ")"
                          : box.color.name;
        bj["style"] = to_string(box.style);
        if (box.style == BoxStyle::outline) bj["thickness"] = box.thickness;
        boxes.push_back(bj);
    }
    j["boxes"] = boxes;
    return j;
}

}  // namespace roivqa
