#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "roivqa/error.hpp"

namespace roivqa {

/// Axis-aligned box in pixel coordinates, half-open on both axes: pixel
/// (x, y) is inside iff x1 <= x < x2 and y1 <= y < y2. A box whose answer
/// text reads "[115, 163, 243, 268]" therefore spans 128x105 pixels.
struct BBox {
    int x1 = 0;
    int y1 = 0;
    int x2 = 0;
    int y2 = 0;

    int width() const { return x2 - x1; }
    int height() const { return y2 - y1; }
    std::int64_t area() const {
        return static_cast<std::int64_t>(width()) * height();
    }
    bool degenerate() const { return x2 <= x1 || y2 <= y1; }
    bool inside(int image_width, int image_height) const {
        return x1 >= 0 && y1 >= 0 && x2 <= image_width && y2 <= image_height;
    }
    bool contains(int x, int y) const {
        return x >= x1 && x < x2 && y >= y1 && y < y2;
    }

    friend bool operator==(const BBox&, const BBox&) = default;
};

inline std::int64_t intersection_area(const BBox& a, const BBox& b) {
    const int w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    const int h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    if (w <= 0 || h <= 0) return 0;
    return static_cast<std::int64_t>(w) * h;
}

/// Intersection over union. Both boxes must be non-degenerate.
inline double iou(const BBox& a, const BBox& b) {
    if (a.degenerate() || b.degenerate())
        throw Error("iou: degenerate bbox");
    const std::int64_t inter = intersection_area(a, b);
    const std::int64_t uni = a.area() + b.area() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

/// "[x1, y1, x2, y2]" with the exact separator used in answer text.
inline std::string format_bbox(const BBox& b) {
    return "[" + std::to_string(b.x1) + ", " + std::to_string(b.y1) + ", " +
           std::to_string(b.x2) + ", " + std::to_string(b.y2) + "]";
}

/// Extracts the first bracketed 4-integer tuple from free text, tolerating
/// arbitrary whitespace around numbers and commas. Returns nullopt when no
/// such tuple exists.
inline std::optional<BBox> parse_bbox(std::string_view s) {
    auto skip_ws = [&](std::size_t i) {
        while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\n' ||
                                s[i] == '\r'))
            ++i;
        return i;
    };
    auto parse_int = [&](std::size_t i, long& out) -> std::optional<std::size_t> {
        i = skip_ws(i);
        bool neg = false;
        if (i < s.size() && (s[i] == '-' || s[i] == '+')) {
            neg = s[i] == '-';
            ++i;
        }
        if (i >= s.size() || s[i] < '0' || s[i] > '9') return std::nullopt;
        long v = 0;
        while (i < s.size() && s[i] >= '0' && s[i] <= '9') {
            v = v * 10 + (s[i] - '0');
            if (v > 1'000'000'000L) return std::nullopt;
            ++i;
        }
        out = neg ? -v : v;
        return i;
    };

    for (std::size_t start = 0; start < s.size(); ++start) {
        if (s[start] != '[') continue;
        std::size_t i = start + 1;
        long vals[4];
        bool ok = true;
        for (int k = 0; k < 4 && ok; ++k) {
            if (auto next = parse_int(i, vals[k])) {
                i = skip_ws(*next);
                if (k < 3) {
                    if (i < s.size() && s[i] == ',')
                        ++i;
                    else
                        ok = false;
                } else {
                    ok = i < s.size() && s[i] == ']';
                }
            } else {
                ok = false;
            }
        }
        if (ok)
            return BBox{static_cast<int>(vals[0]), static_cast<int>(vals[1]),
                        static_cast<int>(vals[2]), static_cast<int>(vals[3])};
    }
    return std::nullopt;
}

}  // namespace roivqa
