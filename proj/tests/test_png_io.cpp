#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <vector>

#include "roivqa/png_io.hpp"
#include "test_support.hpp"

using namespace roivqa;

namespace {

// A 3x2 8-bit RGB image produced by an independent encoder. Decoding it
// must yield exactly the six pixels listed in the test below.
const std::vector<std::uint8_t> kReferencePng = {
    0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a, 0x00, 0x00, 0x00, 0x0d,
    0x49, 0x48, 0x44, 0x52, 0x00, 0x00, 0x00, 0x03, 0x00, 0x00, 0x00, 0x02,
    0x08, 0x02, 0x00, 0x00, 0x00, 0x12, 0x16, 0xf1, 0x4d, 0x00, 0x00, 0x00,
    0x18, 0x49, 0x44, 0x41, 0x54, 0x78, 0xda, 0x63, 0xf8, 0xcf, 0xc0, 0xc0,
    0x00, 0xc1, 0xff, 0xff, 0x33, 0x34, 0x30, 0x34, 0xb0, 0x73, 0x72, 0x03,
    0x00, 0x43, 0x08, 0x06, 0x17, 0xf5, 0xa9, 0x67, 0x75, 0x00, 0x00, 0x00,
    0x00, 0x49, 0x45, 0x4e, 0x44, 0xae, 0x42, 0x60, 0x82};

void check_reference_pixels(const ImageRGB8& img) {
    REQUIRE(img.width == 3);
    REQUIRE(img.height == 2);
    auto px_is = [&](int x, int y, int r, int g, int b) {
        const auto* p = img.px(x, y);
        CHECK(int(p[0]) == r);
        CHECK(int(p[1]) == g);
        CHECK(int(p[2]) == b);
    };
    px_is(0, 0, 255, 0, 0);
    px_is(1, 0, 0, 255, 0);
    px_is(2, 0, 0, 0, 255);
    px_is(0, 1, 255, 255, 0);
    px_is(1, 1, 128, 0, 128);
    px_is(2, 1, 7, 9, 11);
}

}  // namespace

TEST_CASE("decoding a foreign-encoded file yields exact pixels", "[png]") {
    check_reference_pixels(decode_rgb8(kReferencePng));
}

TEST_CASE("encode then decode is lossless", "[png]") {
    auto img = testsupport::gradient_image(37, 23, 5);
    auto bytes = encode_rgb8(img);
    auto back = decode_rgb8(bytes);
    CHECK(back == img);
}

TEST_CASE("encoding is deterministic", "[png]") {
    auto img = testsupport::gradient_image(16, 16);
    CHECK(encode_rgb8(img) == encode_rgb8(img));
}

TEST_CASE("file round trip matches in-memory bytes", "[png]") {
    testsupport::TempDir tmp("png");
    auto img = testsupport::gradient_image(9, 4, 2);
    const auto path = tmp / "a.png";
    write_rgb8(path, img);
    auto on_disk = testsupport::slurp(path);
    CHECK(on_disk == encode_rgb8(img));
    CHECK(read_rgb8(path) == img);
}

TEST_CASE("decode rejects non-png bytes", "[png]") {
    std::vector<std::uint8_t> junk = {1, 2, 3, 4, 5, 6, 7, 8};
    CHECK_THROWS_AS(decode_rgb8(junk), Error);
    CHECK_THROWS_AS(decode_rgb8({}), Error);
}

TEST_CASE("filled constructor and pixel accessor agree", "[png]") {
    auto img = ImageRGB8::filled(4, 3, 10, 20, 30);
    REQUIRE(img.pixels.size() == 4u * 3u * 3u);
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 4; ++x) {
            const auto* p = img.px(x, y);
            REQUIRE(int(p[0]) == 10);
            REQUIRE(int(p[1]) == 20);
            REQUIRE(int(p[2]) == 30);
        }
}
