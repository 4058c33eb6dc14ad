#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "magic/image_io.hpp"

using namespace magic;

TEST_SUITE("image_io") {
  TEST_CASE("16-bit round trips") {
    const auto dir = test::temp_dir("img");
    for (int c : {1, 3}) {
      const Tensor<float> img = test::random_image(Shape{1, c, 13, 17}, static_cast<std::uint64_t>(c));
      for (const char* ext : {".png", c == 3 ? ".ppm" : ".pgm"}) {
        const std::string path = (dir / (std::string("a") + std::to_string(c) + ext)).string();
        write_image(path, img);
        const Tensor<float> back = read_image(path);
        CHECK(back.shape() == img.shape());
        CHECK(test::max_abs_diff(back, img) <= 0.5 / 65535 + 1e-7);
      }
    }
    CHECK(encode_png16(test::random_image(Shape{1, 3, 4, 4}, 1)) == encode_png16(test::random_image(Shape{1, 3, 4, 4}, 1)));
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("8-bit PPM and sRGB decoding") {
    const auto dir = test::temp_dir("img8");
    const std::string path = (dir / "x.ppm").string();
    {
      std::ofstream f(path, std::ios::binary);
      f << "P6\n# comment\n2 1\n255\n";
      const unsigned char px[6] = {0, 128, 255, 10, 20, 30};
      f.write(reinterpret_cast<const char*>(px), 6);
    }
    const Tensor<float> t = read_image(path);
    CHECK(t.shape() == Shape{1, 3, 1, 2});
    CHECK(t.at(0, 1, 0, 0) == doctest::Approx(128.0 / 255.0));
    CHECK(t.at(0, 2, 0, 0) == 1.0f);
    const Tensor<float> lin = read_image(path, ImageReadOptions{true});
    CHECK(lin.at(0, 1, 0, 0) == doctest::Approx(std::pow((128.0 / 255.0 + 0.055) / 1.055, 2.4)).epsilon(1e-5));
    CHECK(lin.at(0, 0, 0, 1) == doctest::Approx(10.0 / 255.0 / 12.92).epsilon(1e-5));
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("errors") {
    const auto dir = test::temp_dir("imgerr");
    CHECK_THROWS_AS(read_image((dir / "none.png").string()), NotFoundError);
    {
      std::ofstream f(dir / "bad.png", std::ios::binary);
      f << "not a png";
    }
    CHECK_THROWS_AS(read_image((dir / "bad.png").string()), InputError);
    {
      std::ofstream f(dir / "short.ppm", std::ios::binary);
      f << "P6\n4 4\n255\nabc";
    }
    CHECK_THROWS_AS(read_image((dir / "short.ppm").string()), InputError);
    {
      std::ofstream f(dir / "x.bmp", std::ios::binary);
      f << "BM";
    }
    CHECK_THROWS_AS(read_image((dir / "x.bmp").string()), InputError);
    CHECK_THROWS_AS(write_image((dir / "y.png").string(), Tensor<float>(Shape{1, 2, 4, 4})), InputError);
    CHECK_THROWS_AS(write_image((dir / "y.tif").string(), Tensor<float>(Shape{1, 3, 4, 4})), InputError);
    std::filesystem::remove_all(dir);
  }
}
