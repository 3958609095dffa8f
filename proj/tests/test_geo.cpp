#include <doctest.h>

#include <cmath>
#include <random>

#include "sinr/geo.hpp"

using namespace sinr;
using doctest::Approx;

TEST_CASE("GeoCoord rejects out-of-range and non-finite values") {
  CHECK_NOTHROW(GeoCoord(180.0, -90.0));
  CHECK_THROWS_AS(GeoCoord(180.5, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(GeoCoord(0.0, -90.01), std::invalid_argument);
  CHECK_THROWS_AS(GeoCoord(std::nan(""), 0.0), std::invalid_argument);
  CHECK_THROWS_AS(GeoCoord(0.0, INFINITY), std::invalid_argument);
}

TEST_CASE("encode_location worked examples") {
  auto check = [](double lon, double lat, std::array<double, 4> expected) {
    const auto enc = encode_location(GeoCoord(lon, lat));
    REQUIRE(enc.layout() == InputMode::coords);
    REQUIRE(enc.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) CHECK(enc.values()[i] == Approx(expected[i]).epsilon(1e-12));
  };
  check(0, 0, {0, 1, 0, 1});
  check(90, -45, {1, 0, -1, 0});
  check(180, 0, {0, -1, 0, 1});
}

TEST_CASE("encode_location stays on the unit circle and wraps at the antimeridian") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> lon(-180, 180), lat(-90, 90);
  for (int i = 0; i < 2000; ++i) {
    const auto e = encode_coords(GeoCoord(lon(rng), lat(rng)));
    for (double v : e) CHECK((v >= -1.0 && v <= 1.0));
    CHECK(std::abs(e[0] * e[0] + e[1] * e[1] - 1.0) < 1e-6);
    CHECK(std::abs(e[2] * e[2] + e[3] * e[3] - 1.0) < 1e-6);
  }
  for (double la : {-90.0, -12.5, 0.0, 33.0, 90.0}) {
    CHECK(encode_coords(GeoCoord(-180, la)) == encode_coords(GeoCoord(180, la)));
  }
}

TEST_CASE("EncodedInput enforces its layout") {
  CHECK_THROWS_AS(EncodedInput(InputMode::coords, {0, 1, 0}), std::invalid_argument);
  CHECK_THROWS_AS(EncodedInput(InputMode::coords, {0, 1, 0, 1.5}), std::invalid_argument);
  CHECK_THROWS_AS(EncodedInput(InputMode::env_plus_coords, {0, 1, 0, 1}), std::invalid_argument);
  CHECK(EncodedInput(InputMode::env, {3.0}).size() == 1);
  CHECK(input_dim(InputMode::env_plus_coords, 20) == 24);
}

TEST_CASE("cell_of edge rules") {
  const GridSpec g1(1);
  CHECK(g1.n_cells() == 2);
  CHECK(g1.cell_of(GeoCoord(-180, -90)) == 0);
  CHECK(g1.cell_of(GeoCoord(180, 90)) == 1);
  CHECK(g1.cell_of(GeoCoord(0, 0)) == 1);
  CHECK(g1.cell_of(GeoCoord(-0.0001, 0)) == 0);
}

TEST_CASE("cell_of matches brute-force enumeration of cell rectangles") {
  // Enumerate the 4x2 grid at resolution 2: cells are 90 degrees wide.
  const GridSpec g(2);
  auto brute = [&](double lon, double lat) {
    std::size_t found = g.n_cells();
    for (std::size_t row = 0; row < g.n_lat(); ++row) {
      for (std::size_t col = 0; col < g.n_lon(); ++col) {
        const double lon0 = -180.0 + 90.0 * col, lat0 = -90.0 + 90.0 * row;
        const bool last_col = col + 1 == g.n_lon(), last_row = row + 1 == g.n_lat();
        const bool in_lon = lon >= lon0 && (lon < lon0 + 90.0 || (last_col && lon <= 180.0));
        const bool in_lat = lat >= lat0 && (lat < lat0 + 90.0 || (last_row && lat <= 90.0));
        if (in_lon && in_lat) {
          REQUIRE(found == g.n_cells());
          found = row * g.n_lon() + col;
        }
      }
    }
    return found;
  };
  CHECK(brute(1, 1) == 6);
  CHECK(g.cell_of(GeoCoord(1, 1)) == 6);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> lon(-180, 180), lat(-90, 90);
  for (int i = 0; i < 500; ++i) {
    const double a = lon(rng), b = lat(rng);
    CHECK(g.cell_of(GeoCoord(a, b)) == brute(a, b));
  }
  for (double a : {-180.0, -90.0, 0.0, 90.0, 180.0}) {
    for (double b : {-90.0, 0.0, 90.0}) CHECK(g.cell_of(GeoCoord(a, b)) == brute(a, b));
  }
}

TEST_CASE("cell_centroid") {
  const GridSpec g1(1);
  CHECK(g1.cell_centroid(0) == GeoCoord(-90, 0));
  CHECK(g1.cell_centroid(1) == GeoCoord(90, 0));
  CHECK_THROWS_AS(g1.cell_centroid(2), std::out_of_range);

  const GridSpec g3(3);
  for (std::size_t i = 0; i < g3.n_cells(); ++i) CHECK(g3.cell_of(g3.cell_centroid(i)) == i);
  CHECK_THROWS_AS(GridSpec(0), std::invalid_argument);
}
