#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <vector>

#include "tbfa/rng.hpp"

using tbfa::RngStream;

TEST_CASE("identical seeds reproduce the sequence exactly") {
  RngStream a(9001), b(9001);
  for (int i = 0; i < 200; ++i) CHECK(a.next_u64() == b.next_u64());
  for (int i = 0; i < 200; ++i) CHECK(a.uniform01() == b.uniform01());
  for (int i = 0; i < 200; ++i) CHECK(a.normal() == b.normal());
}

TEST_CASE("frozen outputs for seed 42") {
  // Golden values; any change to seeding or the generator core breaks
  // reproducibility of archived runs and must show up here.
  RngStream r(42);
  CHECK(r.next_u64() == 1546998764402558742ULL);
  CHECK(r.next_u64() == 6990951692964543102ULL);
  CHECK(r.next_u64() == 12544586762248559009ULL);
  CHECK(r.next_u64() == 17057574109182124193ULL);
  CHECK(r.uniform01() == Catch::Approx(0.99180391428210291).epsilon(1e-15));
  CHECK(r.normal() == Catch::Approx(0.93572083049237487).epsilon(1e-15));
  CHECK(RngStream(7).child(3).next_u64() == 5627473689351840787ULL);
}

TEST_CASE("child streams are independent of the parent and of each other") {
  RngStream parent(123);
  RngStream c0 = parent.child(0);
  RngStream c1 = parent.child(1);
  RngStream c0_again = parent.child(0);

  // keyed derivation is a pure function of (seed, key)
  for (int i = 0; i < 50; ++i) CHECK(c0.next_u64() == c0_again.next_u64());

  // distinct keys give distinct streams, and deriving children does not
  // advance the parent
  RngStream c1b = parent.child(1);
  CHECK(c1.next_u64() != parent.child(2).next_u64());
  CHECK(c1b.next_u64() == RngStream(123).child(1).next_u64());

  // crude cross-correlation guard between sibling streams
  RngStream x = RngStream(5).child(10);
  RngStream y = RngStream(5).child(11);
  int agree = 0;
  for (int i = 0; i < 4096; ++i)
    agree += ((x.next_u64() ^ y.next_u64()) & 1ULL) == 0 ? 1 : 0;
  CHECK(agree > 1800);
  CHECK(agree < 2300);
}

TEST_CASE("uniform01 stays strictly inside the unit interval") {
  RngStream r(77);
  double mean = 0.0, sq = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform01();
    REQUIRE(u > 0.0);
    REQUIRE(u < 1.0);
    mean += u;
    sq += u * u;
  }
  mean /= n;
  sq = sq / n - mean * mean;
  CHECK(mean == Catch::Approx(0.5).margin(0.005));
  CHECK(sq == Catch::Approx(1.0 / 12.0).margin(0.002));
}

TEST_CASE("normal draws have standard moments") {
  RngStream r(2024);
  double mean = 0.0, sq = 0.0, quad = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    mean += z;
    sq += z * z;
    quad += z * z * z * z;
  }
  mean /= n;
  sq /= n;
  quad /= n;
  CHECK(mean == Catch::Approx(0.0).margin(0.02));
  CHECK(sq == Catch::Approx(1.0).margin(0.03));
  CHECK(quad == Catch::Approx(3.0).margin(0.15));
}

TEST_CASE("uniform maps onto the requested interval") {
  RngStream r(31);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform(-3.0, 5.0);
    REQUIRE(u > -3.0);
    REQUIRE(u < 5.0);
  }
}
