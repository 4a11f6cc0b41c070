#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace latmix {

// Small d-vector, padded to 3 components; components >= d stay zero.
struct Vec {
  double v[3] = {0.0, 0.0, 0.0};

  Vec() = default;
  Vec(double x, double y) : v{x, y, 0.0} {}
  Vec(double x, double y, double z) : v{x, y, z} {}

  double& operator[](int i) { return v[i]; }
  double operator[](int i) const { return v[i]; }

  Vec& operator+=(const Vec& o) {
    v[0] += o.v[0]; v[1] += o.v[1]; v[2] += o.v[2];
    return *this;
  }
  Vec& operator-=(const Vec& o) {
    v[0] -= o.v[0]; v[1] -= o.v[1]; v[2] -= o.v[2];
    return *this;
  }
  Vec& operator*=(double a) {
    v[0] *= a; v[1] *= a; v[2] *= a;
    return *this;
  }
};

inline Vec operator+(Vec a, const Vec& b) { return a += b; }
inline Vec operator-(Vec a, const Vec& b) { return a -= b; }
inline Vec operator*(double s, Vec a) { return a *= s; }
inline Vec operator*(Vec a, double s) { return a *= s; }
inline Vec operator-(const Vec& a) { return Vec{-a.v[0], -a.v[1], -a.v[2]}; }

inline double dot(const Vec& a, const Vec& b) {
  return a.v[0] * b.v[0] + a.v[1] * b.v[1] + a.v[2] * b.v[2];
}
inline double norm2(const Vec& a) { return dot(a, a); }
inline double norm(const Vec& a) { return std::sqrt(norm2(a)); }

// Integer lattice coordinates, used as site keys.
struct ZVec {
  std::int64_t z[3] = {0, 0, 0};
  bool operator==(const ZVec& o) const {
    return z[0] == o.z[0] && z[1] == o.z[1] && z[2] == o.z[2];
  }
};

struct ZVecHash {
  std::size_t operator()(const ZVec& k) const {
    std::uint64_t h = 1469598103934665603ull;
    for (std::int64_t c : k.z) {
      h ^= static_cast<std::uint64_t>(c);
      h *= 1099511628211ull;
    }
    return static_cast<std::size_t>(h);
  }
};

// d x d matrix, padded to 3x3 (row major); unused entries zero except
// diagonal padding which is set to 1 so inverses stay well defined.
struct Mat {
  double m[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};

  double& operator()(int i, int j) { return m[i][j]; }
  double operator()(int i, int j) const { return m[i][j]; }
};

inline Vec matvec(const Mat& A, const Vec& x) {
  Vec r;
  for (int i = 0; i < 3; ++i)
    r[i] = A(i, 0) * x[0] + A(i, 1) * x[1] + A(i, 2) * x[2];
  return r;
}

}  // namespace latmix
