#pragma once

#include <array>
#include <cmath>
#include <cstddef>

namespace bsplat {

template <typename T>
struct Vec3 {
  T x{}, y{}, z{};

  constexpr T& operator[](std::size_t i) { return i == 0 ? x : (i == 1 ? y : z); }
  constexpr const T& operator[](std::size_t i) const { return i == 0 ? x : (i == 1 ? y : z); }

  template <typename U>
  constexpr Vec3<U> cast() const {
    return {static_cast<U>(x), static_cast<U>(y), static_cast<U>(z)};
  }

  constexpr Vec3& operator+=(const Vec3& o) {
    x += o.x; y += o.y; z += o.z;
    return *this;
  }
  constexpr Vec3& operator-=(const Vec3& o) {
    x -= o.x; y -= o.y; z -= o.z;
    return *this;
  }
  constexpr Vec3& operator*=(T s) {
    x *= s; y *= s; z *= s;
    return *this;
  }
  friend constexpr Vec3 operator+(Vec3 a, const Vec3& b) { return a += b; }
  friend constexpr Vec3 operator-(Vec3 a, const Vec3& b) { return a -= b; }
  friend constexpr Vec3 operator*(Vec3 a, T s) { return a *= s; }
  friend constexpr Vec3 operator*(T s, Vec3 a) { return a *= s; }
  friend constexpr Vec3 operator-(const Vec3& a) { return {-a.x, -a.y, -a.z}; }
  friend constexpr bool operator==(const Vec3&, const Vec3&) = default;
};

using Vec3f = Vec3<float>;
using Vec3d = Vec3<double>;

template <typename T>
constexpr T dot(const Vec3<T>& a, const Vec3<T>& b) {
  return a.x * b.x + a.y * b.y + a.z * b.z;
}

template <typename T>
constexpr Vec3<T> cross(const Vec3<T>& a, const Vec3<T>& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

template <typename T>
T norm(const Vec3<T>& a) {
  return std::sqrt(dot(a, a));
}

/// Quaternion stored as (w, x, y, z).
template <typename T>
struct Quat {
  T w{1}, x{}, y{}, z{};

  constexpr T& operator[](std::size_t i) {
    return i == 0 ? w : (i == 1 ? x : (i == 2 ? y : z));
  }
  constexpr const T& operator[](std::size_t i) const {
    return i == 0 ? w : (i == 1 ? x : (i == 2 ? y : z));
  }

  template <typename U>
  constexpr Quat<U> cast() const {
    return {static_cast<U>(w), static_cast<U>(x), static_cast<U>(y), static_cast<U>(z)};
  }

  T norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

  Quat normalized() const {
    const T n = norm();
    return {w / n, x / n, y / n, z / n};
  }
  friend constexpr bool operator==(const Quat&, const Quat&) = default;
};

using Quatf = Quat<float>;
using Quatd = Quat<double>;

/// Row-major 3x3 matrix.
template <typename T>
struct Mat3 {
  std::array<T, 9> m{};

  constexpr T& operator()(std::size_t r, std::size_t c) { return m[r * 3 + c]; }
  constexpr const T& operator()(std::size_t r, std::size_t c) const { return m[r * 3 + c]; }

  static constexpr Mat3 identity() {
    Mat3 r;
    r(0, 0) = r(1, 1) = r(2, 2) = T(1);
    return r;
  }

  constexpr Mat3 transposed() const {
    Mat3 r;
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
    return r;
  }

  friend constexpr Mat3 operator*(const Mat3& a, const Mat3& b) {
    Mat3 r;
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        T s{};
        for (std::size_t k = 0; k < 3; ++k) s += a(i, k) * b(k, j);
        r(i, j) = s;
      }
    return r;
  }

  friend constexpr Vec3<T> operator*(const Mat3& a, const Vec3<T>& v) {
    return {a(0, 0) * v.x + a(0, 1) * v.y + a(0, 2) * v.z,
            a(1, 0) * v.x + a(1, 1) * v.y + a(1, 2) * v.z,
            a(2, 0) * v.x + a(2, 1) * v.y + a(2, 2) * v.z};
  }

  friend constexpr Mat3 operator+(Mat3 a, const Mat3& b) {
    for (std::size_t i = 0; i < 9; ++i) a.m[i] += b.m[i];
    return a;
  }
  friend constexpr Mat3 operator*(Mat3 a, T s) {
    for (auto& v : a.m) v *= s;
    return a;
  }
};

using Mat3d = Mat3<double>;

/// Rotation matrix of a unit quaternion.
template <typename T>
constexpr Mat3<T> rotation_matrix(const Quat<T>& q) {
  const T w = q.w, x = q.x, y = q.y, z = q.z;
  Mat3<T> r;
  r(0, 0) = 1 - 2 * (y * y + z * z);
  r(0, 1) = 2 * (x * y - w * z);
  r(0, 2) = 2 * (x * z + w * y);
  r(1, 0) = 2 * (x * y + w * z);
  r(1, 1) = 1 - 2 * (x * x + z * z);
  r(1, 2) = 2 * (y * z - w * x);
  r(2, 0) = 2 * (x * z - w * y);
  r(2, 1) = 2 * (y * z + w * x);
  r(2, 2) = 1 - 2 * (x * x + y * y);
  return r;
}

/// Back-propagates dL/dR through rotation_matrix onto the (unit) quaternion components.
template <typename T>
constexpr Quat<T> rotation_matrix_vjp(const Quat<T>& q, const Mat3<T>& g) {
  const T w = q.w, x = q.x, y = q.y, z = q.z;
  Quat<T> d{0, 0, 0, 0};
  d.w = 2 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
  d.x = 2 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2 * x * g(1, 1) - w * g(1, 2) +
             z * g(2, 0) + w * g(2, 1) - 2 * x * g(2, 2));
  d.y = 2 * (-2 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) -
             w * g(2, 0) + z * g(2, 1) - 2 * y * g(2, 2));
  d.z = 2 * (-2 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2 * z * g(1, 1) +
             y * g(1, 2) + x * g(2, 0) + y * g(2, 1));
  return d;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace bsplat
