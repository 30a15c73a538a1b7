#pragma once

#include <array>
#include <cmath>

#include "magpose/errors.hpp"
#include "magpose/linalg.hpp"
#include "magpose/rng.hpp"

namespace magpose {

inline constexpr double kPi = 3.14159265358979323846;

// Threshold below which a 6D vector is considered undecodable.
inline constexpr double kSixdEpsilon = 1e-8;

// Orientation of the ball relative to the socket. Orthonormal with
// determinant +1; see is_rotation().
struct Rotation {
  Mat3 m = Mat3::identity();
};

// Extrinsic X-Y-Z convention: R = Rz(rz) * Ry(ry) * Rx(rx).
struct EulerAngles {
  double rx = 0.0, ry = 0.0, rz = 0.0;

  double& operator[](int i) { return i == 0 ? rx : (i == 1 ? ry : rz); }
  double operator[](int i) const { return i == 0 ? rx : (i == 1 ? ry : rz); }
};

// Continuous 6-number rotation encoding: the first two matrix columns,
// stacked as (a1, a2).
struct SixD {
  std::array<double, 6> v{};

  double& operator[](int i) { return v[static_cast<std::size_t>(i)]; }
  double operator[](int i) const { return v[static_cast<std::size_t>(i)]; }
};

inline bool is_rotation(const Mat3& m, double tol = 1e-9) {
  const Mat3 gram = m.transpose() * m;
  return frobenius_distance(gram, Mat3::identity()) < tol &&
         std::abs(m.det() - 1.0) < tol;
}

// Maps into (-pi, pi]; only the -pi edge of atan2 needs fixing.
inline double normalize_angle(double a) {
  while (a > kPi) a -= 2.0 * kPi;
  while (a <= -kPi) a += 2.0 * kPi;
  return a;
}

inline Mat3 rot_x(double a) {
  Mat3 r = Mat3::identity();
  const double c = std::cos(a), s = std::sin(a);
  r(1, 1) = c;
  r(1, 2) = -s;
  r(2, 1) = s;
  r(2, 2) = c;
  return r;
}

inline Mat3 rot_y(double a) {
  Mat3 r = Mat3::identity();
  const double c = std::cos(a), s = std::sin(a);
  r(0, 0) = c;
  r(0, 2) = s;
  r(2, 0) = -s;
  r(2, 2) = c;
  return r;
}

inline Mat3 rot_z(double a) {
  Mat3 r = Mat3::identity();
  const double c = std::cos(a), s = std::sin(a);
  r(0, 0) = c;
  r(0, 1) = -s;
  r(1, 0) = s;
  r(1, 1) = c;
  return r;
}

// Closed form of Rz(rz)*Ry(ry)*Rx(rx).
inline Rotation euler_to_rotation(const EulerAngles& e) {
  const double ca = std::cos(e.rx), sa = std::sin(e.rx);
  const double cb = std::cos(e.ry), sb = std::sin(e.ry);
  const double cc = std::cos(e.rz), sc = std::sin(e.rz);
  Rotation r;
  r.m(0, 0) = cc * cb;
  r.m(0, 1) = cc * sb * sa - sc * ca;
  r.m(0, 2) = cc * sb * ca + sc * sa;
  r.m(1, 0) = sc * cb;
  r.m(1, 1) = sc * sb * sa + cc * ca;
  r.m(1, 2) = sc * sb * ca - cc * sa;
  r.m(2, 0) = -sb;
  r.m(2, 1) = cb * sa;
  r.m(2, 2) = cb * ca;
  return r;
}

// Inverse of euler_to_rotation. At gimbal lock (|ry| = pi/2) rx and rz are
// not separately observable; rx is reported as 0 and rz absorbs the free
// angle, which keeps the round trip exact.
inline EulerAngles rotation_to_euler(const Rotation& r) {
  EulerAngles e;
  const double sb = -r.m(2, 0);
  if (std::abs(sb) >= 1.0 - 1e-12) {
    e.ry = sb > 0.0 ? kPi / 2.0 : -kPi / 2.0;
    e.rx = 0.0;
    e.rz = normalize_angle(std::atan2(-r.m(0, 1), r.m(1, 1)));
    return e;
  }
  e.ry = std::asin(sb);
  e.rx = normalize_angle(std::atan2(r.m(2, 1), r.m(2, 2)));
  e.rz = normalize_angle(std::atan2(r.m(1, 0), r.m(0, 0)));
  return e;
}

// First two columns of the matrix, stacked.
inline SixD rotation_to_sixd(const Rotation& r) {
  SixD v;
  for (int i = 0; i < 3; ++i) {
    v[i] = r.m(i, 0);
    v[i + 3] = r.m(i, 1);
  }
  return v;
}

// Gram-Schmidt decode: b1 = a1/|a1|, b2 = normalized rejection of a2 from b1,
// b3 = b1 x b2. Annihilates scaling of a1 and shear of a2 along a1.
inline Rotation sixd_to_rotation(const SixD& v) {
  const Vec3 a1{v[0], v[1], v[2]};
  const Vec3 a2{v[3], v[4], v[5]};
  const double n1 = norm(a1);
  if (n1 <= kSixdEpsilon) throw DegenerateSixD("sixd decode: |a1| below epsilon");
  const Vec3 b1 = a1 / n1;
  const Vec3 w = a2 - dot(b1, a2) * b1;
  const double n2 = norm(w);
  if (n2 <= kSixdEpsilon)
    throw DegenerateSixD("sixd decode: a2 parallel to a1 within epsilon");
  const Vec3 b2 = w / n2;
  const Vec3 b3 = cross(b1, b2);
  Rotation r;
  for (int i = 0; i < 3; ++i) {
    r.m(i, 0) = b1[i];
    r.m(i, 1) = b2[i];
    r.m(i, 2) = b3[i];
  }
  return r;
}

// Gradient of <upstream, sixd_to_rotation(v)> with respect to v, i.e. the
// backward pass of the Gram-Schmidt decode. upstream is the 3x3 cotangent.
inline std::array<double, 6> sixd_to_rotation_grad(const SixD& v,
                                                   const Mat3& upstream) {
  const Vec3 a1{v[0], v[1], v[2]};
  const Vec3 a2{v[3], v[4], v[5]};
  const double n1 = norm(a1);
  if (n1 <= kSixdEpsilon) throw DegenerateSixD("sixd grad: |a1| below epsilon");
  const Vec3 b1 = a1 / n1;
  const double p = dot(b1, a2);
  const Vec3 w = a2 - p * b1;
  const double n2 = norm(w);
  if (n2 <= kSixdEpsilon)
    throw DegenerateSixD("sixd grad: a2 parallel to a1 within epsilon");
  const Vec3 b2 = w / n2;

  const Vec3 g1 = upstream.col(0);
  const Vec3 g2 = upstream.col(1);
  const Vec3 g3 = upstream.col(2);

  // b3 = b1 x b2: d<g3,b3>/db1 = b2 x g3, d/db2 = g3 x b1.
  const Vec3 gb1_total = g1 + cross(b2, g3);
  const Vec3 gb2_total = g2 + cross(g3, b1);

  // b2 = w/|w|.
  const Vec3 gw = (gb2_total - dot(b2, gb2_total) * b2) / n2;

  // w = a2 - (b1.a2) b1.
  const Vec3 ga2 = gw - dot(b1, gw) * b1;
  const Vec3 gb1 = gb1_total - dot(b1, gw) * a2 - p * gw;

  // b1 = a1/|a1|.
  const Vec3 ga1 = (gb1 - dot(b1, gb1) * b1) / n1;

  return {ga1.x, ga1.y, ga1.z, ga2.x, ga2.y, ga2.z};
}

// Mean over axes of the squared wrap-aware Euler difference (rad^2).
inline double mean_sq_euler_error(const EulerAngles& a, const EulerAngles& b) {
  double s = 0.0;
  for (int ax = 0; ax < 3; ++ax) {
    const double d = normalize_angle(a[ax] - b[ax]);
    s += d * d;
  }
  return s / 3.0;
}

// Angle of the relative rotation r1^T r2. Identical matrices short-circuit
// to exactly zero; arccos near 1 would otherwise report sqrt(eps) noise.
inline double geodesic_angle(const Rotation& r1, const Rotation& r2) {
  if (r1.m.m == r2.m.m) return 0.0;
  const Mat3 rel = r1.m.transpose() * r2.m;
  double c = (rel.trace() - 1.0) / 2.0;
  c = std::fmax(-1.0, std::fmin(1.0, c));
  return std::acos(c);
}

// -------- axis-angle helpers (slerp support for the simulator) --------

struct Quat {
  double w = 1.0, x = 0.0, y = 0.0, z = 0.0;
};

inline Quat quat_from_rotation(const Mat3& m) {
  Quat q;
  const double tr = m.trace();
  if (tr > 0.0) {
    const double s = std::sqrt(tr + 1.0) * 2.0;
    q.w = 0.25 * s;
    q.x = (m(2, 1) - m(1, 2)) / s;
    q.y = (m(0, 2) - m(2, 0)) / s;
    q.z = (m(1, 0) - m(0, 1)) / s;
  } else if (m(0, 0) > m(1, 1) && m(0, 0) > m(2, 2)) {
    const double s = std::sqrt(1.0 + m(0, 0) - m(1, 1) - m(2, 2)) * 2.0;
    q.w = (m(2, 1) - m(1, 2)) / s;
    q.x = 0.25 * s;
    q.y = (m(0, 1) + m(1, 0)) / s;
    q.z = (m(0, 2) + m(2, 0)) / s;
  } else if (m(1, 1) > m(2, 2)) {
    const double s = std::sqrt(1.0 + m(1, 1) - m(0, 0) - m(2, 2)) * 2.0;
    q.w = (m(0, 2) - m(2, 0)) / s;
    q.x = (m(0, 1) + m(1, 0)) / s;
    q.y = 0.25 * s;
    q.z = (m(1, 2) + m(2, 1)) / s;
  } else {
    const double s = std::sqrt(1.0 + m(2, 2) - m(0, 0) - m(1, 1)) * 2.0;
    q.w = (m(1, 0) - m(0, 1)) / s;
    q.x = (m(0, 2) + m(2, 0)) / s;
    q.y = (m(1, 2) + m(2, 1)) / s;
    q.z = 0.25 * s;
  }
  return q;
}

inline Mat3 rotation_from_quat(const Quat& q) {
  const double n = std::sqrt(q.w * q.w + q.x * q.x + q.y * q.y + q.z * q.z);
  const double w = q.w / n, x = q.x / n, y = q.y / n, z = q.z / n;
  Mat3 m;
  m(0, 0) = 1.0 - 2.0 * (y * y + z * z);
  m(0, 1) = 2.0 * (x * y - w * z);
  m(0, 2) = 2.0 * (x * z + w * y);
  m(1, 0) = 2.0 * (x * y + w * z);
  m(1, 1) = 1.0 - 2.0 * (x * x + z * z);
  m(1, 2) = 2.0 * (y * z - w * x);
  m(2, 0) = 2.0 * (x * z - w * y);
  m(2, 1) = 2.0 * (y * z + w * x);
  m(2, 2) = 1.0 - 2.0 * (x * x + y * y);
  return m;
}

// Spherical interpolation from a toward b by fraction alpha in [0, 1].
inline Rotation slerp(const Rotation& a, const Rotation& b, double alpha) {
  Quat qa = quat_from_rotation(a.m);
  Quat qb = quat_from_rotation(b.m);
  double d = qa.w * qb.w + qa.x * qb.x + qa.y * qb.y + qa.z * qb.z;
  if (d < 0.0) {
    qb.w = -qb.w;
    qb.x = -qb.x;
    qb.y = -qb.y;
    qb.z = -qb.z;
    d = -d;
  }
  double wa, wb;
  if (d > 1.0 - 1e-12) {
    wa = 1.0 - alpha;
    wb = alpha;
  } else {
    const double theta = std::acos(std::fmin(1.0, d));
    const double s = std::sin(theta);
    wa = std::sin((1.0 - alpha) * theta) / s;
    wb = std::sin(alpha * theta) / s;
  }
  const Quat q{wa * qa.w + wb * qb.w, wa * qa.x + wb * qb.x,
               wa * qa.y + wb * qb.y, wa * qa.z + wb * qb.z};
  Rotation r;
  r.m = rotation_from_quat(q);
  return r;
}

// Haar-uniform rotation: normalized quaternion from four standard normals.
inline Rotation random_rotation(Rng& rng) {
  Quat q{rng.gaussian(), rng.gaussian(), rng.gaussian(), rng.gaussian()};
  Rotation r;
  r.m = rotation_from_quat(q);
  return r;
}

}  // namespace magpose
