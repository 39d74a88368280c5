//! Minimal helpers for points and vectors in the plane.

/// A point or vector in the plane.
pub type Vec2 = [f64; 2];

pub fn add(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] + b[0], a[1] + b[1]]
}

pub fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

pub fn scale(s: f64, a: Vec2) -> Vec2 {
    [s * a[0], s * a[1]]
}

pub fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub fn norm(a: Vec2) -> f64 {
    a[0].hypot(a[1])
}

/// Rotates a vector by -90 degrees: (x, y) -> (y, -x).
///
/// For a counter-clockwise boundary parametrization this turns the tangent
/// into the outward direction.
pub fn rot_cw(a: Vec2) -> Vec2 {
    [a[1], -a[0]]
}
