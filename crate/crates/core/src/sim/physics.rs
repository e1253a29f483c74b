//! Battery drain and point-mass motion.
//!
//! Battery levels are held in integer micro-percent so that the energy
//! ledger balances exactly.

use crate::geo::{dist, LocalPoint};

pub const MICRO: f64 = 1_000_000.0;
pub const FULL_MICRO: i64 = 100_000_000;

pub fn to_micro(pct: f64) -> i64 {
    (pct * MICRO).round() as i64
}

pub fn from_micro(micro: i64) -> f64 {
    micro as f64 / MICRO
}

/// Drain in micro-percent for a move of `distance_m` with a heading change
/// of `heading_change_deg`: `c * distance + k_turn * heading_change / 90`.
pub fn drain_micro(drain_const: f64, distance_m: f64, heading_change_deg: f64, k_turn: f64) -> i64 {
    (drain_const * distance_m * MICRO).round() as i64 + (k_turn * heading_change_deg / 90.0 * MICRO).round() as i64
}

/// Battery level after a move, floored at zero.
pub fn drain(level_pct: f64, drain_const: f64, distance_m: f64, heading_change_deg: f64, k_turn: f64) -> f64 {
    let left = to_micro(level_pct) - drain_micro(drain_const, distance_m, heading_change_deg, k_turn);
    from_micro(left.max(0))
}

/// Angle in degrees between two unit vectors.
pub fn turn_angle_deg(a: LocalPoint, b: LocalPoint) -> f64 {
    a.dot(b).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Where a body at `from` ends up after travelling at most `step` meters
/// toward `to`. Arrival snaps exactly onto `to`.
pub fn advance(from: LocalPoint, to: LocalPoint, step: f64) -> LocalPoint {
    let d = dist(from, to);
    if d <= step + 1e-9 {
        to
    } else {
        from.lerp(to, step / d)
    }
}
