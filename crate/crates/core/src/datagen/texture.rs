//! Procedural textures: two-colour chessboards and a striated wood grain.

use serde::{Deserialize, Serialize};

/// Low-frequency sinusoidal rings perturbed by value noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WoodGrain {
    pub light: [f32; 3],
    pub dark: [f32; 3],
    /// Ring count across the unit half-frame.
    pub frequency: f64,
    pub turbulence: f64,
    /// Grain direction, radians.
    pub angle: f64,
    pub noise_seed: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = splitmix(seed ^ splitmix(ix as u64) ^ splitmix((iy as u64).wrapping_mul(0x632B_E59B_D9B4_E019)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Smoothly interpolated lattice noise in `[0, 1)`.
pub fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let (tx, ty) = (x - fx, y - fy);
    let (sx, sy) = (tx * tx * (3.0 - 2.0 * tx), ty * ty * (3.0 - 2.0 * ty));
    let a = lattice(seed, ix, iy);
    let b = lattice(seed, ix + 1, iy);
    let c = lattice(seed, ix, iy + 1);
    let d = lattice(seed, ix + 1, iy + 1);
    let top = a + (b - a) * sx;
    let bottom = c + (d - c) * sx;
    top + (bottom - top) * sy
}

impl WoodGrain {
    pub fn color(&self, u: f64, v: f64) -> [f32; 3] {
        let (s, c) = self.angle.sin_cos();
        let along = c * u + s * v;
        let across = -s * u + c * v;
        let warp = value_noise(self.noise_seed, u * 2.0, v * 2.0) - 0.5;
        let ring = (std::f64::consts::TAU * self.frequency * (along + 0.15 * across * across + self.turbulence * warp)).sin();
        let fine = value_noise(self.noise_seed.wrapping_add(1), along * 3.0, across * 24.0) - 0.5;
        let t = (0.5 + 0.5 * ring + 0.25 * fine).clamp(0.0, 1.0) as f32;
        std::array::from_fn(|k| self.dark[k] + (self.light[k] - self.dark[k]) * t)
    }
}

/// Colour of a chessboard with square cells of side `cell` at local coordinates `(x, y)`.
pub fn chessboard(a: [f32; 3], b: [f32; 3], cell: f64, x: f64, y: f64) -> [f32; 3] {
    let parity = ((x / cell).floor() as i64 + (y / cell).floor() as i64).rem_euclid(2);
    if parity == 0 {
        a
    } else {
        b
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_is_deterministic_and_bounded() {
        for k in 0..200 {
            let (x, y) = (k as f64 * 0.37 - 20.0, k as f64 * 0.11 + 3.0);
            let v = value_noise(9, x, y);
            assert!((0.0..1.0).contains(&v));
            assert_eq!(v.to_bits(), value_noise(9, x, y).to_bits());
        }
        assert_ne!(value_noise(1, 0.5, 0.5), value_noise(2, 0.5, 0.5));
    }

    #[test]
    fn chessboard_alternates() {
        let (a, b) = ([1.0; 3], [0.0; 3]);
        assert_eq!(chessboard(a, b, 0.5, 0.1, 0.1), a);
        assert_eq!(chessboard(a, b, 0.5, 0.6, 0.1), b);
        assert_eq!(chessboard(a, b, 0.5, -0.1, 0.1), b);
        assert_eq!(chessboard(a, b, 0.5, 0.6, 0.6), a);
    }

    #[test]
    fn wood_stays_between_its_colours() {
        let w = WoodGrain { light: [0.9, 0.7, 0.5], dark: [0.3, 0.2, 0.1], frequency: 5.0, turbulence: 0.4, angle: 0.3, noise_seed: 4 };
        for k in 0..400 {
            let c = w.color((k % 20) as f64 / 10.0 - 1.0, (k / 20) as f64 / 10.0 - 1.0);
            for ch in 0..3 {
                assert!(c[ch] >= w.dark[ch] - 1e-6 && c[ch] <= w.light[ch] + 1e-6);
            }
        }
    }
}
