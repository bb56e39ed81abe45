//! Procedural stand-ins for overhead imagery: layered value noise mapped
//! through a land-cover palette, with field parcels and a road network.

use rand::Rng as _;

use crate::rng::Rng;
use crate::types::ImageRgb;

/// No channel of a base pixel exceeds this value.
pub const BASE_CEILING: u8 = 230;

struct ValueNoise {
    cells: usize,
    lattice: Vec<f32>,
}

impl ValueNoise {
    fn new(rng: &mut Rng, cells: usize) -> Self {
        let lattice = (0..(cells + 1) * (cells + 1)).map(|_| rng.random::<f32>()).collect();
        Self { cells, lattice }
    }

    /// Smoothstep-interpolated lattice noise at `(u, v) in [0,1)^2`.
    fn sample(&self, u: f32, v: f32) -> f32 {
        let fx = u * self.cells as f32;
        let fy = v * self.cells as f32;
        let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
        let (tx, ty) = (fx - x0 as f32, fy - y0 as f32);
        let (sx, sy) = (tx * tx * (3.0 - 2.0 * tx), ty * ty * (3.0 - 2.0 * ty));
        let n = self.cells + 1;
        let at = |x: usize, y: usize| self.lattice[y.min(self.cells) * n + x.min(self.cells)];
        let top = at(x0, y0) + (at(x0 + 1, y0) - at(x0, y0)) * sx;
        let bottom = at(x0, y0 + 1) + (at(x0 + 1, y0 + 1) - at(x0, y0 + 1)) * sx;
        top + (bottom - top) * sy
    }
}

fn fractal(octaves: &[ValueNoise], u: f32, v: f32) -> f32 {
    let mut total = 0.0;
    let mut weight = 0.0;
    let mut amp = 1.0;
    for o in octaves {
        total += amp * o.sample(u, v);
        weight += amp;
        amp *= 0.5;
    }
    total / weight
}

fn lerp3(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    [0, 1, 2].map(|i| a[i] + (b[i] - a[i]) * t)
}

const WATER: [f32; 3] = [28.0, 52.0, 88.0];
const SHORE: [f32; 3] = [150.0, 140.0, 105.0];
const CROP: [f32; 3] = [92.0, 128.0, 58.0];
const FOREST: [f32; 3] = [38.0, 74.0, 40.0];
const SCRUB: [f32; 3] = [128.0, 116.0, 80.0];
const ROCK: [f32; 3] = [150.0, 146.0, 138.0];
const ROAD: [f32; 3] = [112.0, 110.0, 106.0];

/// One `side x side` base image drawn from `rng`.
pub fn satellite_base(rng: &mut Rng, side: usize) -> ImageRgb {
    let elevation: Vec<ValueNoise> = [3, 6, 12, 24, 48].iter().map(|&c| ValueNoise::new(rng, c)).collect();
    let moisture: Vec<ValueNoise> = [4, 8, 16].iter().map(|&c| ValueNoise::new(rng, c)).collect();
    let grain = ValueNoise::new(rng, 160);
    let water_level = rng.random_range(0.25..0.42);
    let parcel_cells = rng.random_range(6..14);
    let parcel_tint: Vec<[f32; 3]> = (0..parcel_cells * parcel_cells)
        .map(|_| [rng.random_range(-18.0..18.0), rng.random_range(-22.0..22.0), rng.random_range(-10.0..10.0)])
        .collect();
    let roads: Vec<(f32, f32, f32)> = (0..rng.random_range(1..4))
        .map(|_| {
            let angle = rng.random_range(0.0..std::f32::consts::PI);
            (angle.cos(), angle.sin(), rng.random_range(0.2..0.8))
        })
        .collect();
    let road_width = 2.5 / side as f32;
    let brightness = rng.random_range(0.85..1.1);

    ImageRgb::from_fn(side, side, |x, y| {
        let u = (x as f32 + 0.5) / side as f32;
        let v = (y as f32 + 0.5) / side as f32;
        let h = fractal(&elevation, u, v);
        let m = fractal(&moisture, u, v);
        let mut rgb = if h < water_level {
            lerp3(WATER, SHORE, ((h - water_level + 0.04) / 0.04).clamp(0.0, 1.0))
        } else {
            let land = lerp3(SCRUB, CROP, m.clamp(0.0, 1.0));
            let land = lerp3(land, FOREST, ((m - 0.55) * 3.0).clamp(0.0, 1.0));
            lerp3(land, ROCK, ((h - 0.72) * 4.0).clamp(0.0, 1.0))
        };
        if h >= water_level {
            let px = ((u * parcel_cells as f32) as usize).min(parcel_cells - 1);
            let py = ((v * parcel_cells as f32) as usize).min(parcel_cells - 1);
            let tint = parcel_tint[py * parcel_cells + px];
            rgb = [0, 1, 2].map(|i| rgb[i] + tint[i] * m);
            for &(c, s, offset) in &roads {
                if ((u - 0.5) * c + (v - 0.5) * s + 0.5 - offset).abs() < road_width {
                    rgb = ROAD;
                }
            }
        }
        let g = (grain.sample(u, v) - 0.5) * 24.0;
        rgb.map(|c| ((c + g) * brightness).round().clamp(4.0, f32::from(BASE_CEILING)) as u8)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn bases_respect_the_channel_ceiling() {
        let img = satellite_base(&mut stream(3, "base"), 160);
        assert!(img.data().iter().all(|&c| c <= BASE_CEILING));
        // textured, not flat
        let distinct: std::collections::HashSet<_> = img.data().chunks(3).collect();
        assert!(distinct.len() > 500);
    }

    #[test]
    fn bases_are_deterministic() {
        let a = satellite_base(&mut stream(5, "base"), 64);
        let b = satellite_base(&mut stream(5, "base"), 64);
        assert_eq!(a, b);
    }
}
