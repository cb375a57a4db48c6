//! Procedural textures: diamond-square plasma and fractal value noise.

use rand::Rng;

use crate::imaging::Plane;
use crate::rng::StreamRng;

/// Diamond-square plasma on a `size × size` torus (`size` a power of two),
/// rescaled to `[0, 1]`. The random displacement starts at 100 and is
/// divided by `decay` after every level.
pub fn plasma_fractal(size: usize, decay: f64, rng: &mut StreamRng) -> Vec<f64> {
    assert!(size.is_power_of_two() && size >= 2);
    let n = size;
    let idx = |y: usize, x: usize| (y % n) * n + (x % n);
    let mut map = vec![0.0f64; n * n];
    let mut step = n;
    let mut wibble = 100.0f64;
    while step >= 2 {
        let half = step / 2;
        // squares: centre of each cell from its four corners
        let mut y = 0;
        while y < n {
            let mut x = 0;
            while x < n {
                let sum = map[idx(y, x)] + map[idx(y + step, x)] + map[idx(y, x + step)] + map[idx(y + step, x + step)];
                map[idx(y + half, x + half)] = sum / 4.0 + wibble * rng.random_range(-wibble..wibble);
                x += step;
            }
            y += step;
        }
        // diamonds on the top edges and left edges of each cell
        let mut y = 0;
        while y < n {
            let mut x = 0;
            while x < n {
                let (yy, xx) = (y + n, x + n);
                let top = map[idx(yy, xx)]
                    + map[idx(yy, xx + step)]
                    + map[idx(yy + half, xx + half)]
                    + map[idx(yy - half, xx + half)];
                map[idx(y, x + half)] = top / 4.0 + wibble * rng.random_range(-wibble..wibble);
                let left = map[idx(yy, xx)]
                    + map[idx(yy + step, xx)]
                    + map[idx(yy + half, xx + half)]
                    + map[idx(yy + half, xx - half)];
                map[idx(y + half, x)] = left / 4.0 + wibble * rng.random_range(-wibble..wibble);
                x += step;
            }
            y += step;
        }
        step /= 2;
        wibble /= decay;
    }
    let min = map.iter().copied().fold(f64::INFINITY, f64::min);
    let max = map.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (max - min).max(f64::MIN_POSITIVE);
    map.iter().map(|v| (v - min) / span).collect()
}

/// Sum of `octaves` layers of bilinearly interpolated lattice noise, the
/// first with `base_cells` cells across the larger side, each following
/// layer at twice the frequency and `persistence` times the amplitude.
/// Rescaled to `[0, 1]`.
pub fn value_noise(width: usize, height: usize, base_cells: usize, octaves: usize, persistence: f64, rng: &mut StreamRng) -> Plane {
    let mut acc = vec![0.0f64; width * height];
    let side = width.max(height).max(1) as f64;
    let mut amp = 1.0;
    let mut cells = base_cells.max(1);
    for _ in 0..octaves {
        let cell = side / cells as f64;
        let gw = (width as f64 / cell).ceil() as usize + 2;
        let gh = (height as f64 / cell).ceil() as usize + 2;
        let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.random::<f64>()).collect();
        for y in 0..height {
            for x in 0..width {
                let fx = (x as f64 + 0.5) / cell;
                let fy = (y as f64 + 0.5) / cell;
                let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
                let (tx, ty) = (smooth(fx - x0 as f64), smooth(fy - y0 as f64));
                let l = |i: usize, j: usize| lattice[j * gw + i];
                let top = l(x0, y0) + (l(x0 + 1, y0) - l(x0, y0)) * tx;
                let bottom = l(x0, y0 + 1) + (l(x0 + 1, y0 + 1) - l(x0, y0 + 1)) * tx;
                acc[y * width + x] += amp * (top + (bottom - top) * ty);
            }
        }
        amp *= persistence;
        cells *= 2;
    }
    let min = acc.iter().copied().fold(f64::INFINITY, f64::min);
    let max = acc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (max - min).max(f64::MIN_POSITIVE);
    Plane {
        width,
        height,
        data: acc.iter().map(|v| ((v - min) / span) as f32).collect(),
    }
}

#[inline]
fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}
