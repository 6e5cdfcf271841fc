//! Straight-line Canny reference: plain nested loops over `Vec<Vec<f64>>`,
//! slope-ratio direction binning, and fixed-point hysteresis sweeps.

pub fn canny_reference(img: &[Vec<f32>], sigma: f64, low: f64, high: f64) -> Vec<Vec<u8>> {
    let h = img.len();
    let w = img[0].len();
    let x0 = img[0][0] as f64;
    let g: Vec<Vec<f64>> = img
        .iter()
        .map(|row| row.iter().map(|&p| p as f64 - x0).collect())
        .collect();

    let r = (3.0 * sigma).ceil().max(1.0) as i64;
    let mut kernel = Vec::new();
    for i in -r..=r {
        kernel.push((-((i * i) as f64) / (2.0 * sigma * sigma)).exp());
    }
    let total: f64 = kernel.iter().sum();
    for k in kernel.iter_mut() {
        *k /= total;
    }
    let ci = |i: i64, n: usize| -> usize {
        if i < 0 {
            0
        } else if i >= n as i64 {
            n - 1
        } else {
            i as usize
        }
    };

    let mut horiz = vec![vec![0.0f64; w]; h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for t in 0..kernel.len() {
                acc += kernel[t] * g[y][ci(x as i64 + t as i64 - r, w)];
            }
            horiz[y][x] = acc;
        }
    }
    let mut s = vec![vec![0.0f64; w]; h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for t in 0..kernel.len() {
                acc += kernel[t] * horiz[ci(y as i64 + t as i64 - r, h)][x];
            }
            s[y][x] = acc;
        }
    }

    let at = |y: i64, x: i64| s[ci(y, h)][ci(x, w)];
    let mut gx = vec![vec![0.0f64; w]; h];
    let mut gy = vec![vec![0.0f64; w]; h];
    let mut mag = vec![vec![0.0f64; w]; h];
    let mut biggest = 0.0f64;
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let a = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
            let b = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
            let (yy, xx) = (y as usize, x as usize);
            gx[yy][xx] = a;
            gy[yy][xx] = b;
            mag[yy][xx] = (a * a + b * b).sqrt();
            if mag[yy][xx] > biggest {
                biggest = mag[yy][xx];
            }
        }
    }
    let mut out = vec![vec![0u8; w]; h];
    if biggest == 0.0 {
        return out;
    }

    let t1 = (22.5f64).to_radians().tan();
    let t2 = (67.5f64).to_radians().tan();
    let mut nms = vec![vec![0.0f64; w]; h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let m = mag[y][x];
            if m == 0.0 {
                continue;
            }
            let (dy, dx): (i64, i64) = if gx[y][x] == 0.0 {
                (1, 0)
            } else {
                let slope = gy[y][x] / gx[y][x];
                if slope.abs() < t1 {
                    (0, 1)
                } else if slope.abs() >= t2 {
                    (1, 0)
                } else if slope > 0.0 {
                    (1, 1)
                } else {
                    (1, -1)
                }
            };
            let n1 = mag[(y as i64 + dy) as usize][(x as i64 + dx) as usize];
            let n2 = mag[(y as i64 - dy) as usize][(x as i64 - dx) as usize];
            if m >= n1 && m >= n2 {
                nms[y][x] = m;
            }
        }
    }

    let hi = high * biggest;
    let lo = low * biggest;
    for y in 0..h {
        for x in 0..w {
            if nms[y][x] > 0.0 && nms[y][x] >= hi {
                out[y][x] = 1;
            }
        }
    }
    loop {
        let mut changed = false;
        for y in 0..h {
            for x in 0..w {
                if out[y][x] == 1 || nms[y][x] == 0.0 || nms[y][x] < lo {
                    continue;
                }
                let mut linked = false;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                        if ny >= 0 && nx >= 0 && ny < h as i64 && nx < w as i64 && out[ny as usize][nx as usize] == 1 {
                            linked = true;
                        }
                    }
                }
                if linked {
                    out[y][x] = 1;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    out
}

/// Random test image: either uniform noise or a few filled discs over a
/// random background.
pub fn random_image(seed: u64) -> Vec<Vec<f32>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let h = rng.gen_range(5..=32);
    let w = rng.gen_range(5..=32);
    if rng.gen_bool(0.3) {
        return (0..h).map(|_| (0..w).map(|_| rng.gen::<f32>()).collect()).collect();
    }
    let mut img = vec![vec![rng.gen::<f32>(); w]; h];
    for _ in 0..rng.gen_range(1..=4) {
        let (cy, cx) = (rng.gen_range(0.0..h as f32), rng.gen_range(0.0..w as f32));
        let rad = rng.gen_range(1.5..8.0f32);
        let val = rng.gen::<f32>();
        for (y, row) in img.iter_mut().enumerate() {
            for (x, p) in row.iter_mut().enumerate() {
                if (y as f32 - cy).powi(2) + (x as f32 - cx).powi(2) <= rad * rad {
                    *p = val;
                }
            }
        }
    }
    img
}
