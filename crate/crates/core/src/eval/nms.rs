use crate::maps::ContourPrediction;

const SIGMA: f64 = 1.0;

/// Separable Gaussian blur (σ = 1, radius 3) with clamped borders.
fn smooth(values: &[f32], w: usize, h: usize) -> Vec<f64> {
    let r = (3.0 * SIGMA).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * SIGMA * SIGMA)).exp()).collect();
    let norm: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= norm);
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] =
                (-r..=r).map(|d| k[(d + r) as usize] * values[y * w + clamp(x as isize + d, w)] as f64).sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = (-r..=r).map(|d| k[(d + r) as usize] * tmp[clamp(y as isize + d, h) * w + x]).sum();
        }
    }
    out
}

/// Bilinear sample at `(x, y)`; outside the map counts as 0.
fn sample(values: &[f32], w: usize, h: usize, x: f64, y: f64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let at = |xi: f64, yi: f64| {
        if xi < 0.0 || yi < 0.0 || xi >= w as f64 || yi >= h as f64 {
            0.0
        } else {
            values[yi as usize * w + xi as usize] as f64
        }
    };
    let mut acc = 0.0;
    for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
        for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
            let wt = wx * wy;
            if wt != 0.0 {
                acc += wt * at(x0 + dx, y0 + dy);
            }
        }
    }
    acc
}

/// Snaps tiny floating-point residue of the direction to exact zero so that
/// axis-aligned structures compare against exact pixel values.
fn snap(v: f64) -> f64 {
    if v.abs() < 1e-9 {
        0.0
    } else {
        v
    }
}

/// One suppression pass; returns the number of pixels zeroed.
fn pass(values: &mut [f32], w: usize, h: usize) -> usize {
    let s = smooth(values, w, h);
    let at = |x: isize, y: isize| s[y.clamp(0, h as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize];
    let src = values.to_vec();
    let mut zeroed = 0;
    for y in 0..h {
        for x in 0..w {
            let v = src[y * w + x] as f64;
            if v <= 0.0 {
                continue;
            }
            let (xi, yi) = (x as isize, y as isize);
            let hxx = at(xi + 1, yi) - 2.0 * at(xi, yi) + at(xi - 1, yi);
            let hyy = at(xi, yi + 1) - 2.0 * at(xi, yi) + at(xi, yi - 1);
            let hxy = (at(xi + 1, yi + 1) - at(xi + 1, yi - 1) - at(xi - 1, yi + 1) + at(xi - 1, yi - 1)) / 4.0;
            // Principal axis of the Hessian with the larger eigenvalue runs
            // along the ridge; the comparison direction is its normal.
            let theta = 0.5 * (2.0 * hxy).atan2(hxx - hyy);
            let normal = theta + std::f64::consts::FRAC_PI_2;
            let (dx, dy) = (snap(normal.cos()), snap(normal.sin()));
            let mut keep = true;
            for sgn in [1.0, -1.0] {
                let (ox, oy) = (sgn * dx, sgn * dy);
                let nb = sample(&src, w, h, x as f64 + ox, y as f64 + oy);
                // Ties go to the lexicographically smaller (row, column).
                let neighbour_is_later = oy > 0.0 || (oy == 0.0 && ox > 0.0);
                if v < nb || (v == nb && !neighbour_is_later) {
                    keep = false;
                    break;
                }
            }
            if !keep {
                values[y * w + x] = 0.0;
                zeroed += 1;
            }
        }
    }
    zeroed
}

/// Thins a soft contour map to ridges one pixel wide.
///
/// Orientation comes from the Hessian of the Gaussian-smoothed map; a pixel
/// survives if its raw value strictly exceeds the bilinearly interpolated
/// values one pixel away on either side along the normal. Passes repeat
/// until nothing changes, which makes the operator idempotent.
pub fn nms_thin(pred: &ContourPrediction) -> ContourPrediction {
    let (w, h) = (pred.width(), pred.height());
    let mut out = pred.clone();
    while pass(out.values_mut(), w, h) > 0 {}
    out
}
