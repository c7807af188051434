use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;

/// Pinhole scale of the obstacle body: its apparent side is `k / d` of the frame.
pub const OBSTACLE_SCALE_M: f64 = 8.0;
/// Pinhole scale of the rear window, a darker square centred on the body. It
/// keeps the image informative once the body fills the frame at short range.
pub const WINDOW_SCALE_M: f64 = 0.6;
pub const BACKGROUND: f64 = 0.2;
pub const MAX_RENDER_DISTANCE: f64 = 120.0;

const MIN_FRACTION: f64 = 0.05;
const MAX_FRACTION: f64 = 0.95;
const WINDOW_INTENSITY: f64 = 0.0;

/// Nuisance parameters of one rendered frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneParams {
    pub image_side: usize,
    /// Precipitation analogue in [0, 1]; pixel noise amplitude is `0.1 × noise_level`.
    pub noise_level: f64,
    /// Scene illumination in [0.5, 1]; the obstacle body renders at this
    /// intensity and the background at `BACKGROUND × brightness`.
    pub brightness: f64,
    pub seed: u64,
}

impl SceneParams {
    pub fn clean(image_side: usize) -> Self {
        Self {
            image_side,
            noise_level: 0.0,
            brightness: 1.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_side < 8 {
            return Err(Error::Config(format!(
                "image side must be at least 8 pixels, got {}",
                self.image_side
            )));
        }
        if !(0.0..=1.0).contains(&self.noise_level) {
            return Err(Error::Config(format!(
                "noise level {} outside [0, 1]",
                self.noise_level
            )));
        }
        if !(0.5..=1.0).contains(&self.brightness) {
            return Err(Error::Config(format!(
                "brightness {} outside [0.5, 1]",
                self.brightness
            )));
        }
        Ok(())
    }
}

fn apparent_fraction(scale: f64, d: f64) -> f64 {
    if d <= 0.0 {
        MAX_FRACTION
    } else {
        (scale / d).clamp(MIN_FRACTION, MAX_FRACTION)
    }
}

/// Blends an axis-aligned rectangle into `img`, weighting each pixel by the
/// area it shares with the rectangle.
fn fill_rect(img: &mut [f64], side: usize, x0: f64, x1: f64, y0: f64, y1: f64, value: f64) {
    let overlap = |a0: f64, a1: f64, p: usize| (a1.min(p as f64 + 1.0) - a0.max(p as f64)).max(0.0);
    let cols = x0.floor().max(0.0) as usize..(x1.ceil() as usize).min(side);
    for r in (y0.floor().max(0.0) as usize)..(y1.ceil() as usize).min(side) {
        let oy = overlap(y0, y1, r);
        for c in cols.clone() {
            let cov = oy * overlap(x0, x1, c);
            let px = &mut img[r * side + c];
            *px = *px * (1.0 - cov) + value * cov;
        }
    }
}

/// Separable `[1, 2, 1] / 4` lens blur with replicated borders. Smooths the
/// kinks where an edge crosses a pixel boundary.
fn blur(img: &[f64], side: usize) -> Vec<f64> {
    let at = |v: &[f64], r: usize, c: usize| v[r * side + c];
    let mut tmp = vec![0.0; img.len()];
    for r in 0..side {
        for c in 0..side {
            let l = at(img, r, c.saturating_sub(1));
            let rr = at(img, r, (c + 1).min(side - 1));
            tmp[r * side + c] = 0.25 * l + 0.5 * at(img, r, c) + 0.25 * rr;
        }
    }
    let mut out = vec![0.0; img.len()];
    for r in 0..side {
        for c in 0..side {
            let u = at(&tmp, r.saturating_sub(1), c);
            let d = at(&tmp, (r + 1).min(side - 1), c);
            out[r * side + c] = 0.25 * u + 0.5 * at(&tmp, r, c) + 0.25 * d;
        }
    }
    out
}

/// Renders the lead vehicle at distance `d` metres as a flattened
/// `image_side²` grayscale image in [0, 1].
///
/// The body is a centred square of side `image_side × clamp(8 / d, 0.05, 0.95)`
/// at intensity `brightness` over a background of `0.2 × brightness`, with a
/// centred black window of side `image_side × clamp(0.6 / d, 0.05, 0.95)`.
/// Edges are area-weighted and the frame passes through a small lens blur
/// before illumination is applied. Uniform noise of amplitude `0.1 × noise_level`, drawn from
/// `params.seed`, is added and the result clamped.
pub fn render_scene(d: f64, params: &SceneParams) -> Result<Vec<f64>> {
    params.validate()?;
    if !(0.0..=MAX_RENDER_DISTANCE).contains(&d) {
        return Err(Error::Config(format!(
            "render distance {d} outside [0, {MAX_RENDER_DISTANCE}]"
        )));
    }
    let n = params.image_side;
    let side = n as f64;
    let centre = side / 2.0;
    let mut sharp = vec![BACKGROUND; n * n];

    let body = side * apparent_fraction(OBSTACLE_SCALE_M, d);
    let half = body / 2.0;
    fill_rect(&mut sharp, n, centre - half, centre + half, centre - half, centre + half, 1.0);

    let half = side * apparent_fraction(WINDOW_SCALE_M, d) / 2.0;
    fill_rect(&mut sharp, n, centre - half, centre + half, centre - half, centre + half, WINDOW_INTENSITY);

    let mut img = blur(&sharp, n);
    img.iter_mut().for_each(|v| *v *= params.brightness);

    let amplitude = 0.1 * params.noise_level;
    if amplitude > 0.0 {
        let mut rng = seed::rng(params.seed);
        for px in &mut img {
            *px += rng.random_range(-amplitude..=amplitude);
        }
    }
    img.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bright_pixels(img: &[f64], threshold: f64) -> usize {
        img.iter().filter(|&&v| v > threshold).count()
    }

    #[test]
    fn half_frame_obstacle_is_eight_pixels_wide() {
        let p = SceneParams::clean(16);
        let img = render_scene(16.0, &p).unwrap();
        // Row 5 crosses the body clear of the window.
        let row = &img[5 * 16..6 * 16];
        let lit: Vec<usize> = (0..16).filter(|&c| row[c] > 0.6).collect();
        assert_eq!(lit, (4..12).collect::<Vec<_>>());
    }

    #[test]
    fn blur_preserves_flat_images_and_mass() {
        let flat = vec![0.3; 64];
        assert!(blur(&flat, 8).iter().all(|v| (v - 0.3).abs() < 1e-15));
        let mut impulse = vec![0.0; 64];
        impulse[3 * 8 + 4] = 1.0;
        let out = blur(&impulse, 8);
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(out[3 * 8 + 4], 0.25);
        assert_eq!(out[2 * 8 + 3], 0.0625);
    }

    #[test]
    fn rendering_is_deterministic() {
        for noise in [0.0, 0.7] {
            let p = SceneParams {
                image_side: 16,
                noise_level: noise,
                brightness: 0.8,
                seed: 99,
            };
            let a = render_scene(37.5, &p).unwrap();
            let b = render_scene(37.5, &p).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn closer_obstacles_look_bigger() {
        let p = SceneParams::clean(16);
        let near = render_scene(10.0, &p).unwrap();
        let far = render_scene(100.0, &p).unwrap();
        assert!(bright_pixels(&near, 0.5) > bright_pixels(&far, 0.5));
        let mass = |img: &[f64]| img.iter().sum::<f64>();
        assert!(mass(&near) > mass(&far));
    }

    #[test]
    fn short_range_stays_distinguishable() {
        let p = SceneParams::clean(16);
        let a = render_scene(2.0, &p).unwrap();
        let b = render_scene(3.0, &p).unwrap();
        let diff: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        assert!(diff > 1.0, "2 m and 3 m frames differ by only {diff}");
    }

    #[test]
    fn output_is_in_unit_range_and_contract_is_checked() {
        let p = SceneParams {
            image_side: 12,
            noise_level: 1.0,
            brightness: 1.0,
            seed: 5,
        };
        let img = render_scene(5.0, &p).unwrap();
        assert_eq!(img.len(), 144);
        assert!(img.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(render_scene(121.0, &p).is_err());
        assert!(render_scene(-1.0, &p).is_err());
        assert!(render_scene(5.0, &SceneParams::clean(4)).is_err());
    }
}
