use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::SCALE;
use crate::tensor::{Shape, Tensor};

use super::FrameSequence;

/// Supersampling grid per axis used when rendering a pixel.
const SUPERSAMPLE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    MovingGradient,
    ScrollingText,
    BouncingRect,
}

impl SynthKind {
    pub const ALL: [SynthKind; 3] = [
        SynthKind::MovingGradient,
        SynthKind::ScrollingText,
        SynthKind::BouncingRect,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SynthKind::MovingGradient => "moving_gradient",
            SynthKind::ScrollingText => "scrolling_text",
            SynthKind::BouncingRect => "bouncing_rect",
        }
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SynthKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown synthetic clip kind '{s}'")))
    }
}

/// Velocity component in HR pixels per frame. The magnitude stays in
/// `[0.6, 3.4]`, strictly between zero and one LR pixel.
fn velocity(rng: &mut ChaCha8Rng) -> f64 {
    let v: f64 = rng.gen_range(0.6..3.4);
    if rng.gen_bool(0.5) {
        -v
    } else {
        v
    }
}

fn color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.gen(), rng.gen(), rng.gen()]
}

trait Scene {
    fn sample(&self, x: f64, y: f64, t: usize) -> [f64; 3];
}

struct Wave {
    kx: f64,
    ky: f64,
    phase: f64,
    amp: [f64; 3],
}

struct Gradient {
    base: [f64; 3],
    ramp: [f64; 3],
    size: f64,
    waves: Vec<Wave>,
    v: (f64, f64),
}

impl Gradient {
    fn new(rng: &mut ChaCha8Rng, size: usize) -> Self {
        let waves = (0..4)
            .map(|_| {
                let wavelength: f64 = rng.gen_range(8.0..24.0);
                let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let k = std::f64::consts::TAU / wavelength;
                Wave {
                    kx: k * angle.cos(),
                    ky: k * angle.sin(),
                    phase: rng.gen_range(0.0..std::f64::consts::TAU),
                    amp: [
                        rng.gen_range(0.02..0.08),
                        rng.gen_range(0.02..0.08),
                        rng.gen_range(0.02..0.08),
                    ],
                }
            })
            .collect();
        Gradient {
            base: [
                rng.gen_range(0.3..0.7),
                rng.gen_range(0.3..0.7),
                rng.gen_range(0.3..0.7),
            ],
            ramp: [
                rng.gen_range(-0.15..0.15),
                rng.gen_range(-0.15..0.15),
                rng.gen_range(-0.15..0.15),
            ],
            size: size as f64,
            waves,
            v: (velocity(rng), velocity(rng)),
        }
    }
}

impl Scene for Gradient {
    fn sample(&self, x: f64, y: f64, t: usize) -> [f64; 3] {
        let (u, v) = (x - self.v.0 * t as f64, y - self.v.1 * t as f64);
        let ramp = ((u + v) / (2.0 * self.size) * std::f64::consts::TAU).sin();
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            *o = self.base[c] + self.ramp[c] * ramp;
            for w in &self.waves {
                *o += w.amp[c] * (w.kx * u + w.ky * v + w.phase).sin();
            }
        }
        out
    }
}

const GLYPH_W: usize = 5;
const GLYPH_H: usize = 7;

struct TextRow {
    glyphs: Vec<usize>,
    v: f64,
    offset: f64,
}

struct Text {
    font: Vec<[[bool; GLYPH_W]; GLYPH_H]>,
    cell: f64,
    rows: Vec<TextRow>,
    ink: [f64; 3],
    paper: [f64; 3],
}

impl Text {
    fn new(rng: &mut ChaCha8Rng, size: usize) -> Self {
        let font = (0..24)
            .map(|_| {
                let mut g = [[false; GLYPH_W]; GLYPH_H];
                for row in g.iter_mut() {
                    for px in row.iter_mut() {
                        *px = rng.gen_bool(0.45);
                    }
                }
                g
            })
            .collect();
        let cell = rng.gen_range(3.0..5.0);
        let row_h = (GLYPH_H + 2) as f64 * cell;
        let n_rows = (size as f64 / row_h).ceil() as usize + 1;
        let line_len = 12;
        let rows = (0..n_rows)
            .map(|_| TextRow {
                glyphs: (0..line_len).map(|_| rng.gen_range(0..24)).collect(),
                v: velocity(rng),
                offset: rng.gen_range(0.0..100.0),
            })
            .collect();
        let ink = color(rng);
        let mut paper = color(rng);
        // Keep contrast between ink and paper.
        if (0..3).map(|c| (ink[c] - paper[c]).abs()).sum::<f64>() < 0.9 {
            paper = ink.map(|v| 1.0 - v);
        }
        Text {
            font,
            cell,
            rows,
            ink,
            paper,
        }
    }
}

impl Scene for Text {
    fn sample(&self, x: f64, y: f64, t: usize) -> [f64; 3] {
        let gy = (y / self.cell).floor() as i64;
        let row_cells = (GLYPH_H + 2) as i64;
        let row = gy.div_euclid(row_cells) as usize % self.rows.len();
        let ly = gy.rem_euclid(row_cells) - 1;
        let r = &self.rows[row];
        let u = x + r.offset - r.v * t as f64;
        let gx = (u / self.cell).floor() as i64;
        let col_cells = (GLYPH_W + 1) as i64;
        let glyph = gx.div_euclid(col_cells) as usize % r.glyphs.len();
        let lx = gx.rem_euclid(col_cells);
        let on = (0..GLYPH_H as i64).contains(&ly)
            && lx < GLYPH_W as i64
            && self.font[r.glyphs[glyph]][ly as usize][lx as usize];
        if on {
            self.ink
        } else {
            self.paper
        }
    }
}

struct Rect {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    vx: f64,
    vy: f64,
    color: [f64; 3],
}

struct Bouncing {
    size: f64,
    rects: Vec<Rect>,
    stripe: f64,
    bg: [[f64; 3]; 2],
}

/// Position of a point moving at constant speed inside `[0, span]` with
/// reflections at both walls.
fn bounce(p0: f64, v: f64, t: usize, span: f64) -> f64 {
    if span <= 0.0 {
        return 0.0;
    }
    let p = (p0 + v * t as f64).rem_euclid(2.0 * span);
    if p > span {
        2.0 * span - p
    } else {
        p
    }
}

impl Bouncing {
    fn new(rng: &mut ChaCha8Rng, size: usize) -> Self {
        let s = size as f64;
        let rects = (0..rng.gen_range(3..6))
            .map(|_| {
                let w = rng.gen_range(0.15..0.4) * s;
                let h = rng.gen_range(0.15..0.4) * s;
                Rect {
                    x: rng.gen_range(0.0..s - w),
                    y: rng.gen_range(0.0..s - h),
                    w,
                    h,
                    vx: velocity(rng),
                    vy: velocity(rng),
                    color: color(rng),
                }
            })
            .collect();
        Bouncing {
            size: s,
            rects,
            stripe: rng.gen_range(3.0..7.0),
            bg: [color(rng), color(rng)],
        }
    }
}

impl Scene for Bouncing {
    fn sample(&self, x: f64, y: f64, t: usize) -> [f64; 3] {
        for r in self.rects.iter().rev() {
            let rx = bounce(r.x, r.vx, t, self.size - r.w);
            let ry = bounce(r.y, r.vy, t, self.size - r.h);
            if x >= rx && x < rx + r.w && y >= ry && y < ry + r.h {
                // Inner checker pattern moves with the rectangle.
                let cx = ((x - rx) / 4.0).floor() as i64;
                let cy = ((y - ry) / 4.0).floor() as i64;
                let k = if (cx + cy) % 2 == 0 { 1.0 } else { 0.6 };
                return r.color.map(|v| v * k);
            }
        }
        let band = ((x + 0.5 * y) / self.stripe).floor() as i64;
        self.bg[band.rem_euclid(2) as usize]
    }
}

fn render(scene: &dyn Scene, size: usize, t: usize) -> Tensor<f32> {
    let n = SUPERSAMPLE as f64;
    let mut out = Tensor::zeros(Shape::new(1, 3, size, size));
    for y in 0..size {
        for x in 0..size {
            let mut acc = [0.0f64; 3];
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let px = x as f64 + (sx as f64 + 0.5) / n;
                    let py = y as f64 + (sy as f64 + 0.5) / n;
                    let v = scene.sample(px, py, t);
                    for c in 0..3 {
                        acc[c] += v[c];
                    }
                }
            }
            for (c, a) in acc.iter().enumerate() {
                let v = (a / (n * n)).clamp(0.0, 1.0);
                out.set(0, c, y, x, v as f32);
            }
        }
    }
    out
}

/// Deterministic `size`x`size` HR clip whose content translates by a
/// non-integer number of LR pixels between frames.
pub fn synth_clip(kind: SynthKind, frames: usize, size: usize, seed: u64) -> Result<FrameSequence> {
    if frames == 0 {
        return Err(Error::Contract("synth_clip needs at least one frame".into()));
    }
    if size == 0 || size % SCALE != 0 {
        return Err(Error::Contract(format!(
            "synth_clip size {size} must be a positive multiple of {SCALE}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene: Box<dyn Scene> = match kind {
        SynthKind::MovingGradient => Box::new(Gradient::new(&mut rng, size)),
        SynthKind::ScrollingText => Box::new(Text::new(&mut rng, size)),
        SynthKind::BouncingRect => Box::new(Bouncing::new(&mut rng, size)),
    };
    let clip = (0..frames).map(|t| render(scene.as_ref(), size, t)).collect();
    FrameSequence::new(format!("{kind}_{seed}"), clip)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_frame_clip() {
        for kind in SynthKind::ALL {
            let c = synth_clip(kind, 1, 16, 3).unwrap();
            assert_eq!(c.len(), 1);
            assert_eq!(c.frame_shape(), Shape::new(1, 3, 16, 16));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        for kind in SynthKind::ALL {
            let a = synth_clip(kind, 3, 16, 9).unwrap();
            let b = synth_clip(kind, 3, 16, 9).unwrap();
            assert_eq!(a, b);
            let c = synth_clip(kind, 3, 16, 10).unwrap();
            assert_ne!(a.frames, c.frames);
        }
    }

    #[test]
    fn consecutive_frames_differ_and_stay_in_range() {
        for kind in SynthKind::ALL {
            for seed in 0..4 {
                let c = synth_clip(kind, 4, 32, seed).unwrap();
                for w in c.frames.windows(2) {
                    let diff = w[0]
                        .data()
                        .iter()
                        .zip(w[1].data())
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0f32, f32::max);
                    assert!(diff > 0.0, "{kind} seed {seed}");
                }
                for f in &c.frames {
                    let (lo, hi) = f.min_max();
                    assert!(lo >= 0.0 && hi <= 1.0);
                }
            }
        }
    }

    #[test]
    fn velocities_are_sub_lr_pixel() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let v = velocity(&mut rng).abs();
            assert!(v >= 0.6 && v < SCALE as f64);
        }
    }

    #[test]
    fn bounce_stays_inside() {
        for t in 0..200 {
            let p = bounce(3.0, 2.7, t, 10.0);
            assert!((0.0..=10.0).contains(&p));
        }
        assert_eq!(bounce(1.0, 1.0, 0, 10.0), 1.0);
        assert_eq!(bounce(9.0, 2.0, 1, 10.0), 9.0);
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(synth_clip(SynthKind::MovingGradient, 0, 16, 0).is_err());
        assert!(synth_clip(SynthKind::MovingGradient, 1, 18, 0).is_err());
        assert_eq!("bouncing_rect".parse::<SynthKind>().unwrap(), SynthKind::BouncingRect);
    }
}
