//! Seeded synthetic frames: a flat background with a few textured
//! rectangles of mixed frequency.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Frame;

/// Upper bound on the share of the frame covered by textured rectangles.
pub const MAX_TEXTURED: f64 = 0.4;

#[derive(Debug, Clone, Copy)]
enum Texture {
    Noise,
    Stripes { period: f32, angle: f32 },
    Checker { cell: usize },
    Gradient,
}

fn paint(f: &mut Frame, rect: (usize, usize, usize, usize), tex: Texture, rng: &mut ChaCha8Rng) {
    let (x0, y0, w, h) = rect;
    let tint: [u8; 3] = [rng.gen(), rng.gen(), rng.gen()];
    for y in y0..y0 + h {
        for x in x0..x0 + w {
            let (u, v) = ((x - x0) as f32, (y - y0) as f32);
            let px = match tex {
                Texture::Noise => [rng.gen(), rng.gen(), rng.gen()],
                Texture::Stripes { period, angle } => {
                    let t = (u * angle.cos() + v * angle.sin()) * std::f32::consts::TAU / period;
                    let a = 0.5 + 0.5 * t.sin();
                    tint.map(|c| (c as f32 * a + (255.0 - c as f32) * (1.0 - a)).round() as u8)
                }
                Texture::Checker { cell } => {
                    if ((x - x0) / cell + (y - y0) / cell) % 2 == 0 {
                        tint
                    } else {
                        tint.map(|c| 255 - c)
                    }
                }
                Texture::Gradient => {
                    let a = (u + v) / (w + h) as f32;
                    tint.map(|c| (c as f32 * a).round() as u8)
                }
            };
            f.set_pixel(x, y, px);
        }
    }
}

/// One frame from `rng`. Rectangles are drawn until the next one would push
/// the covered share past [`MAX_TEXTURED`], so at least 60% of the pixels
/// keep the background colour.
pub fn synth_frame(rng: &mut ChaCha8Rng, width: usize, height: usize) -> Frame {
    let bg: [u8; 3] = [rng.gen(), rng.gen(), rng.gen()];
    let mut f = Frame::filled(width, height, bg);
    let budget = (MAX_TEXTURED * (width * height) as f64) as usize;
    let mut used = 0;
    for _ in 0..rng.gen_range(1..=4) {
        let w = rng.gen_range(width / 8..=width / 2).max(1);
        let h = rng.gen_range(height / 8..=height / 2).max(1);
        if used + w * h > budget {
            break;
        }
        used += w * h;
        let x = rng.gen_range(0..=width - w);
        let y = rng.gen_range(0..=height - h);
        let tex = match rng.gen_range(0..4) {
            0 => Texture::Noise,
            1 => Texture::Stripes {
                period: rng.gen_range(2.0..16.0),
                angle: rng.gen_range(0.0..std::f32::consts::PI),
            },
            2 => Texture::Checker { cell: rng.gen_range(1..=8) },
            _ => Texture::Gradient,
        };
        paint(&mut f, (x, y, w, h), tex, rng);
    }
    f
}

/// `n` frames from a generator seeded with `seed`.
pub fn synth_frames(seed: u64, n: usize, width: usize, height: usize) -> Vec<Frame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| synth_frame(&mut rng, width, height)).collect()
}

/// Share of pixels whose 3x3 neighbourhood (clipped at the border) is a
/// single colour.
pub fn flat_fraction(f: &Frame) -> f64 {
    if f.width == 0 || f.height == 0 {
        return 0.0;
    }
    let mut flat = 0usize;
    for y in 0..f.height {
        for x in 0..f.width {
            let c = f.pixel(x, y);
            let same = (y.saturating_sub(1)..(y + 2).min(f.height))
                .all(|yy| (x.saturating_sub(1)..(x + 2).min(f.width)).all(|xx| f.pixel(xx, yy) == c));
            flat += same as usize;
        }
    }
    flat as f64 / (f.width * f.height) as f64
}
