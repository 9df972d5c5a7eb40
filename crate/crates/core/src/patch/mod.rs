//! Content-aware patch pipeline.
//!
//! Frames are split coarse to fine: a patch whose bicubic down/up round trip
//! already scores above the threshold of its level is kept, others are split
//! 2x2 and scored against the next threshold. Each split level maps to one
//! path of a routing graph.

mod report;
mod routing;
mod split;
pub mod synth;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use report::{report, OverheadReport};
pub use routing::{build_routing_graph, PathSpec, ROUTING_INPUT, ROUTING_OUTPUT, ROUTING_SELECTOR};
pub use split::{parse_manifest, split_frame, split_frames, write_manifest, PatchEntry, SplitConfig};

/// PSNR reported for identical regions.
pub const PSNR_CLAMP_DB: f64 = 100.0;

#[derive(Debug, Error)]
pub enum PatchError {
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    Dims(usize, usize, usize, usize),
    #[error("invalid split config: {0}")]
    Config(String),
    #[error("cannot read frame {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("cannot write frame {path}: {message}")]
    Write { path: PathBuf, message: String },
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// 8-bit RGB image, row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Frame {
    pub fn new(width: usize, height: usize) -> Frame {
        Frame {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Frame {
        Frame {
            width,
            height,
            data: rgb.iter().copied().cycle().take(width * height * 3).collect(),
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Frame {
        let mut out = Frame::new(w, h);
        for row in 0..h {
            let src = ((y + row) * self.width + x) * 3;
            out.data[row * w * 3..(row + 1) * w * 3].copy_from_slice(&self.data[src..src + w * 3]);
        }
        out
    }

    /// NCHW f32 tensor with values in [0, 1].
    pub fn to_tensor(&self) -> crate::tensor::Tensor {
        let plane = self.width * self.height;
        let mut v = vec![0f32; plane * 3];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                v[c * plane + i] = px[c] as f32 / 255.0;
            }
        }
        crate::tensor::Tensor::from_f32(vec![1, 3, self.height, self.width], v)
    }

    pub fn load(path: &Path) -> Result<Frame, PatchError> {
        let img = image::open(path).map_err(|e| PatchError::Read {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let rgb = img.to_rgb8();
        Ok(Frame {
            width: rgb.width() as usize,
            height: rgb.height() as usize,
            data: rgb.into_raw(),
        })
    }

    /// Writes PNG or binary PPM depending on the extension.
    pub fn save(&self, path: &Path) -> Result<(), PatchError> {
        let err = |e: image::ImageError| PatchError::Write {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("buffer matches dims");
        match path.extension().and_then(|e| e.to_str()) {
            Some("ppm") => {
                let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
                image::codecs::pnm::PnmEncoder::new(&mut out)
                    .with_subtype(image::codecs::pnm::PnmSubtype::Pixmap(image::codecs::pnm::SampleEncoding::Binary))
                    .encode(buf.as_raw().as_slice(), buf.width(), buf.height(), image::ExtendedColorType::Rgb8)
                    .map_err(err)
            }
            _ => buf.save_with_format(path, image::ImageFormat::Png).map_err(err),
        }
    }
}

/// PNG and PPM files in `dir`, in lexicographic order.
pub fn frame_paths(dir: &Path) -> Result<Vec<PathBuf>, PatchError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
                Some("png" | "ppm")
            )
        })
        .collect();
    paths.sort();
    Ok(paths)
}

/// Peak signal-to-noise ratio in dB (peak 255), clamped for identical input.
pub fn psnr(a: &Frame, b: &Frame) -> Result<f64, PatchError> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(PatchError::Dims(a.width, a.height, b.width, b.height));
    }
    let sse: u64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = x as i64 - y as i64;
            (d * d) as u64
        })
        .sum();
    if sse == 0 {
        return Ok(PSNR_CLAMP_DB);
    }
    let mse = sse as f64 / a.data.len() as f64;
    Ok(10.0 * (255.0f64 * 255.0 / mse).log10())
}

fn cubic(x: f32) -> f32 {
    const A: f32 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Source taps and weights for each output coordinate along one axis.
fn taps(input: usize, output: usize) -> Vec<([usize; 4], [f32; 4])> {
    let scale = input as f32 / output as f32;
    (0..output)
        .map(|o| {
            let src = (o as f32 + 0.5) * scale - 0.5;
            let base = src.floor();
            let t = src - base;
            let mut idx = [0; 4];
            let mut w = [0.0; 4];
            for k in 0..4 {
                let i = base as i64 + k as i64 - 1;
                idx[k] = i.clamp(0, input as i64 - 1) as usize;
                w[k] = cubic(t - (k as f32 - 1.0));
            }
            (idx, w)
        })
        .collect()
}

/// Catmull-Rom resampling to `width` x `height` with half-pixel centers and
/// clamped edges.
pub fn bicubic_resize(f: &Frame, width: usize, height: usize) -> Frame {
    let (iw, ih) = (f.width, f.height);
    let tx = taps(iw, width);
    let ty = taps(ih, height);
    // Horizontal pass into f32 rows.
    let mut mid = vec![0f32; width * ih * 3];
    for y in 0..ih {
        for (x, (idx, w)) in tx.iter().enumerate() {
            for c in 0..3 {
                let mut acc = 0f32;
                for k in 0..4 {
                    acc += w[k] * f.data[(y * iw + idx[k]) * 3 + c] as f32;
                }
                mid[(y * width + x) * 3 + c] = acc;
            }
        }
    }
    let mut out = Frame::new(width, height);
    for (y, (idx, w)) in ty.iter().enumerate() {
        for x in 0..width {
            for c in 0..3 {
                let mut acc = 0f32;
                for k in 0..4 {
                    acc += w[k] * mid[(idx[k] * width + x) * 3 + c];
                }
                out.data[(y * width + x) * 3 + c] = acc.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    out
}

/// Resamples by the rational factor `num / den` per axis (at least 1 pixel).
pub fn bicubic_scale(f: &Frame, num: usize, den: usize) -> Frame {
    let w = ((f.width * num) as f64 / den as f64).round().max(1.0) as usize;
    let h = ((f.height * num) as f64 / den as f64).round().max(1.0) as usize;
    bicubic_resize(f, w, h)
}

/// Surrogate quality score: PSNR of the patch against its bicubic
/// down-by-`scale`, up-by-`scale` round trip.
pub fn round_trip_psnr(patch: &Frame, scale: usize) -> f64 {
    let lw = (patch.width as f64 / scale as f64).round().max(1.0) as usize;
    let lh = (patch.height as f64 / scale as f64).round().max(1.0) as usize;
    let lr = bicubic_resize(patch, lw, lh);
    let back = bicubic_resize(&lr, patch.width, patch.height);
    psnr(patch, &back).expect("round trip keeps dims")
}
