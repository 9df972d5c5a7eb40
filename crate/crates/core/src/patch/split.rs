use std::fmt::Write as _;

use rayon::prelude::*;

use super::{round_trip_psnr, Frame, PatchError};

#[derive(Debug, Clone, PartialEq)]
pub struct SplitConfig {
    /// Super-resolution factor.
    pub scale: usize,
    /// Side of the level-0 tiles, in pixels.
    pub base_patch: usize,
    /// PSNR threshold per level in dB, strictly descending.
    pub thresholds: Vec<f64>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            scale: 2,
            base_patch: 128,
            thresholds: vec![40.0, 30.0],
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<(), PatchError> {
        let bad = |m: String| Err(PatchError::Config(m));
        if !(2..=4).contains(&self.scale) {
            return bad(format!("scale must be 2, 3 or 4, got {}", self.scale));
        }
        if self.thresholds.windows(2).any(|w| w[0] <= w[1]) {
            return bad(format!("thresholds must be strictly descending: {:?}", self.thresholds));
        }
        let unit = (1usize << self.thresholds.len()) * self.scale;
        if self.base_patch == 0 || !self.base_patch.is_multiple_of(unit) {
            return bad(format!(
                "base patch {} is not divisible by 2^{} x {}",
                self.base_patch,
                self.thresholds.len(),
                self.scale
            ));
        }
        Ok(())
    }

    /// Nominal side length of patches at `level`.
    pub fn patch_side(&self, level: usize) -> usize {
        self.base_patch >> level
    }

    pub fn levels(&self) -> usize {
        self.thresholds.len() + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchEntry {
    pub frame: usize,
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
    pub level: usize,
    pub psnr_db: f64,
    pub route: usize,
}

/// Splits one frame. Tiles in the last column and row absorb any remainder
/// of the frame size.
pub fn split_frame(frame_id: usize, hr: &Frame, cfg: &SplitConfig) -> Result<Vec<PatchEntry>, PatchError> {
    cfg.validate()?;
    let l0 = cfg.base_patch;
    if hr.width < l0 || hr.height < l0 {
        return Err(PatchError::Config(format!(
            "frame {frame_id} is {}x{}, smaller than the {l0}-pixel base patch",
            hr.width, hr.height
        )));
    }
    let spans = |n: usize| -> Vec<(usize, usize)> {
        let k = n / l0;
        (0..k).map(|i| (i * l0, if i + 1 == k { n - i * l0 } else { l0 })).collect()
    };
    let mut out = Vec::new();
    for (y, h) in spans(hr.height) {
        for (x, w) in spans(hr.width) {
            refine(frame_id, hr, cfg, (x, y, w, h), 0, &mut out);
        }
    }
    Ok(out)
}

fn refine(frame: usize, hr: &Frame, cfg: &SplitConfig, rect: (usize, usize, usize, usize), level: usize, out: &mut Vec<PatchEntry>) {
    let (x, y, w, h) = rect;
    let score = round_trip_psnr(&hr.crop(x, y, w, h), cfg.scale);
    if level == cfg.thresholds.len() || score >= cfg.thresholds[level] {
        out.push(PatchEntry {
            frame,
            x,
            y,
            w,
            h,
            level,
            psnr_db: score,
            route: level,
        });
        return;
    }
    let (w1, h1) = (w / 2, h / 2);
    for (dy, hh) in [(0, h1), (h1, h - h1)] {
        for (dx, ww) in [(0, w1), (w1, w - w1)] {
            refine(frame, hr, cfg, (x + dx, y + dy, ww, hh), level + 1, out);
        }
    }
}

/// Splits frames in parallel; entries are ordered by frame.
pub fn split_frames(frames: &[Frame], cfg: &SplitConfig) -> Result<Vec<PatchEntry>, PatchError> {
    let per_frame: Vec<Vec<PatchEntry>> = frames
        .par_iter()
        .enumerate()
        .map(|(i, f)| split_frame(i, f, cfg))
        .collect::<Result<_, _>>()?;
    Ok(per_frame.into_iter().flatten().collect())
}

const HEADER: &str = "# frame x y w h level psnr_db route";

pub fn write_manifest(entries: &[PatchEntry]) -> String {
    let mut s = String::from(HEADER);
    s.push('\n');
    for e in entries {
        writeln!(s, "{} {} {} {} {} {} {} {}", e.frame, e.x, e.y, e.w, e.h, e.level, e.psnr_db, e.route).unwrap();
    }
    s
}

pub fn parse_manifest(text: &str) -> Result<Vec<PatchEntry>, PatchError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| PatchError::Manifest { line: i + 1, message };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 8 {
            return Err(err(format!("expected 8 fields, found {}", f.len())));
        }
        let int = |k: usize| f[k].parse::<usize>().map_err(|e| err(format!("field {}: {e}", k + 1)));
        out.push(PatchEntry {
            frame: int(0)?,
            x: int(1)?,
            y: int(2)?,
            w: int(3)?,
            h: int(4)?,
            level: int(5)?,
            psnr_db: f[6].parse().map_err(|e| err(format!("field 7: {e}")))?,
            route: int(7)?,
        });
    }
    Ok(out)
}
