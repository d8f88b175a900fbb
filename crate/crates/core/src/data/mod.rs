//! Frame sequences, dataset manifests, degradation, metrics and synthetic
//! clips.

mod bicubic;
mod metrics;
mod synth;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use image::{ColorType, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::SCALE;
use crate::tensor::{Shape, Tensor};

pub use bicubic::{bicubic_downsample_x4, cubic_kernel, downsample_taps};
pub use metrics::{clip_psnrs, evaluate, evaluate_pairs, evaluate_pairs_with, psnr, ClipScore, EvalReport};
pub use synth::{synth_clip, SynthKind};

/// Ordered frames of one clip, each `(1, 3, H, W)` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    pub clip_id: String,
    pub frames: Vec<Tensor<f32>>,
    pub fps: Option<f32>,
}

impl FrameSequence {
    /// Validates shape homogeneity and clamps values to `[0, 1]`.
    pub fn new(clip_id: impl Into<String>, frames: Vec<Tensor<f32>>) -> Result<Self> {
        let clip_id = clip_id.into();
        let Some(first) = frames.first() else {
            return Err(Error::Contract(format!("clip '{clip_id}' has no frames")));
        };
        let s = first.shape();
        if s.batch != 1 || s.channels != 3 {
            return Err(Error::Shape {
                op: "FrameSequence::new",
                detail: format!("frames must be (1, 3, H, W), got {s}"),
            });
        }
        if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| f.shape() != s) {
            return Err(Error::Shape {
                op: "FrameSequence::new",
                detail: format!("clip '{clip_id}' frame {i} is {} but frame 0 is {s}", f.shape()),
            });
        }
        let frames = frames.iter().map(Tensor::clamp01).collect();
        Ok(FrameSequence {
            clip_id,
            frames,
            fps: None,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_shape(&self) -> Shape {
        self.frames[0].shape()
    }

    /// First `n` frames.
    pub fn prefix(&self, n: usize) -> Result<FrameSequence> {
        FrameSequence::new(self.clip_id.clone(), self.frames[..n.min(self.len())].to_vec())
    }
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:08}.png")
}

fn parse_frame_index(name: &str) -> Option<usize> {
    let digits = name.strip_prefix("frame_")?.strip_suffix(".png")?;
    if digits.len() != 8 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Frame indices present in `dir`, checked to be exactly `0..n`.
pub fn frame_indices(dir: &Path) -> Result<usize> {
    let mut found = BTreeSet::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if let Some(i) = entry.file_name().to_str().and_then(parse_frame_index) {
            found.insert(i);
        }
    }
    let Some(&max) = found.iter().next_back() else {
        return Err(Error::Manifest(format!("no frame_%08d.png files in {}", dir.display())));
    };
    let missing: Vec<usize> = (0..=max).filter(|i| !found.contains(i)).collect();
    if !missing.is_empty() {
        return Err(Error::Manifest(format!(
            "{} is missing frames {missing:?}",
            dir.display()
        )));
    }
    Ok(max + 1)
}

pub fn load_frame(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path)?;
    if img.color() != ColorType::Rgb8 {
        return Err(Error::Format(format!(
            "{} is {:?}, expected 8-bit RGB",
            path.display(),
            img.color()
        )));
    }
    let rgb = img.into_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let raw = rgb.as_raw();
    Ok(Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| {
        raw[(y * w + x) * 3 + c] as f32 / 255.0
    }))
}

/// Round half away from zero onto the 8-bit grid.
pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_frame(frame: &Tensor<f32>, path: &Path) -> Result<()> {
    let s = frame.shape();
    if s.batch != 1 || s.channels != 3 {
        return Err(Error::Shape {
            op: "save_frame",
            detail: format!("expected (1, 3, H, W), got {s}"),
        });
    }
    let mut img = RgbImage::new(s.width as u32, s.height as u32);
    for (x, y, px) in img.enumerate_pixels_mut() {
        for c in 0..3 {
            px[c] = to_u8(frame.at(0, c, y as usize, x as usize));
        }
    }
    img.save(path)?;
    Ok(())
}

pub fn load_clip(dir: &Path) -> Result<FrameSequence> {
    let n = frame_indices(dir)?;
    let frames = (0..n)
        .map(|i| load_frame(&dir.join(frame_file_name(i))))
        .collect::<Result<Vec<_>>>()?;
    let id = dir
        .file_name()
        .and_then(|s| s.to_str())
        .unwrap_or("clip")
        .to_string();
    FrameSequence::new(id, frames)
}

pub fn save_clip(seq: &FrameSequence, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, f) in seq.frames.iter().enumerate() {
        save_frame(f, &dir.join(frame_file_name(i)))?;
    }
    Ok(())
}

/// Temporally aligned LR/HR frames of one clip.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipPair {
    pub lr: FrameSequence,
    pub hr: FrameSequence,
}

impl ClipPair {
    pub fn new(lr: FrameSequence, hr: FrameSequence) -> Result<Self> {
        if lr.len() != hr.len() {
            return Err(Error::Manifest(format!(
                "clip '{}' has {} LR frames but {} HR frames",
                hr.clip_id,
                lr.len(),
                hr.len()
            )));
        }
        let (l, h) = (lr.frame_shape(), hr.frame_shape());
        if h.height != SCALE * l.height || h.width != SCALE * l.width {
            return Err(Error::Manifest(format!(
                "clip '{}': HR {}x{} is not {SCALE}x LR {}x{}",
                hr.clip_id, h.height, h.width, l.height, l.width
            )));
        }
        Ok(ClipPair { lr, hr })
    }

    /// Degrades an HR clip with the bicubic x4 pipeline.
    pub fn from_hr(hr: FrameSequence) -> Result<Self> {
        let lr = hr
            .frames
            .iter()
            .map(bicubic_downsample_x4)
            .collect::<Result<Vec<_>>>()?;
        let lr = FrameSequence::new(hr.clip_id.clone(), lr)?;
        ClipPair::new(lr, hr)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestClip {
    pub id: String,
    pub lr: PathBuf,
    pub hr: PathBuf,
    pub frames: usize,
}

/// `{ "scale": 4, "clips": [ {"id", "lr", "hr", "frames"} ] }`. Relative
/// directories resolve against the manifest's own directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub scale: usize,
    pub clips: Vec<ManifestClip>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut m: DatasetManifest = serde_json::from_str(&text)?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Checks directories, frame counts and the HR/LR size ratio without
    /// decoding every frame.
    pub fn validate(&self) -> Result<()> {
        if self.scale != SCALE {
            return Err(Error::Manifest(format!("scale must be {SCALE}, got {}", self.scale)));
        }
        if self.clips.is_empty() {
            return Err(Error::Manifest("manifest lists no clips".into()));
        }
        for c in &self.clips {
            let (lr, hr) = (self.resolve(&c.lr), self.resolve(&c.hr));
            for dir in [&lr, &hr] {
                if !dir.is_dir() {
                    return Err(Error::Manifest(format!(
                        "clip '{}': directory {} does not exist",
                        c.id,
                        dir.display()
                    )));
                }
                let n = frame_indices(dir)?;
                if n != c.frames {
                    return Err(Error::Manifest(format!(
                        "clip '{}': {} holds {n} frames, manifest says {}",
                        c.id,
                        dir.display(),
                        c.frames
                    )));
                }
            }
            let (lw, lh) = image::image_dimensions(lr.join(frame_file_name(0)))?;
            let (hw, hh) = image::image_dimensions(hr.join(frame_file_name(0)))?;
            if hw != lw * self.scale as u32 || hh != lh * self.scale as u32 {
                return Err(Error::Manifest(format!(
                    "clip '{}': HR {hw}x{hh} is not {}x LR {lw}x{lh}",
                    c.id, self.scale
                )));
            }
        }
        Ok(())
    }

    pub fn load_pairs(&self) -> Result<Vec<ClipPair>> {
        self.validate()?;
        self.clips
            .iter()
            .map(|c| {
                let mut lr = load_clip(&self.resolve(&c.lr))?;
                let mut hr = load_clip(&self.resolve(&c.hr))?;
                lr.clip_id = c.id.clone();
                hr.clip_id = c.id.clone();
                ClipPair::new(lr, hr)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_clip(n: usize, h: usize, w: usize) -> FrameSequence {
        let frames = (0..n)
            .map(|t| {
                Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| {
                    ((t * 37 + c * 91 + y * 13 + x * 7) % 256) as f32 / 255.0
                })
            })
            .collect();
        FrameSequence::new("grid", frames).unwrap()
    }

    #[test]
    fn save_load_roundtrip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let clip = grid_clip(3, 5, 7);
        save_clip(&clip, dir.path()).unwrap();
        let back = load_clip(dir.path()).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in clip.frames.iter().zip(&back.frames) {
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn full_scale_maps_to_one() {
        let dir = tempfile::tempdir().unwrap();
        let f = Tensor::full(Shape::new(1, 3, 2, 2), 1.0f32);
        save_frame(&f, &dir.path().join(frame_file_name(0))).unwrap();
        let back = load_clip(dir.path()).unwrap();
        assert!(back.frames[0].data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn empty_and_gapped_dirs_are_manifest_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_clip(dir.path()), Err(Error::Manifest(_))));
        let f = Tensor::full(Shape::new(1, 3, 2, 2), 0.5f32);
        for i in [0, 1, 3, 5] {
            save_frame(&f, &dir.path().join(frame_file_name(i))).unwrap();
        }
        match load_clip(dir.path()) {
            Err(Error::Manifest(m)) => assert!(m.contains("[2, 4]"), "{m}"),
            other => panic!("expected manifest error, got {other:?}"),
        }
    }

    #[test]
    fn non_rgb_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        image::GrayImage::new(4, 4).save(dir.path().join(frame_file_name(0))).unwrap();
        assert!(matches!(load_clip(dir.path()), Err(Error::Format(_))));
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(to_u8(0.5 / 255.0), 1);
        assert_eq!(to_u8(1.5 / 255.0), 2);
        assert_eq!(to_u8(-0.2), 0);
        assert_eq!(to_u8(1.3), 255);
    }

    #[test]
    fn frame_sequence_rejects_mixed_shapes() {
        let a = Tensor::<f32>::zeros(Shape::new(1, 3, 4, 4));
        let b = Tensor::<f32>::zeros(Shape::new(1, 3, 4, 5));
        assert!(FrameSequence::new("x", vec![a, b]).is_err());
        assert!(FrameSequence::new("x", vec![]).is_err());
    }

    #[test]
    fn manifest_roundtrip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let hr = grid_clip(2, 16, 8);
        let pair = ClipPair::from_hr(hr).unwrap();
        save_clip(&pair.hr, &dir.path().join("hr/a")).unwrap();
        save_clip(&pair.lr, &dir.path().join("lr/a")).unwrap();
        let m = DatasetManifest {
            scale: 4,
            clips: vec![ManifestClip {
                id: "a".into(),
                lr: "lr/a".into(),
                hr: "hr/a".into(),
                frames: 2,
            }],
            base_dir: PathBuf::new(),
        };
        let path = dir.path().join("manifest.json");
        m.save(&path).unwrap();
        let loaded = DatasetManifest::load(&path).unwrap();
        assert_eq!(loaded.clips, m.clips);
        loaded.validate().unwrap();
        let pairs = loaded.load_pairs().unwrap();
        assert_eq!(pairs[0].lr.frame_shape(), Shape::new(1, 3, 4, 2));

        let mut wrong = loaded.clone();
        wrong.clips[0].frames = 3;
        assert!(matches!(wrong.validate(), Err(Error::Manifest(_))));
        let text = r#"{"scale": 4, "clips": [], "extra": 1}"#;
        assert!(serde_json::from_str::<DatasetManifest>(text).is_err());
    }
}
