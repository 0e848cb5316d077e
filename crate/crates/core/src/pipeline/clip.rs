//! Clip ingestion and PNG frame I/O.

use std::path::{Path, PathBuf};

use image::imageops::FilterType;

use crate::colorspace::{luminance_of, rgb_to_lab, LabImage};
use crate::error::{Error, Result};
use crate::tensor::{DType, Tensor};

/// Frames of one clip as lightness maps plus the colour references.
#[derive(Debug, Clone)]
pub struct Clip {
    /// `H×W×1` lightness in `[0, 100]`.
    pub frames: Vec<Tensor>,
    pub ids: Vec<String>,
    pub ref_first: LabImage,
    /// Absent in single-reference mode.
    pub ref_last: Option<LabImage>,
    /// File stems of the references, used to find their sidecar files.
    pub ref_ids: (String, Option<String>),
}

impl Clip {
    pub fn new(frames: Vec<Tensor>, ids: Vec<String>, ref_first: LabImage, ref_last: Option<LabImage>) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::invalid(format!(
                "a clip needs at least 2 frames, got {}",
                frames.len()
            )));
        }
        if ids.len() != frames.len() {
            return Err(Error::invalid("one id per frame required"));
        }
        let hw = frames[0].hw()?;
        for (f, id) in frames.iter().zip(&ids) {
            if f.hw()? != hw || f.channels() != 1 {
                return Err(Error::DimensionMismatch {
                    what: format!("frame {id}"),
                    expected: vec![hw.0, hw.1, 1],
                    found: f.shape().to_vec(),
                });
            }
        }
        for r in std::iter::once(&ref_first).chain(ref_last.as_ref()) {
            if r.hw() != hw {
                return Err(Error::DimensionMismatch {
                    what: "reference image".into(),
                    expected: vec![hw.0, hw.1, 3],
                    found: vec![r.hw().0, r.hw().1, 3],
                });
            }
        }
        let ref_ids = (
            "ref_first".to_string(),
            ref_last.as_ref().map(|_| "ref_last".to_string()),
        );
        Ok(Clip {
            frames,
            ids,
            ref_first,
            ref_last,
            ref_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn hw(&self) -> (usize, usize) {
        self.frames[0].hw().expect("validated on construction")
    }
}

fn image_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

/// Decode a PNG into `H×W×3` RGB in `[0, 1]`, optionally resized to
/// `(width, height)`.
pub fn read_rgb(path: &Path, resize: Option<(u32, u32)>) -> Result<Tensor> {
    let mut img = image::open(path).map_err(|e| image_err(path, e))?.to_rgb8();
    if let Some((w, h)) = resize {
        if img.dimensions() != (w, h) {
            img = image::imageops::resize(&img, w, h, FilterType::Triangle);
        }
    }
    let (w, h) = img.dimensions();
    let data = img.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
    Tensor::new(&[h as usize, w as usize, 3], data, DType::F32)
}

/// Encode `H×W×3` RGB in `[0, 1]` as an 8-bit PNG.
pub fn write_rgb(path: &Path, rgb: &Tensor) -> Result<()> {
    let (h, w) = rgb.hw()?;
    if rgb.channels() != 3 {
        return Err(Error::invalid(format!(
            "write_rgb expects H×W×3, got {:?}",
            rgb.shape()
        )));
    }
    let bytes: Vec<u8> = rgb
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let img = image::RgbImage::from_raw(w as u32, h as u32, bytes).expect("buffer sized from shape");
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| image_err(path, e))
}

/// PNG files in `dir`, sorted by file name.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| image_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::invalid(format!("no PNG frames in {}", dir.display())));
    }
    Ok(files)
}

pub fn frame_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Read every frame of `dir` at a common size, reporting the first file
/// whose size differs.
pub fn read_frames(dir: &Path, resize: Option<(u32, u32)>) -> Result<(Vec<String>, Vec<Tensor>)> {
    let files = list_frames(dir)?;
    let mut ids = Vec::with_capacity(files.len());
    let mut frames: Vec<Tensor> = Vec::with_capacity(files.len());
    for path in &files {
        let rgb = read_rgb(path, resize)?;
        if let Some(first) = frames.first() {
            if first.shape() != rgb.shape() {
                return Err(Error::DimensionMismatch {
                    what: format!("frame {}", path.display()),
                    expected: first.shape().to_vec(),
                    found: rgb.shape().to_vec(),
                });
            }
        }
        ids.push(frame_id(path));
        frames.push(rgb);
    }
    Ok((ids, frames))
}

fn read_reference(path: &Path, resize: Option<(u32, u32)>, hw: (usize, usize)) -> Result<LabImage> {
    let rgb = read_rgb(path, resize)?;
    if rgb.hw()? != hw {
        return Err(Error::DimensionMismatch {
            what: format!("reference {}", path.display()),
            expected: vec![hw.0, hw.1, 3],
            found: rgb.shape().to_vec(),
        });
    }
    rgb_to_lab(&rgb)
}

/// Load the frames of `frames_dir` as lightness plus one or two references.
pub fn load_clip(
    frames_dir: &Path,
    ref_first: &Path,
    ref_last: Option<&Path>,
    resize: Option<(u32, u32)>,
) -> Result<Clip> {
    let (ids, rgb) = read_frames(frames_dir, resize)?;
    let hw = rgb[0].hw()?;
    let frames = rgb.iter().map(luminance_of).collect::<Result<Vec<_>>>()?;
    let first = read_reference(ref_first, resize, hw)?;
    let last = ref_last.map(|p| read_reference(p, resize, hw)).transpose()?;
    let mut clip = Clip::new(frames, ids, first, last)?;
    clip.ref_ids = (frame_id(ref_first), ref_last.map(frame_id));
    Ok(clip)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_solid(path: &Path, w: u32, h: u32, rgb: [u8; 3]) {
        image::RgbImage::from_pixel(w, h, image::Rgb(rgb)).save(path).unwrap();
    }

    #[test]
    fn loads_toy_clip() {
        let dir = tempfile::tempdir().unwrap();
        let frames = dir.path().join("frames");
        std::fs::create_dir(&frames).unwrap();
        for i in 0..4 {
            write_solid(&frames.join(format!("{i:03}.png")), 8, 6, [40 * i as u8, 90, 200]);
        }
        let rf = dir.path().join("first.png");
        let rl = dir.path().join("last.png");
        write_solid(&rf, 8, 6, [255, 0, 0]);
        write_solid(&rl, 8, 6, [0, 0, 255]);
        let clip = load_clip(&frames, &rf, Some(&rl), None).unwrap();
        assert_eq!(clip.len(), 4);
        assert_eq!(clip.ids, vec!["000", "001", "002", "003"]);
        assert_eq!(clip.hw(), (6, 8));
        assert_eq!(clip.ref_ids, ("first".to_string(), Some("last".to_string())));

        let resized = load_clip(&frames, &rf, None, Some((12, 10))).unwrap();
        assert_eq!(resized.hw(), (10, 12));
        assert!(resized.ref_last.is_none());
    }

    #[test]
    fn mixed_sizes_name_the_file() {
        let dir = tempfile::tempdir().unwrap();
        write_solid(&dir.path().join("a.png"), 8, 6, [1, 2, 3]);
        write_solid(&dir.path().join("b.png"), 8, 7, [1, 2, 3]);
        let err = read_frames(dir.path(), None).unwrap_err().to_string();
        assert!(err.contains("b.png"), "{err}");

        let empty = tempfile::tempdir().unwrap();
        assert!(read_frames(empty.path(), None).is_err());
    }

    #[test]
    fn png_round_trip_is_exact_for_8bit_values() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f64> = (0..2 * 3 * 3).map(|i| (i * 13 % 256) as f64 / 255.0).collect();
        let t = Tensor::new(&[2, 3, 3], data, DType::F32).unwrap();
        let p = dir.path().join("x.png");
        write_rgb(&p, &t).unwrap();
        assert!(read_rgb(&p, None).unwrap().bit_eq(&t));
    }
}
