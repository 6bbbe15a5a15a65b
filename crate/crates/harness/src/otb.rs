//! OTB-style sequence directories: `img/` with one image per frame and a
//! `groundtruth_rect.txt` holding one 1-indexed `x,y,w,h` box per line.

use std::fs;
use std::path::{Path, PathBuf};

use bacf_unroll::{BoundingBox, GrayImage};

use crate::error::{io_err, HarnessError, Result};

pub const GROUNDTRUTH_FILE: &str = "groundtruth_rect.txt";
pub const FRAME_DIR: &str = "img";

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDataset {
    pub name: String,
    /// Frame files in lexicographic order.
    pub frames: Vec<PathBuf>,
    /// 0-indexed boxes, one per frame.
    pub boxes: Vec<BoundingBox>,
}

impl SequenceDataset {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn load_frames(&self) -> Result<Vec<GrayImage>> {
        self.frames.iter().map(|p| load_frame(p)).collect()
    }
}

/// Parses ground-truth text; fields may be separated by commas, tabs or
/// spaces. Blank lines are skipped.
pub fn parse_groundtruth(text: &str, path: &Path) -> Result<Vec<BoundingBox>> {
    let mut boxes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| HarnessError::Parse { path: path.to_path_buf(), line: i + 1, message };
        let fields: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|f| !f.is_empty()).collect();
        if fields.len() != 4 {
            return Err(parse_err(format!("expected 4 fields, found {}", fields.len())));
        }
        let mut v = [0.0; 4];
        for (slot, field) in v.iter_mut().zip(&fields) {
            *slot = field.parse::<f64>().map_err(|e| parse_err(format!("`{field}`: {e}")))?;
        }
        let b = BoundingBox::new(v[0] - 1.0, v[1] - 1.0, v[2], v[3]).map_err(|e| parse_err(e.to_string()))?;
        boxes.push(b);
    }
    Ok(boxes)
}

/// Inverse of [`parse_groundtruth`], comma separated.
pub fn format_groundtruth(boxes: &[BoundingBox]) -> String {
    boxes.iter().map(|b| format!("{},{},{},{}\n", b.x + 1.0, b.y + 1.0, b.width, b.height)).collect()
}

fn is_frame_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "jpg" | "jpeg" | "png"))
}

pub fn load_otb_sequence(dir: &Path) -> Result<SequenceDataset> {
    let gt_path = dir.join(GROUNDTRUTH_FILE);
    let text = fs::read_to_string(&gt_path).map_err(io_err(&gt_path))?;
    let boxes = parse_groundtruth(&text, &gt_path)?;
    let img_dir = dir.join(FRAME_DIR);
    let mut frames: Vec<PathBuf> = fs::read_dir(&img_dir)
        .map_err(io_err(&img_dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_frame_file(p))
        .collect();
    frames.sort();
    if frames.len() != boxes.len() {
        return Err(HarnessError::CountMismatch { path: dir.to_path_buf(), frames: frames.len(), boxes: boxes.len() });
    }
    let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(SequenceDataset { name, frames, boxes })
}

/// All sequence directories (those holding a ground-truth file) below `root`,
/// sorted by name.
pub fn load_otb_collection(root: &Path) -> Result<Vec<SequenceDataset>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(io_err(root))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(GROUNDTRUTH_FILE).is_file())
        .collect();
    dirs.sort();
    dirs.iter().map(|d| load_otb_sequence(d)).collect()
}

pub fn load_frame(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|source| HarnessError::Image { path: path.to_path_buf(), source })?;
    let luma = img.to_luma8();
    let data = luma.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
    Ok(GrayImage::new(luma.width() as usize, luma.height() as usize, data)?)
}

/// Quantizes to 8 bits and writes a PNG.
pub fn save_frame(frame: &GrayImage, path: &Path) -> Result<()> {
    let raw: Vec<u8> = frame.as_slice().iter().map(|&v| quantize(v)).collect();
    let buf = image::GrayImage::from_raw(frame.width() as u32, frame.height() as u32, raw)
        .ok_or_else(|| HarnessError::Invalid("frame buffer size mismatch".into()))?;
    buf.save(path).map_err(|source| HarnessError::Image { path: path.to_path_buf(), source })
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes `frames` as `img/0001.png, ...` plus the ground-truth file.
pub fn write_otb_sequence(dir: &Path, frames: &[GrayImage], boxes: &[BoundingBox]) -> Result<SequenceDataset> {
    if frames.len() != boxes.len() {
        return Err(HarnessError::CountMismatch { path: dir.to_path_buf(), frames: frames.len(), boxes: boxes.len() });
    }
    let img_dir = dir.join(FRAME_DIR);
    fs::create_dir_all(&img_dir).map_err(io_err(&img_dir))?;
    for (i, frame) in frames.iter().enumerate() {
        save_frame(frame, &img_dir.join(format!("{:04}.png", i + 1)))?;
    }
    let gt_path = dir.join(GROUNDTRUTH_FILE);
    fs::write(&gt_path, format_groundtruth(boxes)).map_err(io_err(&gt_path))?;
    load_otb_sequence(dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_indexed_origin() {
        let b = parse_groundtruth("10,20,30,40\n", Path::new("gt")).unwrap();
        assert_eq!(b, vec![BoundingBox::new(9.0, 19.0, 30.0, 40.0).unwrap()]);
    }

    #[test]
    fn separators_are_interchangeable() {
        let comma = parse_groundtruth("1,2,3,4\n5,6,7,8\n", Path::new("a")).unwrap();
        let tab = parse_groundtruth("1\t2\t3\t4\n5\t6\t7\t8\n\n", Path::new("b")).unwrap();
        assert_eq!(comma, tab);
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let err = parse_groundtruth("1,2,3,4\n1,2,x,4\n", Path::new("gt")).unwrap_err();
        assert!(matches!(err, HarnessError::Parse { line: 2, .. }), "{err}");
        assert!(matches!(parse_groundtruth("1,2,3\n", Path::new("gt")), Err(HarnessError::Parse { line: 1, .. })));
        assert!(parse_groundtruth("1,2,0,4\n", Path::new("gt")).is_err());
    }
}
