//! `<root>/<problem>/{defect,no_defect}/*.png` datasets.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{LabeledImage, ProblemDataset, CLEAN_DIR, DEFECT_DIR};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub label: String,
    pub sha256: String,
}

/// Written beside generated data as `<root>/<problem>/manifest.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub problem: String,
    pub image_size: usize,
    pub defect: usize,
    pub no_defect: usize,
    pub images: Vec<ManifestEntry>,
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            files.push(path);
        }
    }
    // byte-wise lexicographic order on file names, independent of platform
    files.sort_by(|a, b| a.file_name().map(|n| n.as_encoded_bytes()).cmp(&b.file_name().map(|n| n.as_encoded_bytes())));
    Ok(files)
}

fn decode_gray(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: String| Error::Data(format!("{}: {m}", path.display()));
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| bad(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| bad("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| bad(e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let px = match (info.color_type, info.bit_depth) {
        (png::ColorType::Grayscale, png::BitDepth::Eight) => {
            buf[..w * h].iter().map(|&b| f64::from(b) / 255.0).collect()
        }
        (png::ColorType::Grayscale, png::BitDepth::Sixteen) => buf[..2 * w * h]
            .chunks_exact(2)
            .map(|c| f64::from(u16::from_be_bytes([c[0], c[1]])) / 65535.0)
            .collect(),
        (ct, bd) => return Err(bad(format!("expected grayscale PNG, found {ct:?} at {bd:?}"))),
    };
    Ok((w, h, px))
}

/// Bilinear resampling with pixel-centre alignment.
fn resize_bilinear(src: &[f64], w: usize, h: usize, size: usize) -> Vec<f64> {
    if w == size && h == size {
        return src.to_vec();
    }
    let coord = |o: usize, src_len: usize| {
        let c = ((o as f64 + 0.5) * src_len as f64 / size as f64 - 0.5).clamp(0.0, (src_len - 1) as f64);
        let i0 = c.floor() as usize;
        let i1 = (i0 + 1).min(src_len - 1);
        (i0, i1, c - i0 as f64)
    };
    let mut out = Vec::with_capacity(size * size);
    for oy in 0..size {
        let (y0, y1, fy) = coord(oy, h);
        for ox in 0..size {
            let (x0, x1, fx) = coord(ox, w);
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Loads one problem directory. Images are scaled to `[0, 1]` and resized to
/// `image_size × image_size`. Defect images come first, each class ordered
/// by file name.
pub fn load_problem_directory(path: &Path, image_size: usize) -> Result<ProblemDataset> {
    if !path.is_dir() {
        return Err(Error::Data(format!("{} is not a directory", path.display())));
    }
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .ok_or_else(|| Error::Data(format!("{} has no problem name", path.display())))?;
    let mut images = Vec::new();
    for (dir_name, defect) in [(DEFECT_DIR, true), (CLEAN_DIR, false)] {
        let dir = path.join(dir_name);
        if !dir.is_dir() {
            return Err(Error::Data(format!("missing class folder {}", dir.display())));
        }
        let files = png_files(&dir)?;
        if files.is_empty() {
            return Err(Error::Data(format!("class folder {} contains no PNG images", dir.display())));
        }
        for file in files {
            let (w, h, px) = decode_gray(&file)?;
            let stem = file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            images.push(LabeledImage {
                id: format!("{dir_name}/{stem}"),
                pixels: Tensor::new(vec![1, image_size, image_size], resize_bilinear(&px, w, h, image_size))?,
                defect,
            });
        }
    }
    ProblemDataset::new(name, images)
}

fn encode_gray(pixels: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = match pixels.shape() {
        [1, h, w] => (*h, *w),
        s => return Err(Error::Shape(format!("expected 1×H×W image, got {s:?}"))),
    };
    let data: Vec<u8> = pixels
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::Format(e.to_string()))?;
        writer.write_image_data(&data).map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok(out)
}

/// Writes a dataset as 8-bit PNGs plus `manifest.json` under `<root>/<name>/`.
/// Existing PNGs in the class folders are removed first, so re-running with
/// the same data leaves identical files.
pub fn write_problem_directory(dataset: &ProblemDataset, root: &Path) -> Result<DatasetManifest> {
    let base = root.join(&dataset.name);
    for dir_name in [DEFECT_DIR, CLEAN_DIR] {
        let dir = base.join(dir_name);
        if dir.is_dir() {
            for f in png_files(&dir)? {
                fs::remove_file(&f).map_err(|e| Error::io(&f, e))?;
            }
        }
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let mut entries = Vec::with_capacity(dataset.len());
    for img in &dataset.images {
        let bytes = encode_gray(&img.pixels)?;
        let path = base.join(format!("{}.png", img.id));
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        entries.push(ManifestEntry {
            id: img.id.clone(),
            label: if img.defect { DEFECT_DIR } else { CLEAN_DIR }.to_owned(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
    }
    let manifest = DatasetManifest {
        problem: dataset.name.clone(),
        image_size: dataset.images.first().map_or(0, |i| i.pixels.shape()[2]),
        defect: dataset.defect_count(),
        no_defect: dataset.clean_count(),
        images: entries,
    };
    let path = base.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
