use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Example, Sample};
use super::{Result, ScenegenError, SpatialMaps};
use crate::ensemble::MetaCategory;
use crate::featex::Raster;

pub const SPLITS: [&str; 3] = ["train", "val", "test"];
const MAGIC: &[u8; 4] = b"SMAP";

fn format_err(path: &Path, reason: impl ToString) -> ScenegenError {
    ScenegenError::Format {
        path: path.display().to_string(),
        reason: reason.to_string(),
    }
}

fn io_err(path: &Path, source: std::io::Error) -> ScenegenError {
    ScenegenError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// `"SMAP"`, `u16` height, `u16` width, then little-endian `f32` values in
/// row-major, channel-last order. The channel count follows from the size.
pub fn write_smap(map: &Raster) -> Result<Vec<u8>> {
    let (h, w) = (map.height(), map.width());
    if h > u16::MAX as usize || w > u16::MAX as usize {
        return Err(ScenegenError::Config(format!("{h}×{w} map exceeds the SMAP size limit")));
    }
    let mut out = Vec::with_capacity(8 + 4 * map.data().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(h as u16).to_le_bytes());
    out.extend_from_slice(&(w as u16).to_le_bytes());
    for x in map.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub fn read_smap(bytes: &[u8]) -> std::result::Result<Raster, String> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err("missing SMAP header".into());
    }
    let h = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
    let w = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let payload = &bytes[8..];
    if h == 0 || w == 0 || payload.len() % (4 * h * w) != 0 {
        return Err(format!("{} payload bytes do not fit a {h}×{w} map", payload.len()));
    }
    let channels = payload.len() / (4 * h * w);
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Raster::new(h, w, channels, data).map_err(|e| e.to_string())
}

pub fn encode_rgb_png(image: &Raster) -> Result<Vec<u8>> {
    if image.channels() != 3 {
        return Err(ScenegenError::Config("RGB image needs 3 channels".into()));
    }
    let bytes: Vec<u8> = image.data().iter().map(|&x| (x.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let img = RgbImage::from_raw(image.width() as u32, image.height() as u32, bytes).expect("sized buffer");
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| ScenegenError::Config(e.to_string()))?;
    Ok(out.into_inner())
}

pub fn encode_binary_png(mask: &Raster) -> Result<Vec<u8>> {
    if mask.channels() != 1 {
        return Err(ScenegenError::Config("binary map needs 1 channel".into()));
    }
    let bytes: Vec<u8> = mask.data().iter().map(|&x| if x > 0.5 { 255 } else { 0 }).collect();
    let img = GrayImage::from_raw(mask.width() as u32, mask.height() as u32, bytes).expect("sized buffer");
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| ScenegenError::Config(e.to_string()))?;
    Ok(out.into_inner())
}

pub fn decode_rgb_png(bytes: &[u8]) -> std::result::Result<Raster, String> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(|e| e.to_string())?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb.into_raw().into_iter().map(|b| b as f32 / 255.0).collect();
    Raster::new(h as usize, w as usize, 3, data).map_err(|e| e.to_string())
}

pub fn decode_binary_png(bytes: &[u8]) -> std::result::Result<Raster, String> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(|e| e.to_string())?;
    let g = img.to_luma8();
    let (w, h) = g.dimensions();
    let data = g.into_raw().into_iter().map(|b| if b > 127 { 1.0 } else { 0.0 }).collect();
    Raster::new(h as usize, w as usize, 1, data).map_err(|e| e.to_string())
}

/// One line of `samples.jsonl`. Paths are relative to the split directory.
/// Map paths are optional so plain annotation files load too.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: String,
    pub caption: String,
    pub label: u8,
    pub relation: String,
    pub meta_category: MetaCategory,
    pub image_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coords_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges_path: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mask_paths: Vec<String>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    crate::write_atomic(path, bytes).map_err(|e| io_err(path, e))
}

fn write_sample(dir: &Path, s: &Sample) -> Result<SampleRecord> {
    let rel = |sub: &str, ext: &str| format!("{sub}/{}.{ext}", s.id);
    let record = SampleRecord {
        id: s.id.clone(),
        caption: s.caption.clone(),
        label: s.label as u8,
        relation: s.relation.phrase().to_string(),
        meta_category: s.relation.meta_category(),
        image_path: rel("images", "png"),
        depth_path: Some(rel("depth", "smap")),
        coords_path: Some(rel("coords", "smap")),
        edges_path: Some(rel("edges", "png")),
        mask_paths: (0..s.maps.masks.len()).map(|k| format!("masks/{}_{k}.png", s.id)).collect(),
    };
    write_file(&dir.join(&record.image_path), &encode_rgb_png(&s.image)?)?;
    write_file(&dir.join(record.depth_path.as_ref().unwrap()), &write_smap(&s.maps.depth)?)?;
    write_file(&dir.join(record.coords_path.as_ref().unwrap()), &write_smap(&s.maps.coords)?)?;
    write_file(&dir.join(record.edges_path.as_ref().unwrap()), &encode_binary_png(&s.maps.edges)?)?;
    for (p, m) in record.mask_paths.iter().zip(&s.maps.masks) {
        write_file(&dir.join(p), &encode_binary_png(m)?)?;
    }
    Ok(record)
}

pub fn records_to_jsonl(records: &[SampleRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serialises"));
        out.push('\n');
    }
    out
}

/// Writes `<root>/<split>/samples.jsonl` plus one file per map.
pub fn write_dataset(root: &Path, data: &Dataset) -> Result<()> {
    for (name, samples) in data.splits() {
        let dir = root.join(name);
        let records = samples.iter().map(|s| write_sample(&dir, s)).collect::<Result<Vec<_>>>()?;
        write_file(&dir.join("samples.jsonl"), records_to_jsonl(&records).as_bytes())?;
    }
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<SampleRecord>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let r: SampleRecord = serde_json::from_str(l).map_err(|e| format_err(path, format!("line {}: {e}", i + 1)))?;
            if r.label > 1 {
                return Err(format_err(path, format!("line {}: label must be 0 or 1", i + 1)));
            }
            Ok(r)
        })
        .collect()
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| io_err(path, e))
}

fn load_map(path: PathBuf, channels: usize, h: usize, w: usize) -> Result<Raster> {
    let r = read_smap(&read_bytes(&path)?).map_err(|e| format_err(&path, e))?;
    if r.channels() != channels || r.height() != h || r.width() != w {
        return Err(format_err(&path, format!("expected {h}×{w}×{channels}")));
    }
    Ok(r)
}

fn load_binary(path: PathBuf) -> Result<Raster> {
    decode_binary_png(&read_bytes(&path)?).map_err(|e| format_err(&path, e))
}

pub fn load_example(dir: &Path, r: &SampleRecord) -> Result<Example> {
    let img_path = dir.join(&r.image_path);
    let image = decode_rgb_png(&read_bytes(&img_path)?).map_err(|e| format_err(&img_path, e))?;
    let (h, w) = (image.height(), image.width());
    let maps = match (&r.depth_path, &r.coords_path, &r.edges_path) {
        (Some(d), Some(c), Some(e)) => Some(SpatialMaps {
            depth: load_map(dir.join(d), 1, h, w)?,
            coords: load_map(dir.join(c), 3, h, w)?,
            edges: load_binary(dir.join(e))?,
            masks: r.mask_paths.iter().map(|p| load_binary(dir.join(p))).collect::<Result<_>>()?,
        }),
        _ => None,
    };
    Ok(Example {
        id: r.id.clone(),
        caption: r.caption.clone(),
        label: r.label == 1,
        relation: r.relation.clone(),
        meta_category: r.meta_category,
        image,
        maps,
    })
}

/// Loads every example of one split directory.
pub fn load_split(dir: &Path) -> Result<Vec<Example>> {
    read_records(&dir.join("samples.jsonl"))?
        .iter()
        .map(|r| load_example(dir, r))
        .collect()
}
