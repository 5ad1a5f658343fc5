//! `make-fixture`: a synthetic corpus with predictions, for offline runs.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{ImageFormat, Rgb, RgbImage};

use agescope_core::corpus::ManifestRecord;

use crate::error::CliError;
use crate::io::{write_atomic, write_jsonl};
use crate::synth::{synthetic_run, SyntheticItem};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const IMAGES_DIR: &str = "images";
const TILE: u32 = 8;

#[derive(Debug, Clone)]
pub struct MakeFixtureOptions {
    pub seed: u64,
    pub count: usize,
    pub output_dir: PathBuf,
}

pub fn image_name(id: u64) -> PathBuf {
    Path::new(IMAGES_DIR).join(format!("item_{id:05}.png"))
}

fn tile_png(id: u64) -> Vec<u8> {
    let [r, g, b, ..] = id.wrapping_mul(0x9E37_79B9_7F4A_7C15).to_le_bytes();
    let img = RgbImage::from_pixel(TILE, TILE, Rgb([r, g, b]));
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).expect("in-memory PNG encode");
    out.into_inner()
}

pub fn run_make_fixture(options: &MakeFixtureOptions) -> Result<Vec<SyntheticItem>, CliError> {
    if options.count == 0 {
        return Err(CliError::Input("fixture size must be at least 1".into()));
    }
    let dir = &options.output_dir;
    fs::create_dir_all(dir.join(IMAGES_DIR)).map_err(CliError::io(dir.join(IMAGES_DIR)))?;
    let run = synthetic_run(options.seed, options.count);
    let names: Vec<PathBuf> = run.iter().map(|item| image_name(item.id)).collect();
    for (item, name) in run.iter().zip(&names) {
        write_atomic(&dir.join(name), &tile_png(item.id))?;
    }
    let manifest: Vec<ManifestRecord<'_>> = run
        .iter()
        .zip(&names)
        .map(|(item, name)| ManifestRecord {
            id: item.id,
            image: name,
            age: item.truth,
        })
        .collect();
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes())?;
    let predictions: Vec<_> = run.iter().map(|item| item.prediction.clone()).collect();
    write_jsonl(&dir.join(crate::classify::PREDICTIONS_FILE), &predictions)?;
    Ok(run)
}
