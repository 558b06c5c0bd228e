//! On-disk dataset layout: one directory per pair holding lossless
//! 16-bit PNGs and a TOML sidecar with the generation ground truth.
//!
//! ```text
//! <root>/pair_0000/he.png
//! <root>/pair_0000/ihc.png
//! <root>/pair_0000/meta.toml
//! ```

use std::path::Path;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::generate::{GenParams, SyntheticPair};
use crate::domain::Image;
use crate::scalar::Scalar;
use crate::scoring::NucleiCounts;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairMeta {
    pub seed: u64,
    pub params: GenParams,
    pub counts: NucleiCounts,
    pub intensity_class: u8,
    pub dab_intensities: Vec<f64>,
}

/// Writes an image as a lossless 16-bit PNG.
pub fn save_image_png<T: Scalar>(img: &Image<T>, path: &Path) -> Result<(), String> {
    let (h, w) = (img.height(), img.width());
    let mut buf = image::ImageBuffer::<image::Rgb<u16>, Vec<u16>>::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = image::Rgb([
                (img.data()[[0, y, x]].as_f64() * 65535.0).round() as u16,
                (img.data()[[1, y, x]].as_f64() * 65535.0).round() as u16,
                (img.data()[[2, y, x]].as_f64() * 65535.0).round() as u16,
            ]);
            buf.put_pixel(x as u32, y as u32, px);
        }
    }
    buf.save(path).map_err(|e| e.to_string())
}

/// Reads an 8- or 16-bit PNG into the unit range.
pub fn load_image_png<T: Scalar>(path: &Path) -> Result<Image<T>, String> {
    let img = image::open(path).map_err(|e| e.to_string())?.into_rgb16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = Array3::<T>::zeros((3, h, w));
    for y in 0..h {
        for x in 0..w {
            let px = img.get_pixel(x as u32, y as u32);
            for ch in 0..3 {
                data[[ch, y, x]] = T::of(px.0[ch] as f64 / 65535.0);
            }
        }
    }
    Image::new(data).map_err(|e| e.to_string())
}

/// Writes a dataset of pairs under `root`.
pub fn save_dataset<T: Scalar>(
    root: &Path,
    pairs: &[SyntheticPair<T>],
    params: &GenParams,
) -> Result<(), String> {
    std::fs::create_dir_all(root).map_err(|e| e.to_string())?;
    for (i, pair) in pairs.iter().enumerate() {
        let dir = root.join(format!("pair_{i:04}"));
        std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        save_image_png(&pair.x_he, &dir.join("he.png"))?;
        save_image_png(&pair.x_ihc, &dir.join("ihc.png"))?;
        let meta = PairMeta {
            seed: pair.seed,
            params: *params,
            counts: pair.counts,
            intensity_class: pair.intensity_class,
            dab_intensities: pair.dab_intensities.clone(),
        };
        let text = toml::to_string_pretty(&meta).map_err(|e| e.to_string())?;
        std::fs::write(dir.join("meta.toml"), text).map_err(|e| e.to_string())?;
    }
    Ok(())
}

/// Loads every `pair_*` directory under `root`, sorted by name.
pub fn load_dataset<T: Scalar>(
    root: &Path,
) -> Result<Vec<(Image<T>, Image<T>, PairMeta)>, String> {
    let mut dirs: Vec<_> = std::fs::read_dir(root)
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("pair_"))
        })
        .collect();
    dirs.sort();
    let mut out = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let he = load_image_png(&dir.join("he.png"))?;
        let ihc = load_image_png(&dir.join("ihc.png"))?;
        let meta: PairMeta =
            toml::from_str(&std::fs::read_to_string(dir.join("meta.toml")).map_err(|e| {
                e.to_string()
            })?)
            .map_err(|e| e.to_string())?;
        out.push((he, ihc, meta));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::generate::generate_pair;
    use super::*;

    #[test]
    fn dataset_round_trips_through_disk() {
        let params = GenParams {
            image_size: 32,
            n_nuclei: 8,
            ..Default::default()
        };
        let pairs: Vec<SyntheticPair<f32>> =
            (0..3).map(|s| generate_pair(s, &params)).collect();
        let dir = std::env::temp_dir().join(format!("vstain_ds_{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        save_dataset(&dir, &pairs, &params).unwrap();
        let loaded = load_dataset::<f32>(&dir).unwrap();
        assert_eq!(loaded.len(), 3);
        for (i, (he, ihc, meta)) in loaded.iter().enumerate() {
            assert_eq!(meta.seed, pairs[i].seed);
            assert_eq!(meta.counts, pairs[i].counts);
            // 16-bit quantization error only.
            let max_err = he
                .data()
                .iter()
                .zip(pairs[i].x_he.data().iter())
                .map(|(&a, &b)| (a - b).abs())
                .fold(0.0f32, f32::max);
            assert!(max_err <= 1.0 / 65535.0 + 1e-6);
            let max_err_ihc = ihc
                .data()
                .iter()
                .zip(pairs[i].x_ihc.data().iter())
                .map(|(&a, &b)| (a - b).abs())
                .fold(0.0f32, f32::max);
            assert!(max_err_ihc <= 1.0 / 65535.0 + 1e-6);
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
