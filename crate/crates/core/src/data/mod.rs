//! Image ingestion, augmentation, splitting, feature files and synthetic data.

mod augment;
mod featfile;
mod image;
mod split;
mod synth;

pub use augment::{apply_affine, augment, AffineParams, AugmentSpec};
pub use featfile::{
    decode_features, encode_features, read_feature_file, write_feature_file, FEATURE_MAGIC, FEATURE_VERSION,
};
pub use image::{decode_pgm, load_image, resize_bilinear, GrayImage, PNG_SUPPORTED};
pub use split::{stratified_split, SplitIndices, DEFAULT_VALIDATION_FRACTION};
pub use synth::{synth_dataset, SynthKind, NOISE_SIGMA};

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<GrayImage>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn new(images: Vec<GrayImage>, labels: Vec<usize>, class_names: Vec<String>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::data(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::Label {
                label: bad as i64,
                classes: class_names.len(),
            });
        }
        Ok(Dataset {
            images,
            labels,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
        }
    }

    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<SplitIndices> {
        stratified_split(
            &self.labels,
            &self.class_names,
            train_fraction,
            DEFAULT_VALIDATION_FRACTION,
            seed,
        )
    }

    /// Resize every image to `size x size` (no-op for images already that size).
    pub fn resized(&self, size: usize) -> Result<Dataset> {
        let images = self
            .images
            .iter()
            .map(|i| resize_bilinear(i, size, size))
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(images, self.labels.clone(), self.class_names.clone())
    }

    /// Write `root/<class>/<index>.pgm` plus `root/manifest.csv`.
    pub fn save_dir(&self, root: &Path) -> Result<()> {
        let mut manifest = String::from("path,label\n");
        for name in &self.class_names {
            let dir = root.join(name);
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        for (i, (img, &l)) in self.images.iter().zip(&self.labels).enumerate() {
            let rel = format!("{}/{i:05}.pgm", self.class_names[l]);
            img.save_pgm(&root.join(&rel))?;
            manifest.push_str(&format!("{rel},{l}\n"));
        }
        let path = root.join("manifest.csv");
        std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
    }
}

/// Load `root/<class_name>/*.pgm`. Classes are the sorted sub-directory
/// names; files within a class are read in sorted order.
pub fn load_image_dir(root: &Path) -> Result<Dataset> {
    let read_dir = |p: &Path| -> Result<Vec<PathBuf>> {
        let mut v: Vec<PathBuf> = std::fs::read_dir(p)
            .map_err(|e| Error::io(p, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        v.sort();
        Ok(v)
    };
    let class_dirs: Vec<PathBuf> = read_dir(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.is_empty() {
        return Err(Error::data(format!("no class directories under {}", root.display())));
    }
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut names = Vec::new();
    for (label, dir) in class_dirs.iter().enumerate() {
        names.push(dir.file_name().unwrap().to_string_lossy().into_owned());
        for file in read_dir(dir)? {
            let ext = file.extension().map(|e| e.to_ascii_lowercase());
            if ext.as_deref() == Some("pgm".as_ref()) || (PNG_SUPPORTED && ext.as_deref() == Some("png".as_ref())) {
                images.push(load_image(&file)?);
                labels.push(label);
            }
        }
    }
    Dataset::new(images, labels, names)
}

/// Read a `path,label` manifest. Relative paths resolve against the manifest's directory.
pub fn load_manifest(path: &Path, class_names: Vec<String>) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (ln, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let (p, l) = line
            .rsplit_once(',')
            .ok_or_else(|| Error::data(format!("manifest line {}: expected path,label", ln + 1)))?;
        let label: usize = l
            .trim()
            .parse()
            .map_err(|_| Error::data(format!("manifest line {}: bad label '{l}'", ln + 1)))?;
        images.push(load_image(&base.join(p.trim()))?);
        labels.push(label);
    }
    let names = if class_names.is_empty() {
        let k = labels.iter().max().map_or(0, |m| m + 1);
        (0..k).map(|c| format!("class{c}")).collect()
    } else {
        class_names
    };
    Dataset::new(images, labels, names)
}
