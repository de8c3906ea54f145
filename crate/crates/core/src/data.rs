//! Datasets: CIFAR-10 binary batches, PPM images listed in a manifest, a
//! synthetic pattern generator, the per-class subsampling rule, and the
//! training-time augmentation policy.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Images `C×H×W` with values in `[0, 1]`, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Vec<f32>,
    labels: Vec<usize>,
    shape: [usize; 3],
    class_count: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(
        images: Vec<f32>,
        labels: Vec<usize>,
        shape: [usize; 3],
        class_count: usize,
        split: Split,
    ) -> Result<Self> {
        let per = shape.iter().product::<usize>();
        if per == 0 || images.len() != per * labels.len() {
            return Err(Error::dim(format!(
                "{} pixel values for {} images of shape {shape:?}",
                images.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Index(format!("label {bad} outside [0, {class_count})")));
        }
        Ok(Dataset {
            images,
            labels,
            shape,
            class_count,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let per = self.shape.iter().product::<usize>();
        &self.images[i * per..(i + 1) * per]
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let per = self.shape.iter().product::<usize>();
        let mut images = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            images.extend_from_slice(self.image(i));
        }
        Dataset {
            images,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            shape: self.shape,
            class_count: self.class_count,
            split: self.split,
        }
    }

    /// Stacks `indices` into `[B, C, H, W]`, normalized by `policy`; with an
    /// rng, also randomly cropped and flipped.
    pub fn batch<T: Element>(
        &self,
        indices: &[usize],
        policy: &AugmentationPolicy,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<(Tensor<T>, Vec<usize>)> {
        let [c, h, w] = self.shape;
        let per = c * h * w;
        let mut data = Vec::with_capacity(indices.len() * per);
        let mut rng = rng;
        let mut scratch = vec![0f32; per];
        for &i in indices {
            let img = self.image(i);
            let src: &[f32] = match rng.as_deref_mut() {
                Some(r) => {
                    policy.augment(img, self.shape, r, &mut scratch);
                    &scratch
                }
                None => img,
            };
            for ch in 0..c {
                let (m, s) = policy.channel_stats(ch);
                data.extend(
                    src[ch * h * w..(ch + 1) * h * w]
                        .iter()
                        .map(|&v| T::of(f64::from((v - m) / s))),
                );
            }
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((Tensor::new(&[indices.len(), c, h, w], data)?, labels))
    }
}

/// Random crop from a zero-padded image plus horizontal flip (training
/// split only), and per-channel normalization (every split).
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationPolicy {
    pub crop_padding: usize,
    pub flip_probability: f64,
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        AugmentationPolicy {
            crop_padding: 4,
            flip_probability: 0.5,
            mean: Vec::new(),
            std: Vec::new(),
        }
    }
}

impl AugmentationPolicy {
    pub fn none() -> Self {
        AugmentationPolicy {
            crop_padding: 0,
            flip_probability: 0.0,
            mean: Vec::new(),
            std: Vec::new(),
        }
    }

    /// Missing entries mean 0 and 1.
    fn channel_stats(&self, ch: usize) -> (f32, f32) {
        (
            self.mean.get(ch).copied().unwrap_or(0.0),
            self.std.get(ch).copied().unwrap_or(1.0),
        )
    }

    pub fn is_identity(&self) -> bool {
        self.crop_padding == 0 && self.flip_probability == 0.0
    }

    fn augment(&self, img: &[f32], shape: [usize; 3], rng: &mut dyn RngCore, out: &mut [f32]) {
        let [c, h, w] = shape;
        let p = self.crop_padding as i64;
        let (dy, dx) = if p > 0 {
            (rng.random_range(-p..=p) as isize, rng.random_range(-p..=p) as isize)
        } else {
            (0, 0)
        };
        let flip = self.flip_probability > 0.0 && rng.random_bool(self.flip_probability.min(1.0));
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let sx = if flip { w - 1 - x } else { x } as isize + dx;
                    let sy = y as isize + dy;
                    let v = if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                        img[(ch * h + sy as usize) * w + sx as usize]
                    } else {
                        0.0
                    };
                    out[(ch * h + y) * w + x] = v;
                }
            }
        }
    }
}

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_RECORD: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;
pub const CIFAR_CLASSES: usize = 10;
pub const CIFAR_TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const CIFAR_TEST_FILE: &str = "test_batch.bin";

fn decode_cifar(bytes: &[u8], path: &Path, images: &mut Vec<f32>, labels: &mut Vec<usize>) -> Result<()> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(CIFAR_RECORD) {
        return Err(Error::format(
            path,
            format!(
                "{} bytes is not a whole number of {CIFAR_RECORD}-byte records",
                bytes.len()
            ),
        ));
    }
    for rec in bytes.chunks_exact(CIFAR_RECORD) {
        let label = rec[0] as usize;
        if label >= CIFAR_CLASSES {
            return Err(Error::format(
                path,
                format!("label byte {label} outside 0..{CIFAR_CLASSES}"),
            ));
        }
        labels.push(label);
        images.extend(rec[1..].iter().map(|&b| f32::from(b) / 255.0));
    }
    Ok(())
}

/// One binary batch file: records of a label byte then 3072 pixel bytes
/// (R plane, G plane, B plane, row-major 32×32).
pub fn load_cifar10_batch(path: &Path, split: Split) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    let (mut images, mut labels) = (Vec::new(), Vec::new());
    decode_cifar(&bytes, path, &mut images, &mut labels)?;
    Dataset::new(images, labels, [3, CIFAR_SIDE, CIFAR_SIDE], CIFAR_CLASSES, split)
}

/// The five training batches and the test batch of a CIFAR-10 binary
/// directory.
pub fn load_cifar10_binary(dir: &Path) -> Result<(Dataset, Dataset)> {
    let (mut images, mut labels) = (Vec::new(), Vec::new());
    for name in CIFAR_TRAIN_FILES {
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(|e| Error::format(&path, e.to_string()))?;
        decode_cifar(&bytes, &path, &mut images, &mut labels)?;
    }
    let train = Dataset::new(images, labels, [3, CIFAR_SIDE, CIFAR_SIDE], CIFAR_CLASSES, Split::Train)?;
    let test_path = dir.join(CIFAR_TEST_FILE);
    if !test_path.is_file() {
        return Err(Error::format(&test_path, "missing test batch"));
    }
    let test = load_cifar10_batch(&test_path, Split::Test)?;
    Ok((train, test))
}

/// Serializes `data` in the binary batch layout, quantizing to bytes.
pub fn encode_cifar10_batch(data: &Dataset) -> Result<Vec<u8>> {
    if data.shape != [3, CIFAR_SIDE, CIFAR_SIDE] || data.class_count > 256 {
        return Err(Error::dim(format!(
            "CIFAR records hold 3x32x32 images, got {:?}",
            data.shape
        )));
    }
    let mut out = Vec::with_capacity(data.len() * CIFAR_RECORD);
    for i in 0..data.len() {
        out.push(data.labels[i] as u8);
        out.extend(data.image(i).iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    Ok(out)
}

pub fn write_cifar10_batch(path: &Path, data: &Dataset) -> Result<()> {
    fs::write(path, encode_cifar10_batch(data)?)?;
    Ok(())
}

/// Binary PPM (`P6`, maxval ≤ 255) → `[3, H, W]` in `[0, 1]`.
pub fn read_ppm(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path)?;
    decode_ppm(&bytes).map_err(|reason| Error::format(path, reason))
}

fn decode_ppm(bytes: &[u8]) -> std::result::Result<Tensor<f32>, String> {
    let mut pos = 0;
    let mut token = || -> std::result::Result<String, String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P6" {
        return Err("not a binary PPM (P6)".into());
    }
    let mut num = |what: &str| -> std::result::Result<usize, String> {
        token()?.parse::<usize>().map_err(|_| format!("bad {what}"))
    };
    let (w, h, maxval) = (num("width")?, num("height")?, num("maxval")?);
    if w == 0 || h == 0 || maxval == 0 || maxval > 255 {
        return Err(format!("unsupported geometry {w}x{h}, maxval {maxval}"));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    let need = 3 * w * h;
    if bytes.len() < start + need {
        return Err(format!(
            "raster holds {} of {need} bytes",
            bytes.len().saturating_sub(start)
        ));
    }
    let raster = &bytes[start..start + need];
    let scale = maxval as f32;
    let mut data = vec![0f32; need];
    for (p, px) in raster.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * w * h + p] = f32::from(px[c]) / scale;
        }
    }
    Tensor::new(&[3, h, w], data).map_err(|e| e.to_string())
}

/// `[3, H, W]` in `[0, 1]` → binary PPM with maxval 255.
pub fn write_ppm(path: &Path, image: &Tensor<f32>) -> Result<()> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::dim(format!("PPM needs [3, H, W], got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for p in 0..h * w {
        for c in 0..3 {
            out.push((image.data()[c * h * w + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Relative image paths chosen per class, plus flags for short classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<String>,
    pub warnings: Vec<String>,
    text: String,
}

impl Manifest {
    /// One path per line; each warning is a `#` line placed before the
    /// entries of its class.
    pub fn render(&self) -> &str {
        &self.text
    }
}

fn sorted_names(dir: &Path, want_dirs: bool) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let ty = entry.file_type()?;
        if (want_dirs && ty.is_dir()) || (!want_dirs && ty.is_file()) {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

/// For each class subdirectory of `root` (sorted by name), the first
/// `per_class` files in lexicographic order. Classes with fewer files
/// contribute all of them and are flagged.
pub fn subsample_imagenet300k(root: &Path, per_class: usize) -> Result<Manifest> {
    if per_class == 0 {
        return Err(Error::config("per_class must be positive"));
    }
    let classes = sorted_names(root, true).map_err(|e| Error::config(format!("{}: {e}", root.display())))?;
    if classes.is_empty() {
        return Err(Error::config(format!("{} has no class directories", root.display())));
    }
    let (mut entries, mut warnings, mut text) = (Vec::new(), Vec::new(), String::new());
    for class in classes {
        let files = sorted_names(&root.join(&class), false)?;
        if files.len() < per_class {
            let w = format!("class {class}: {} files, wanted {per_class}", files.len());
            text.push_str(&format!("# {w}\n"));
            warnings.push(w);
        }
        for f in files.into_iter().take(per_class) {
            let line = format!("{class}/{f}");
            text.push_str(&line);
            text.push('\n');
            entries.push(line);
        }
    }
    Ok(Manifest {
        entries,
        warnings,
        text,
    })
}

/// Loads the PPM images listed in a manifest; labels index the sorted set
/// of class directories named in it. Paths resolve against the manifest's
/// directory.
pub fn load_manifest(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let base = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let entries: Vec<&str> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect();
    if entries.is_empty() {
        return Err(Error::format(path, "manifest lists no images"));
    }
    let class_of = |e: &str| e.split('/').next().unwrap_or("").to_string();
    let mut classes: Vec<String> = entries.iter().map(|e| class_of(e)).collect();
    classes.sort();
    classes.dedup();
    let (mut images, mut labels) = (Vec::new(), Vec::new());
    let mut shape: Option<[usize; 3]> = None;
    for e in &entries {
        let img = read_ppm(&base.join(e))?;
        let s: [usize; 3] = img.shape().try_into().expect("PPM decodes to rank 3");
        match shape {
            None => shape = Some(s),
            Some(prev) if prev != s => {
                return Err(Error::format(
                    path,
                    format!("{e} is {s:?}, earlier images are {prev:?}"),
                ));
            }
            _ => {}
        }
        images.extend_from_slice(img.data());
        labels.push(classes.binary_search(&class_of(e)).expect("class collected above"));
    }
    Dataset::new(images, labels, shape.expect("non-empty"), classes.len(), Split::Train)
}

fn hue_to_rgb(hue: f64) -> [f64; 3] {
    let h = (hue.rem_euclid(1.0)) * 6.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    match h as usize {
        0 => [1.0, x, 0.0],
        1 => [x, 1.0, 0.0],
        2 => [0.0, 1.0, x],
        3 => [0.0, x, 1.0],
        4 => [x, 0.0, 1.0],
        _ => [1.0, 0.0, x],
    }
}

/// Colored oriented gratings: class `c` has its own hue, spatial frequency
/// and orientation; each sample draws a random phase, contrast and pixel
/// noise. Samples are interleaved by class.
pub fn synthetic_classification_dataset(classes: usize, per_class: usize, size: usize, seed: u64) -> Result<Dataset> {
    if classes == 0 || per_class == 0 || size == 0 {
        return Err(Error::config(
            "synthetic dataset needs positive classes, per_class and size",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plane = size * size;
    let mut images = Vec::with_capacity(classes * per_class * 3 * plane);
    let mut labels = Vec::with_capacity(classes * per_class);
    for _ in 0..per_class {
        for c in 0..classes {
            let color = hue_to_rgb(c as f64 / classes as f64);
            let freq = 1.0 + (c % 4) as f64;
            let angle = PI * (c as f64 * 0.618_034).fract();
            let (ca, sa) = (angle.cos(), angle.sin());
            let phase = rng.random_range(0.0..2.0 * PI);
            let contrast = rng.random_range(0.6..1.0);
            let mut img = vec![0f32; 3 * plane];
            for y in 0..size {
                for x in 0..size {
                    let u = (x as f64 * ca + y as f64 * sa) / size as f64;
                    let wave = 0.5 + 0.5 * contrast * (2.0 * PI * freq * u + phase).sin();
                    for ch in 0..3 {
                        let noise: f64 = StandardNormal.sample(&mut rng);
                        let v = 0.15 + 0.7 * wave * color[ch] + 0.08 * noise;
                        img[ch * plane + y * size + x] = v.clamp(0.0, 1.0) as f32;
                    }
                }
            }
            images.extend(img);
            labels.push(c);
        }
    }
    Dataset::new(images, labels, [3, size, size], classes, Split::Train)
}
