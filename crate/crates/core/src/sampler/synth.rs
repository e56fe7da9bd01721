//! Deterministic synthetic line-image benchmark.
//!
//! Each class owns a few procedurally drawn polyline motifs and all classes
//! share a pool of distractor motifs. A line is a row of 28-pixel slots, each
//! holding one 24×24 motif; at least 30% of slots carry a motif of the line's
//! class.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::ClassDictionary;
use super::image::{encode_pgm, RawImage, LINE_HEIGHT};
use crate::error::{Error, Result};
use crate::seed;

pub const MOTIF_SIDE: usize = 24;
pub const SLOT: usize = 28;
const STROKE_RADIUS: f64 = 1.5;
const MIN_CLASS_FRACTION: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub classes: usize,
    pub motifs_per_class: usize,
    pub shared_motifs: usize,
    pub min_width: usize,
    pub max_width: usize,
    pub noise_sigma: f64,
    pub train_count: usize,
    pub test_count: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: 4,
            motifs_per_class: 3,
            shared_motifs: 6,
            min_width: 64,
            max_width: 160,
            noise_sigma: 0.03,
            train_count: 800,
            test_count: 200,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::config("synthetic data needs at least 2 classes"));
        }
        if self.motifs_per_class == 0 {
            return Err(Error::config("motifs per class must be at least 1"));
        }
        if self.min_width < LINE_HEIGHT || self.max_width < self.min_width {
            return Err(Error::config(format!(
                "width range [{}, {}] invalid; need {LINE_HEIGHT} ≤ min ≤ max",
                self.min_width, self.max_width
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::config(format!("noise sigma {} invalid", self.noise_sigma)));
        }
        if self.train_count == 0 || self.test_count == 0 {
            return Err(Error::config("train and test counts must be at least 1"));
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        let digits = (self.classes - 1).to_string().len();
        (0..self.classes).map(|k| format!("script{k:0digits$}")).collect()
    }
}

/// Anti-aliased stroke coverage in [0,1], row-major MOTIF_SIDE².
#[derive(Clone, Debug, PartialEq)]
pub struct Motif(pub Vec<f32>);

fn segment_distance(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

fn draw_motif(rng: &mut ChaCha8Rng) -> Motif {
    let vertices = rng.random_range(3..=5);
    let lo = STROKE_RADIUS + 1.0;
    let hi = MOTIF_SIDE as f64 - lo;
    let pts: Vec<(f64, f64)> = (0..vertices)
        .map(|_| (rng.random_range(lo..hi), rng.random_range(lo..hi)))
        .collect();
    let mut cov = vec![0f32; MOTIF_SIDE * MOTIF_SIDE];
    for y in 0..MOTIF_SIDE {
        for x in 0..MOTIF_SIDE {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let d = pts
                .windows(2)
                .map(|s| segment_distance(px, py, s[0], s[1]))
                .fold(f64::INFINITY, f64::min);
            cov[y * MOTIF_SIDE + x] = (STROKE_RADIUS + 0.5 - d).clamp(0.0, 1.0) as f32;
        }
    }
    Motif(cov)
}

#[derive(Clone, Debug)]
pub struct MotifBank {
    /// `class[k]` holds the motifs of class k.
    pub class: Vec<Vec<Motif>>,
    pub shared: Vec<Motif>,
}

impl MotifBank {
    pub fn new(cfg: &SynthConfig) -> Self {
        let mut rng = seed::rng(seed::derive(cfg.seed, &[seed::hash_str("motifs")]));
        let class = (0..cfg.classes)
            .map(|_| (0..cfg.motifs_per_class).map(|_| draw_motif(&mut rng)).collect())
            .collect();
        let shared = (0..cfg.shared_motifs).map(|_| draw_motif(&mut rng)).collect();
        MotifBank { class, shared }
    }
}

#[derive(Clone, Debug)]
pub struct SynthImage {
    pub name: String,
    pub label: usize,
    pub image: RawImage,
}

#[derive(Clone, Debug)]
pub struct SynthSplits {
    pub train: Vec<SynthImage>,
    pub test: Vec<SynthImage>,
    pub classes: ClassDictionary,
}

fn render_line(cfg: &SynthConfig, bank: &MotifBank, label: usize, rng: &mut ChaCha8Rng) -> RawImage {
    let width = rng.random_range(cfg.min_width..=cfg.max_width);
    let slots = width / SLOT;
    let min_class = ((MIN_CLASS_FRACTION * slots as f64).ceil() as usize).max(1);
    let class_slots = if bank.shared.is_empty() {
        slots
    } else {
        rng.random_range(min_class..=slots)
    };
    let mut is_class = vec![false; slots];
    for i in rand::seq::index::sample(rng, slots, class_slots) {
        is_class[i] = true;
    }

    let mut cov = vec![0f32; width * LINE_HEIGHT];
    for (s, &cls) in is_class.iter().enumerate() {
        let pool = if cls { &bank.class[label] } else { &bank.shared };
        let motif = &pool[rng.random_range(0..pool.len())];
        let x0 = s * SLOT + rng.random_range(0..=SLOT - MOTIF_SIDE);
        let y0 = rng.random_range(0..=LINE_HEIGHT - MOTIF_SIDE);
        for y in 0..MOTIF_SIDE {
            for x in 0..MOTIF_SIDE {
                let c = &mut cov[(y0 + y) * width + x0 + x];
                *c = c.max(motif.0[y * MOTIF_SIDE + x]);
            }
        }
    }

    let bg = rng.random_range(0.05..0.35);
    let ink = rng.random_range(0.65..0.95);
    let noise = Normal::new(0.0, cfg.noise_sigma).expect("sigma validated");
    let data = cov
        .iter()
        .map(|&c| {
            let mut v = bg + (ink - bg) * c as f64;
            if cfg.noise_sigma > 0.0 {
                v += noise.sample(rng);
            }
            (v.clamp(0.0, 1.0) * 255.0).round() as u8
        })
        .collect();
    RawImage::gray(width, LINE_HEIGHT, data).expect("consistent geometry")
}

fn split(cfg: &SynthConfig, bank: &MotifBank, name: &str, count: usize) -> Vec<SynthImage> {
    let split_seed = seed::derive(cfg.seed, &[seed::hash_str(name)]);
    (0..count)
        .map(|i| {
            let label = i % cfg.classes;
            let mut rng = seed::rng(seed::derive(split_seed, &[i as u64]));
            SynthImage {
                name: format!("{name}_{i:05}.pgm"),
                label,
                image: render_line(cfg, bank, label, &mut rng),
            }
        })
        .collect()
}

/// In-memory generation; a pure function of the config.
pub fn synth_images(cfg: &SynthConfig) -> Result<SynthSplits> {
    cfg.validate()?;
    let bank = MotifBank::new(cfg);
    Ok(SynthSplits {
        train: split(cfg, &bank, "train", cfg.train_count),
        test: split(cfg, &bank, "test", cfg.test_count),
        classes: ClassDictionary::from_labels(cfg.class_names()),
    })
}

#[derive(Serialize)]
struct Manifest<'a> {
    generator: &'static str,
    engine_version: &'static str,
    config: &'a SynthConfig,
    classes: &'a [String],
    train: usize,
    test: usize,
}

/// Writes `out/{train,test}/index.tsv`, `out/{train,test}/images/*.pgm`,
/// `out/classes.tsv` and `out/manifest.json`.
pub fn synth_generate(cfg: &SynthConfig, out: &Path) -> Result<SynthSplits> {
    let splits = synth_images(cfg)?;
    let names = cfg.class_names();
    for (dir, images) in [("train", &splits.train), ("test", &splits.test)] {
        let img_dir = out.join(dir).join("images");
        fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
        let mut index = String::new();
        for img in images.iter() {
            let path = img_dir.join(&img.name);
            fs::write(&path, encode_pgm(&img.image)).map_err(|e| Error::io(&path, e))?;
            index.push_str(&format!("{}\timages/{}\n", names[img.label], img.name));
        }
        let idx = out.join(dir).join("index.tsv");
        fs::write(&idx, index).map_err(|e| Error::io(&idx, e))?;
    }
    splits.classes.write(&out.join("classes.tsv"))?;
    let manifest = Manifest {
        generator: "ecn-synth",
        engine_version: crate::VERSION,
        config: cfg,
        classes: splits.classes.labels(),
        train: splits.train.len(),
        test: splits.test.len(),
    };
    let path = out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::format("manifest", e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(splits)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            train_count: 40,
            test_count: 20,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn default_split_counts() {
        let s = synth_images(&SynthConfig::default()).unwrap();
        assert_eq!(s.train.len() + s.test.len(), 1000);
        for k in 0..4 {
            assert_eq!(s.test.iter().filter(|i| i.label == k).count(), 50);
        }
        for img in s.train.iter().chain(&s.test) {
            assert_eq!(img.image.height, 40);
            assert!((64..=160).contains(&img.image.width));
        }
    }

    #[test]
    fn same_config_same_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        synth_generate(&small(), a.path()).unwrap();
        synth_generate(&small(), b.path()).unwrap();
        for rel in ["train/index.tsv", "test/index.tsv", "classes.tsv", "manifest.json", "test/images/test_00007.pgm"] {
            assert_eq!(fs::read(a.path().join(rel)).unwrap(), fs::read(b.path().join(rel)).unwrap(), "{rel}");
        }
    }

    #[test]
    fn splits_differ() {
        let s = synth_images(&small()).unwrap();
        assert_ne!(s.train[0].image, s.test[0].image);
    }

    #[test]
    fn written_dataset_loads() {
        let dir = tempfile::tempdir().unwrap();
        synth_generate(&small(), dir.path()).unwrap();
        let dict = ClassDictionary::read(&dir.path().join("classes.tsv")).unwrap();
        let d = super::super::load_dataset(&dir.path().join("test/index.tsv"), Some(&dict)).unwrap();
        assert_eq!(d.images.len(), 20);
        assert!(d.failures.is_empty());
        assert_eq!(d.images[3].label, 3);
    }

    #[test]
    fn bad_configs() {
        for cfg in [
            SynthConfig { min_width: 39, ..small() },
            SynthConfig { max_width: 50, min_width: 60, ..small() },
            SynthConfig { test_count: 0, ..small() },
            SynthConfig { motifs_per_class: 0, ..small() },
            SynthConfig { noise_sigma: -1.0, ..small() },
        ] {
            assert!(matches!(synth_images(&cfg), Err(Error::Config(_))));
        }
    }

    fn ncc(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let (mut num, mut da, mut db) = (0.0, 0.0, 0.0);
        for (x, y) in a.iter().zip(b) {
            num += (x - ma) * (y - mb);
            da += (x - ma).powi(2);
            db += (y - mb).powi(2);
        }
        if da == 0.0 || db == 0.0 {
            0.0
        } else {
            num / (da * db).sqrt()
        }
    }

    #[test]
    fn noiseless_single_motif_is_template_separable() {
        let cfg = SynthConfig {
            motifs_per_class: 1,
            shared_motifs: 0,
            noise_sigma: 0.0,
            train_count: 4,
            test_count: 24,
            ..SynthConfig::default()
        };
        let s = synth_images(&cfg).unwrap();
        let bank = MotifBank::new(&cfg);
        let templates: Vec<Vec<f64>> = bank.class.iter().map(|m| m[0].0.iter().map(|&v| v as f64).collect()).collect();
        for img in &s.test {
            let (w, px) = (img.image.width, &img.image.data);
            let mut best = (f64::NEG_INFINITY, usize::MAX);
            for y0 in 0..=LINE_HEIGHT - MOTIF_SIDE {
                for x0 in 0..=w - MOTIF_SIDE {
                    let win: Vec<f64> = (0..MOTIF_SIDE * MOTIF_SIDE)
                        .map(|i| px[(y0 + i / MOTIF_SIDE) * w + x0 + i % MOTIF_SIDE] as f64)
                        .collect();
                    for (k, t) in templates.iter().enumerate() {
                        let r = ncc(&win, t);
                        if r > best.0 {
                            best = (r, k);
                        }
                    }
                }
            }
            assert_eq!(best.1, img.label, "{}", img.name);
        }
    }
}
