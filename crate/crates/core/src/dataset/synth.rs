//! Procedural toy datasets: one textured shape per subject composited over
//! varied backgrounds, with exact masks and auto-generated test captions.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::imageio;
use super::manifest::{DatasetManifest, ImageRecord, SubjectRecord, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::tensor::LatentTensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_subjects: usize,
    pub images_per_subject: usize,
    pub train_fraction: f64,
    pub image_size: usize,
    pub captions_per_test_image: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_subjects: 2,
            images_per_subject: 15,
            train_fraction: 1.0 / 3.0,
            image_size: 16,
            captions_per_test_image: 3,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn full_profile(seed: u64) -> Self {
        Self {
            n_subjects: 20,
            images_per_subject: 15,
            train_fraction: 1.0 / 3.0,
            image_size: 16,
            captions_per_test_image: 10,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 {
            return Err(Error::Spec("n_subjects must be >= 1".into()));
        }
        if self.images_per_subject == 0 {
            return Err(Error::Spec("images_per_subject must be >= 1".into()));
        }
        if self.image_size < 8 {
            return Err(Error::Spec("image_size must be >= 8".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::Spec("train_fraction must be in (0, 1]".into()));
        }
        if self.captions_per_test_image == 0 || self.captions_per_test_image > CAPTION_TEMPLATES {
            return Err(Error::Spec(format!(
                "captions_per_test_image must be in 1..={CAPTION_TEMPLATES}"
            )));
        }
        Ok(())
    }

    pub fn train_count(&self) -> usize {
        ((self.images_per_subject as f64 * self.train_fraction).round() as usize).clamp(1, self.images_per_subject)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Disc,
    Square,
    Triangle,
    Cross,
    Ring,
    Diamond,
}

pub const SHAPES: [ShapeKind; 6] = [
    ShapeKind::Disc,
    ShapeKind::Square,
    ShapeKind::Triangle,
    ShapeKind::Cross,
    ShapeKind::Ring,
    ShapeKind::Diamond,
];

impl ShapeKind {
    pub fn word(self) -> &'static str {
        match self {
            ShapeKind::Disc => "disc",
            ShapeKind::Square => "square",
            ShapeKind::Triangle => "triangle",
            ShapeKind::Cross => "cross",
            ShapeKind::Ring => "ring",
            ShapeKind::Diamond => "diamond",
        }
    }

    /// Inclusion test in shape-normalized coordinates (unit radius at origin).
    pub fn contains(self, u: f64, v: f64) -> bool {
        match self {
            ShapeKind::Disc => u * u + v * v <= 1.0,
            ShapeKind::Square => u.abs() <= 0.85 && v.abs() <= 0.85,
            ShapeKind::Triangle => (-0.9..=0.8).contains(&v) && u.abs() <= (v + 0.9) / 1.7,
            ShapeKind::Cross => (u.abs() <= 0.33 && v.abs() <= 1.0) || (v.abs() <= 0.33 && u.abs() <= 1.0),
            ShapeKind::Ring => {
                let r2 = u * u + v * v;
                (0.3..=1.0).contains(&r2)
            }
            ShapeKind::Diamond => u.abs() + v.abs() <= 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Texture {
    Solid,
    Striped,
    Dotted,
}

const TEXTURES: [Texture; 3] = [Texture::Solid, Texture::Striped, Texture::Dotted];

const PALETTE: [(&str, [f64; 3]); 12] = [
    ("red", [0.85, 0.15, 0.15]),
    ("orange", [0.95, 0.55, 0.1]),
    ("yellow", [0.95, 0.9, 0.2]),
    ("green", [0.2, 0.7, 0.25]),
    ("teal", [0.1, 0.6, 0.6]),
    ("blue", [0.15, 0.3, 0.85]),
    ("purple", [0.55, 0.2, 0.7]),
    ("pink", [0.95, 0.5, 0.7]),
    ("brown", [0.5, 0.3, 0.15]),
    ("gray", [0.5, 0.5, 0.5]),
    ("white", [0.95, 0.95, 0.95]),
    ("black", [0.08, 0.08, 0.08]),
];

const SUBJECT_COLORS: [usize; 8] = [0, 5, 2, 3, 6, 1, 7, 4];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackgroundPattern {
    Gradient,
    Stripes,
    Checker,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Background {
    pub pattern: BackgroundPattern,
    pub colors: [usize; 2],
    pub angle: f64,
    pub frequency: f64,
}

impl Background {
    fn color_at(&self, x: f64, y: f64, size: f64) -> [f64; 3] {
        let (c0, c1) = (PALETTE[self.colors[0]].1, PALETTE[self.colors[1]].1);
        let (s, co) = self.angle.sin_cos();
        let proj = ((x + 0.5) * co + (y + 0.5) * s) / size;
        let mix = match self.pattern {
            BackgroundPattern::Gradient => ((proj + 1.0) / 2.0).clamp(0.0, 1.0),
            BackgroundPattern::Stripes => 0.5 * (1.0 + (std::f64::consts::TAU * self.frequency * proj).sin()),
            BackgroundPattern::Checker => {
                let cell = (size / self.frequency.max(1.0)).max(1.0);
                (((x / cell).floor() + (y / cell).floor()) as i64).rem_euclid(2) as f64
            }
        };
        [0, 1, 2].map(|k| c0[k] * (1.0 - mix) + c1[k] * mix)
    }

    fn pattern_words(&self) -> &'static str {
        match self.pattern {
            BackgroundPattern::Gradient => "smooth gradient",
            BackgroundPattern::Stripes => "striped",
            BackgroundPattern::Checker => "checkered",
        }
    }
}

/// Identity of one synthetic subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectStyle {
    pub shape: ShapeKind,
    pub texture: Texture,
    pub color: usize,
}

impl SubjectStyle {
    pub fn for_index(i: usize) -> Self {
        Self {
            shape: SHAPES[i % SHAPES.len()],
            texture: TEXTURES[(i / SHAPES.len()) % TEXTURES.len()],
            color: SUBJECT_COLORS[(i + i / SHAPES.len()) % SUBJECT_COLORS.len()],
        }
    }

    fn color_at(&self, x: usize, y: usize) -> [f64; 3] {
        let base = PALETTE[self.color].1;
        let dim = match self.texture {
            Texture::Solid => false,
            Texture::Striped => (x + y) / 2 % 2 == 1,
            Texture::Dotted => x % 3 == 1 && y % 3 == 1,
        };
        if dim {
            base.map(|v| v * 0.45)
        } else {
            base
        }
    }
}

/// Composition parameters of one generated image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Composition {
    pub image_id: String,
    pub size: usize,
    pub style: SubjectStyle,
    pub center: (f64, f64),
    pub radius: f64,
    pub background: Background,
}

impl Composition {
    fn inside(&self, x: usize, y: usize) -> bool {
        let u = (x as f64 + 0.5 - self.center.0) / self.radius;
        let v = (y as f64 + 0.5 - self.center.1) / self.radius;
        self.style.shape.contains(u, v)
    }

    pub fn subject_mask(&self) -> Array2<u8> {
        Array2::from_shape_fn((self.size, self.size), |(y, x)| u8::from(self.inside(x, y)))
    }

    fn render_with(&self, subject: bool, background: bool) -> LatentTensor {
        let n = self.size;
        let mut t = LatentTensor::zeros(3, n, n);
        let buf = t.as_mut_slice();
        for y in 0..n {
            for x in 0..n {
                let rgb = if self.inside(x, y) {
                    subject.then(|| self.style.color_at(x, y))
                } else {
                    background.then(|| self.background.color_at(x as f64, y as f64, n as f64))
                };
                if let Some(rgb) = rgb {
                    for c in 0..3 {
                        buf[c * n * n + y * n + x] = rgb[c] * 2.0 - 1.0;
                    }
                }
            }
        }
        t
    }

    /// Full composite in `[-1, 1]`.
    pub fn render(&self) -> LatentTensor {
        self.render_with(true, true)
    }

    /// The subject alone; every other pixel is 0 (mid-gray).
    pub fn render_subject_layer(&self) -> LatentTensor {
        self.render_with(true, false)
    }

    /// The background with the subject region left at 0.
    pub fn render_background_layer(&self) -> LatentTensor {
        self.render_with(false, true)
    }

    fn region(&self) -> &'static str {
        let third = |v: f64| ((v / self.size as f64) * 3.0).floor().clamp(0.0, 2.0) as usize;
        const NAMES: [[&str; 3]; 3] = [
            ["upper left", "top", "upper right"],
            ["left side", "center", "right side"],
            ["lower left", "bottom", "lower right"],
        ];
        NAMES[third(self.center.1)][third(self.center.0)]
    }

    /// Candidate captions derived from the composition; none name the subject.
    pub fn caption_candidates(&self) -> Vec<String> {
        let c0 = PALETTE[self.background.colors[0]].0;
        let c1 = PALETTE[self.background.colors[1]].0;
        let pat = self.background.pattern_words();
        let region = self.region();
        let size = if self.radius / (self.size as f64) < 0.25 { "small" } else { "large" };
        let ph = "{}";
        vec![
            format!("a photo of {ph} on a {c0} and {c1} {pat} background"),
            format!("{ph} in front of a {pat} backdrop"),
            format!("a picture of {ph} near the {region} of the frame"),
            format!("a {size} {ph} against {c0} tones"),
            format!("{ph} placed over a {c1} {pat} surface"),
            format!("a close view of {ph} with a {c0} background"),
            format!("a {c0} {pat} scene with {ph} in the {region}"),
            format!("{ph} resting on a pattern of {c0} and {c1}"),
            format!("an image showing {ph} toward the {region}"),
            format!("a simple picture of {ph} surrounded by {c1}"),
            format!("{ph} on {pat} wallpaper"),
            format!("a bright shot of a {size} {ph} in the {region}"),
        ]
    }
}

pub const CAPTION_TEMPLATES: usize = 12;

/// A generated dataset held in memory until written to disk.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub spec: SynthSpec,
    pub manifest: DatasetManifest,
    /// Keyed by image id.
    pub compositions: BTreeMap<String, Composition>,
}

pub fn synth_toy_dataset(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.image_size as f64;
    let n_train = spec.train_count();
    let mut subjects = Vec::with_capacity(spec.n_subjects);
    let mut compositions = BTreeMap::new();
    let patterns = [BackgroundPattern::Gradient, BackgroundPattern::Stripes, BackgroundPattern::Checker];

    for si in 0..spec.n_subjects {
        let style = SubjectStyle::for_index(si);
        let subject_id = format!("subject_{si:02}");
        let mut train = Vec::new();
        let mut test = Vec::new();
        for ii in 0..spec.images_per_subject {
            let is_train = ii < n_train;
            let stem = if is_train {
                format!("{subject_id}/train_{ii:02}")
            } else {
                format!("{subject_id}/test_{:02}", ii - n_train)
            };
            let radius = n * rng.random_range(0.22..0.3);
            let center = (rng.random_range(radius..n - radius), rng.random_range(radius..n - radius));
            let c0 = loop {
                let c = rng.random_range(0..PALETTE.len());
                if c != style.color {
                    break c;
                }
            };
            let c1 = loop {
                let c = rng.random_range(0..PALETTE.len());
                if c != style.color && c != c0 {
                    break c;
                }
            };
            let background = Background {
                pattern: patterns[rng.random_range(0..patterns.len())],
                colors: [c0, c1],
                angle: rng.random_range(0.0..std::f64::consts::TAU),
                frequency: rng.random_range(1.0..3.0),
            };
            let comp = Composition {
                image_id: stem.clone(),
                size: spec.image_size,
                style: style.clone(),
                center,
                radius,
                background,
            };
            let image = format!("{stem}.png");
            if is_train {
                train.push(ImageRecord {
                    image,
                    mask: Some(format!("{stem}_mask.png")),
                    captions: Vec::new(),
                });
            } else {
                let mut caps = comp.caption_candidates();
                caps.shuffle(&mut rng);
                caps.truncate(spec.captions_per_test_image);
                test.push(ImageRecord {
                    image,
                    mask: None,
                    captions: caps,
                });
            }
            compositions.insert(stem, comp);
        }
        subjects.push(SubjectRecord {
            subject_id,
            supercategory: style.shape.word().to_string(),
            train_images: train,
            test_images: test,
        });
    }

    Ok(SynthDataset {
        spec: spec.clone(),
        manifest: DatasetManifest {
            schema_version: SCHEMA_VERSION,
            root: ".".into(),
            subjects,
            root_path: Default::default(),
        },
        compositions,
    })
}

impl SynthDataset {
    pub fn composition(&self, image_id: &str) -> Option<&Composition> {
        self.compositions.get(image_id)
    }

    /// Write images, masks, `manifest.json` and `compositions.json` under `dir`.
    /// Returns the manifest with its root resolved to `dir`.
    pub fn write(&self, dir: &Path) -> Result<DatasetManifest> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = self.manifest.clone();
        manifest.root_path = dir.to_path_buf();
        for subject in &manifest.subjects {
            for rec in subject.train_images.iter().chain(&subject.test_images) {
                let comp = &self.compositions[&rec.id()];
                imageio::save_rgb(&comp.render(), &manifest.resolve(&rec.image))?;
                if let Some(mask) = &rec.mask {
                    imageio::write_bytes(&manifest.resolve(mask), &imageio::encode_png_mask(&comp.subject_mask()))?;
                }
            }
        }
        manifest.save(&dir.join("manifest.json"))?;
        let comps = serde_json::to_string_pretty(&self.compositions).expect("compositions serialize");
        imageio::write_bytes(&dir.join("compositions.json"), comps.as_bytes())?;
        Ok(manifest)
    }
}

pub fn load_compositions(path: &Path) -> Result<BTreeMap<String, Composition>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
