//! Manifest validation. Violations are reported as data, never as errors.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use super::caption::{leaked_terms, placeholder_count};
use super::imageio;
use super::manifest::{DatasetManifest, ImageRecord, SubjectRecord, SCHEMA_VERSION};
use crate::error::Error;

pub const FULL_SUBJECTS: usize = 20;
pub const FULL_TRAIN_PER_SUBJECT: usize = 5;
pub const FULL_TEST_PER_SUBJECT: usize = 10;
pub const FULL_CAPTIONS_PER_TEST_IMAGE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 20 subjects, 5 train + 10 test images each, 10 captions per test image.
    Full,
    /// Counts free; every test image still needs at least one caption.
    Toy,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Profile::Full),
            "toy" => Ok(Profile::Toy),
            other => Err(Error::Usage(format!("unknown profile `{other}` (expected full|toy)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    SchemaVersion,
    SubjectCount,
    DuplicateSubject,
    Supercategory,
    TrainCount,
    TestCount,
    SplitOverlap,
    CaptionCount,
    Placeholder,
    Leak,
    MissingMask,
    MissingFile,
    MaskNotBinary,
    MaskShape,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{:?}]", self.kind)?;
        if let Some(s) = &self.subject {
            write!(f, " subject={s}")?;
        }
        if let Some(i) = &self.image {
            write!(f, " image={i}")?;
        }
        write!(f, ": {}", self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub profile: Profile,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }
}

struct Collector {
    out: Vec<Violation>,
}

impl Collector {
    fn push(&mut self, kind: ViolationKind, subject: Option<&str>, image: Option<&str>, message: String) {
        self.out.push(Violation {
            kind,
            subject: subject.map(str::to_string),
            image: image.map(str::to_string),
            message,
        });
    }
}

pub fn validate_manifest(manifest: &DatasetManifest, profile: Profile) -> ValidationReport {
    let mut c = Collector { out: Vec::new() };
    if manifest.schema_version != SCHEMA_VERSION {
        c.push(
            ViolationKind::SchemaVersion,
            None,
            None,
            format!("schema_version {} (expected {SCHEMA_VERSION})", manifest.schema_version),
        );
    }
    if profile == Profile::Full && manifest.subjects.len() != FULL_SUBJECTS {
        c.push(
            ViolationKind::SubjectCount,
            None,
            None,
            format!("{} subjects (expected {FULL_SUBJECTS})", manifest.subjects.len()),
        );
    }
    let mut ids = BTreeSet::new();
    for subject in &manifest.subjects {
        if !ids.insert(subject.subject_id.as_str()) {
            c.push(
                ViolationKind::DuplicateSubject,
                Some(&subject.subject_id),
                None,
                "subject id appears more than once".into(),
            );
        }
        check_subject(manifest, subject, profile, &mut c);
    }
    ValidationReport {
        profile,
        violations: c.out,
    }
}

fn check_subject(manifest: &DatasetManifest, s: &SubjectRecord, profile: Profile, c: &mut Collector) {
    let sid = Some(s.subject_id.as_str());
    let sc = &s.supercategory;
    if sc.is_empty() || sc.chars().any(char::is_whitespace) {
        c.push(
            ViolationKind::Supercategory,
            sid,
            None,
            format!("supercategory {sc:?} must be a single whitespace-free token"),
        );
    }
    if profile == Profile::Full {
        if s.train_images.len() != FULL_TRAIN_PER_SUBJECT {
            c.push(
                ViolationKind::TrainCount,
                sid,
                None,
                format!("{} train images (expected {FULL_TRAIN_PER_SUBJECT})", s.train_images.len()),
            );
        }
        if s.test_images.len() != FULL_TEST_PER_SUBJECT {
            c.push(
                ViolationKind::TestCount,
                sid,
                None,
                format!("{} test images (expected {FULL_TEST_PER_SUBJECT})", s.test_images.len()),
            );
        }
    } else if s.train_images.is_empty() {
        c.push(ViolationKind::TrainCount, sid, None, "no train images".into());
    }

    let train: BTreeSet<&str> = s.train_images.iter().map(|r| r.image.as_str()).collect();
    for r in &s.test_images {
        if train.contains(r.image.as_str()) {
            c.push(
                ViolationKind::SplitOverlap,
                sid,
                Some(&r.image),
                "image appears in both train and test splits".into(),
            );
        }
    }

    let forbidden = [s.subject_id.as_str(), sc.as_str()];
    for r in &s.test_images {
        let n = r.captions.len();
        let bad_count = match profile {
            Profile::Full => n != FULL_CAPTIONS_PER_TEST_IMAGE,
            Profile::Toy => n == 0,
        };
        if bad_count {
            c.push(
                ViolationKind::CaptionCount,
                sid,
                Some(&r.image),
                match profile {
                    Profile::Full => format!("{n} captions (expected {FULL_CAPTIONS_PER_TEST_IMAGE})"),
                    Profile::Toy => "test image has no captions".into(),
                },
            );
        }
        if profile == Profile::Full {
            let distinct: BTreeSet<&String> = r.captions.iter().collect();
            if distinct.len() != n {
                c.push(
                    ViolationKind::CaptionCount,
                    sid,
                    Some(&r.image),
                    "captions are not unique".into(),
                );
            }
        }
        for cap in &r.captions {
            let found = placeholder_count(cap);
            if found != 1 {
                c.push(
                    ViolationKind::Placeholder,
                    sid,
                    Some(&r.image),
                    format!("caption {cap:?} has {found} `{{}}` placeholders"),
                );
            }
            let leaks = leaked_terms(cap, &forbidden);
            if !leaks.is_empty() {
                c.push(
                    ViolationKind::Leak,
                    sid,
                    Some(&r.image),
                    format!("caption {cap:?} mentions {}", leaks.join(", ")),
                );
            }
        }
        check_files(manifest, s, r, false, c);
    }
    for r in &s.train_images {
        check_files(manifest, s, r, true, c);
    }
}

fn check_files(manifest: &DatasetManifest, s: &SubjectRecord, r: &ImageRecord, mask_required: bool, c: &mut Collector) {
    let sid = Some(s.subject_id.as_str());
    let img = Some(r.image.as_str());
    let dims = match imageio::image_dimensions(&manifest.resolve(&r.image)) {
        Ok(d) => Some(d),
        Err(e) => {
            c.push(ViolationKind::MissingFile, sid, img, e.to_string());
            None
        }
    };
    let Some(mask_rel) = &r.mask else {
        if mask_required {
            c.push(ViolationKind::MissingMask, sid, img, "train image has no mask".into());
        }
        return;
    };
    match imageio::load_mask_raw(&manifest.resolve(mask_rel)) {
        Ok(mask) => {
            let bad = mask.iter().filter(|&&v| v != 0 && v != 255).count();
            if bad > 0 {
                c.push(
                    ViolationKind::MaskNotBinary,
                    sid,
                    img,
                    format!("mask {mask_rel} has {bad} pixels that are neither 0 nor 255"),
                );
            }
            if let Some(d) = dims {
                if mask.dim() != d {
                    c.push(
                        ViolationKind::MaskShape,
                        sid,
                        img,
                        format!("mask is {:?}, image is {:?}", mask.dim(), d),
                    );
                }
            }
        }
        Err(e) => c.push(ViolationKind::MissingFile, sid, img, e.to_string()),
    }
}
