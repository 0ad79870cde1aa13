//! Image corpora: on-disk container, synthetic generator, epoch plans.
//!
//! A corpus directory holds `manifest.json` and `images.bin`, the latter a
//! plain concatenation of `H×W×3` byte images in sample-id order.

mod plan;
mod synth;

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use crc::{Crc, CRC_64_XZ};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageView;

pub use plan::{epoch_plan, EpochPlan, PLAN_STREAM};
pub use synth::{synth_corpus, SynthSpec};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const IMAGES_FILE: &str = "images.bin";
const FORMAT: &str = "tinyvit-corpus/1";
const CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

/// Read access to samples. Label reads go through [`SampleSource::label`]
/// only, so they can be audited.
pub trait SampleSource: Sync {
    fn num_samples(&self) -> usize;
    fn num_classes(&self) -> usize;
    /// `(height, width)` of every image.
    fn image_size(&self) -> (usize, usize);
    fn image(&self, sample_id: usize) -> ImageView<'_>;
    fn label(&self, sample_id: usize) -> Option<u32>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub num_samples: usize,
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    /// Bytes per image, `height · width · 3`.
    pub stride: usize,
    pub images: String,
    pub images_crc64: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    manifest: Manifest,
    pixels: Vec<u8>,
}

impl Corpus {
    pub fn new(
        num_classes: usize,
        (height, width): (usize, usize),
        pixels: Vec<u8>,
        labels: Option<Vec<u32>>,
    ) -> Result<Self> {
        let stride = height * width * 3;
        if stride == 0 || pixels.is_empty() || pixels.len() % stride != 0 {
            return Err(Error::Corpus(format!(
                "{} pixel bytes are not a positive multiple of {stride}",
                pixels.len()
            )));
        }
        let num_samples = pixels.len() / stride;
        let manifest = Manifest {
            format: FORMAT.into(),
            num_samples,
            num_classes,
            height,
            width,
            stride,
            images: IMAGES_FILE.into(),
            images_crc64: CRC64.checksum(&pixels),
            labels,
        };
        Self::check(&manifest)?;
        Ok(Corpus { manifest, pixels })
    }

    fn check(m: &Manifest) -> Result<()> {
        if m.format != FORMAT {
            return Err(Error::Corpus(format!("unknown format {:?}", m.format)));
        }
        if m.num_classes == 0 || m.num_samples == 0 || m.stride != m.height * m.width * 3 {
            return Err(Error::Corpus("inconsistent manifest".into()));
        }
        if let Some(labels) = &m.labels {
            if labels.len() != m.num_samples {
                return Err(Error::Corpus("label count differs from sample count".into()));
            }
            if let Some(bad) = labels.iter().find(|&&l| l as usize >= m.num_classes) {
                return Err(Error::Corpus(format!("label {bad} out of range")));
            }
        }
        Ok(())
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.manifest.labels.as_deref()
    }

    /// Samples whose id satisfies `keep`, renumbered densely.
    pub fn subset(&self, keep: impl Fn(usize) -> bool) -> Result<Corpus> {
        let s = self.manifest.stride;
        let ids: Vec<usize> = (0..self.manifest.num_samples).filter(|&i| keep(i)).collect();
        let pixels = ids.iter().flat_map(|&i| &self.pixels[i * s..(i + 1) * s]).copied().collect();
        let labels = self.labels().map(|l| ids.iter().map(|&i| l[i]).collect());
        Corpus::new(
            self.manifest.num_classes,
            (self.manifest.height, self.manifest.width),
            pixels,
            labels,
        )
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let images = dir.join(IMAGES_FILE);
        fs::write(&images, &self.pixels).map_err(|e| Error::io(&images, e))?;
        let manifest = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        fs::write(&manifest, json + "\n").map_err(|e| Error::io(&manifest, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::Corpus(format!("manifest: {e}")))?;
        Self::check(&manifest)?;
        let ipath = dir.join(&manifest.images);
        let pixels = fs::read(&ipath).map_err(|e| Error::io(&ipath, e))?;
        if pixels.len() != manifest.num_samples * manifest.stride {
            return Err(Error::Corpus(format!(
                "{} holds {} bytes, manifest implies {}",
                ipath.display(),
                pixels.len(),
                manifest.num_samples * manifest.stride
            )));
        }
        if CRC64.checksum(&pixels) != manifest.images_crc64 {
            return Err(Error::Corpus("image data checksum mismatch".into()));
        }
        Ok(Corpus { manifest, pixels })
    }
}

impl SampleSource for Corpus {
    fn num_samples(&self) -> usize {
        self.manifest.num_samples
    }

    fn num_classes(&self) -> usize {
        self.manifest.num_classes
    }

    fn image_size(&self) -> (usize, usize) {
        (self.manifest.height, self.manifest.width)
    }

    fn image(&self, sample_id: usize) -> ImageView<'_> {
        let s = self.manifest.stride;
        ImageView::new(
            self.manifest.height,
            self.manifest.width,
            &self.pixels[sample_id * s..(sample_id + 1) * s],
        )
        .expect("stride matches shape")
    }

    fn label(&self, sample_id: usize) -> Option<u32> {
        self.manifest.labels.as_ref().map(|l| l[sample_id])
    }
}

/// Wraps a source and counts label reads.
pub struct LabelAudit<'a, S: SampleSource> {
    inner: &'a S,
    reads: AtomicUsize,
}

impl<'a, S: SampleSource> LabelAudit<'a, S> {
    pub fn new(inner: &'a S) -> Self {
        LabelAudit {
            inner,
            reads: AtomicUsize::new(0),
        }
    }

    pub fn label_reads(&self) -> usize {
        self.reads.load(Ordering::SeqCst)
    }
}

impl<S: SampleSource> SampleSource for LabelAudit<'_, S> {
    fn num_samples(&self) -> usize {
        self.inner.num_samples()
    }

    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    fn image_size(&self) -> (usize, usize) {
        self.inner.image_size()
    }

    fn image(&self, sample_id: usize) -> ImageView<'_> {
        self.inner.image(sample_id)
    }

    fn label(&self, sample_id: usize) -> Option<u32> {
        self.reads.fetch_add(1, Ordering::SeqCst);
        self.inner.label(sample_id)
    }
}
