//! Corruption kinds for building shifted target domains.
//!
//! Nineteen ImageNet-C style corruptions in four groups plus a procedural
//! cloud-cover composite. Parameters per severity live in a versioned TOML
//! table shipped with the crate. Frost and cloudy textures, and the water
//! variant of spatter, are synthesized procedurally rather than taken from
//! photographic overlays.

mod dataset;
mod filters;
mod noise;
pub mod ops;
mod probe;
mod table;

pub use dataset::{generate_dataset, Manifest, ManifestEntry, EntryStatus, MANIFEST_FILE};
pub use filters::{blur_plane, convolve, disk_kernel, motion_blur_plane, zoom_plane};
pub use noise::{plasma_fractal, value_noise};
pub use probe::probe_images;
pub use table::{SeverityTable, BUILTIN_SEVERITY_TOML, SEVERITY_TABLE_VERSION};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::rng;

pub const DEFAULT_SEVERITY: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CorruptionKind {
    GaussianNoise,
    ShotNoise,
    ImpulseNoise,
    SpeckleNoise,
    DefocusBlur,
    GlassBlur,
    MotionBlur,
    ZoomBlur,
    GaussianBlur,
    Snow,
    Frost,
    Fog,
    Brightness,
    Spatter,
    Contrast,
    Elastic,
    Pixelate,
    Jpeg,
    Saturate,
    Cloudy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorruptionGroup {
    Noise,
    Blur,
    Weather,
    Digital,
    Cloudy,
}

impl CorruptionKind {
    /// All kinds in table order.
    pub const ALL: [CorruptionKind; 20] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::ShotNoise,
        CorruptionKind::ImpulseNoise,
        CorruptionKind::SpeckleNoise,
        CorruptionKind::DefocusBlur,
        CorruptionKind::GlassBlur,
        CorruptionKind::MotionBlur,
        CorruptionKind::ZoomBlur,
        CorruptionKind::GaussianBlur,
        CorruptionKind::Snow,
        CorruptionKind::Frost,
        CorruptionKind::Fog,
        CorruptionKind::Brightness,
        CorruptionKind::Spatter,
        CorruptionKind::Contrast,
        CorruptionKind::Elastic,
        CorruptionKind::Pixelate,
        CorruptionKind::Jpeg,
        CorruptionKind::Saturate,
        CorruptionKind::Cloudy,
    ];

    pub fn name(self) -> &'static str {
        use CorruptionKind::*;
        match self {
            GaussianNoise => "gaussian_noise",
            ShotNoise => "shot_noise",
            ImpulseNoise => "impulse_noise",
            SpeckleNoise => "speckle_noise",
            DefocusBlur => "defocus_blur",
            GlassBlur => "glass_blur",
            MotionBlur => "motion_blur",
            ZoomBlur => "zoom_blur",
            GaussianBlur => "gaussian_blur",
            Snow => "snow",
            Frost => "frost",
            Fog => "fog",
            Brightness => "brightness",
            Spatter => "spatter",
            Contrast => "contrast",
            Elastic => "elastic",
            Pixelate => "pixelate",
            Jpeg => "jpeg",
            Saturate => "saturate",
            Cloudy => "cloudy",
        }
    }

    /// Column heading used in result tables.
    pub fn short_label(self) -> &'static str {
        use CorruptionKind::*;
        match self {
            GaussianNoise => "Ga.",
            ShotNoise => "Shot",
            ImpulseNoise => "Im.",
            SpeckleNoise => "Spec.",
            DefocusBlur => "De.",
            GlassBlur => "Glass",
            MotionBlur => "Mo.",
            ZoomBlur => "Zoom",
            GaussianBlur => "Ga.",
            Snow => "Snow",
            Frost => "Frost",
            Fog => "Fog",
            Brightness => "Br.",
            Spatter => "Spat.",
            Contrast => "Co.",
            Elastic => "El.",
            Pixelate => "Pixel",
            Jpeg => "JPEG",
            Saturate => "Sa.",
            Cloudy => "Cloudy",
        }
    }

    pub fn group(self) -> CorruptionGroup {
        use CorruptionKind::*;
        match self {
            GaussianNoise | ShotNoise | ImpulseNoise | SpeckleNoise => CorruptionGroup::Noise,
            DefocusBlur | GlassBlur | MotionBlur | ZoomBlur | GaussianBlur => CorruptionGroup::Blur,
            Snow | Frost | Fog | Brightness | Spatter => CorruptionGroup::Weather,
            Contrast | Elastic | Pixelate | Jpeg | Saturate => CorruptionGroup::Digital,
            Cloudy => CorruptionGroup::Cloudy,
        }
    }

    /// Parses a comma-separated list, or `all`.
    pub fn parse_list(s: &str) -> Result<Vec<CorruptionKind>> {
        if s.trim() == "all" {
            return Ok(Self::ALL.to_vec());
        }
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let k: CorruptionKind = part.parse()?;
            if !out.contains(&k) {
                out.push(k);
            }
        }
        if out.is_empty() {
            return Err(Error::config("kinds", "no corruption kinds given"));
        }
        Ok(out)
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8, seed: u64) -> Result<Self> {
        if !(1..=5).contains(&severity) {
            return Err(Error::config("severity", format!("must be 1..=5, got {severity}")));
        }
        Ok(CorruptionSpec { kind, severity, seed })
    }
}

/// Corrupts `image` with the built-in severity table. `key` identifies the
/// image (normally its path) and, with the seed and kind, selects the
/// random stream; the severity does not, so severities of one image share
/// their noise draws.
pub fn corrupt_image(image: &Image, spec: &CorruptionSpec, key: &str) -> Result<Image> {
    corrupt_image_with(image, spec, key, &SeverityTable::builtin())
}

pub fn corrupt_image_with(image: &Image, spec: &CorruptionSpec, key: &str, table: &SeverityTable) -> Result<Image> {
    use CorruptionKind::*;
    CorruptionSpec::new(spec.kind, spec.severity, spec.seed)?;
    if image.is_empty() {
        return Ok(image.clone());
    }
    let s = spec.severity as usize - 1;
    let mut rng = rng::stream(spec.seed, &["corrupt".into(), key.into(), spec.kind.name().into()]);
    let t = table;
    Ok(match spec.kind {
        GaussianNoise => ops::gaussian_noise(image, t.gaussian_noise.sigma[s], &mut rng),
        ShotNoise => ops::shot_noise(image, t.shot_noise.photons[s], &mut rng),
        ImpulseNoise => ops::impulse_noise(image, t.impulse_noise.amount[s], &mut rng),
        SpeckleNoise => ops::speckle_noise(image, t.speckle_noise.sigma[s], &mut rng),
        DefocusBlur => ops::defocus_blur(image, t.defocus_blur.radius[s], t.defocus_blur.alias_blur[s]),
        GlassBlur => ops::glass_blur(
            image,
            t.glass_blur.sigma[s],
            t.glass_blur.max_delta[s],
            t.glass_blur.iterations[s],
            &mut rng,
        ),
        MotionBlur => ops::motion_blur(image, t.motion_blur.radius[s], t.motion_blur.sigma[s], &mut rng),
        ZoomBlur => ops::zoom_blur(image, t.zoom_blur.max_zoom[s], t.zoom_blur.step[s]),
        GaussianBlur => {
            let mut out = crate::augment::gaussian_blur(image, t.gaussian_blur.sigma[s]);
            out.clamp01();
            out
        }
        Snow => {
            let c = &t.snow;
            ops::snow(
                image,
                c.loc[s],
                c.scale[s],
                c.zoom[s],
                c.threshold[s],
                c.motion_radius[s],
                c.motion_sigma[s],
                c.blend[s],
                &mut rng,
            )
        }
        Frost => ops::frost(image, t.frost.image_weight[s], t.frost.frost_weight[s], &mut rng),
        Fog => ops::fog(image, t.fog.strength[s], t.fog.decay[s], &mut rng),
        Brightness => ops::brightness(image, t.brightness.delta[s]),
        Spatter => {
            let c = &t.spatter;
            ops::spatter(
                image,
                c.loc[s],
                c.scale[s],
                c.sigma[s],
                c.threshold[s],
                c.intensity[s],
                c.mud[s],
                &mut rng,
            )
        }
        Contrast => ops::contrast(image, t.contrast.factor[s]),
        Elastic => ops::elastic(
            image,
            t.elastic.alpha[s],
            t.elastic.sigma_frac,
            t.elastic.max_shift_frac,
            &mut rng,
        ),
        Pixelate => ops::pixelate(image, t.pixelate.scale[s]),
        Jpeg => ops::jpeg(image, t.jpeg.quality[s])?,
        Saturate => ops::saturate(image, t.saturate.factor[s], t.saturate.offset[s]),
        Cloudy => ops::cloudy(image, t.cloudy.threshold[s], t.cloudy.opacity[s], &mut rng),
    })
}
