use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BUILTIN_SEVERITY_TOML: &str = include_str!("../../data/severity.toml");
pub const SEVERITY_TABLE_VERSION: u32 = 1;

type Row<T> = [T; 5];

macro_rules! severity_section {
    ($name:ident { $($field:ident : $ty:ty),* $(,)? }) => {
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct $name {
            $(pub $field: $ty,)*
        }
    };
}

severity_section!(GaussianNoise { sigma: Row<f64> });
severity_section!(ShotNoise { photons: Row<f64> });
severity_section!(ImpulseNoise { amount: Row<f64> });
severity_section!(SpeckleNoise { sigma: Row<f64> });
severity_section!(DefocusBlur { radius: Row<f64>, alias_blur: Row<f64> });
severity_section!(GlassBlur { sigma: Row<f64>, max_delta: Row<usize>, iterations: Row<usize> });
severity_section!(MotionBlur { radius: Row<usize>, sigma: Row<f64> });
severity_section!(ZoomBlur { max_zoom: Row<f64>, step: Row<f64> });
severity_section!(GaussianBlur { sigma: Row<f64> });
severity_section!(Snow {
    loc: Row<f64>,
    scale: Row<f64>,
    zoom: Row<f64>,
    threshold: Row<f64>,
    motion_radius: Row<usize>,
    motion_sigma: Row<f64>,
    blend: Row<f64>,
});
severity_section!(Frost { image_weight: Row<f64>, frost_weight: Row<f64> });
severity_section!(Fog { strength: Row<f64>, decay: Row<f64> });
severity_section!(Brightness { delta: Row<f64> });
severity_section!(Spatter {
    loc: Row<f64>,
    scale: Row<f64>,
    sigma: Row<f64>,
    threshold: Row<f64>,
    intensity: Row<f64>,
    mud: Row<bool>,
});
severity_section!(Contrast { factor: Row<f64> });
severity_section!(Elastic { alpha: Row<f64>, sigma_frac: f64, max_shift_frac: f64 });
severity_section!(Pixelate { scale: Row<f64> });
severity_section!(Jpeg { quality: Row<u8> });
severity_section!(Saturate { factor: Row<f64>, offset: Row<f64> });
severity_section!(Cloudy { threshold: Row<f64>, opacity: Row<f64> });

/// Per-kind, per-severity corruption parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeverityTable {
    pub version: u32,
    pub gaussian_noise: GaussianNoise,
    pub shot_noise: ShotNoise,
    pub impulse_noise: ImpulseNoise,
    pub speckle_noise: SpeckleNoise,
    pub defocus_blur: DefocusBlur,
    pub glass_blur: GlassBlur,
    pub motion_blur: MotionBlur,
    pub zoom_blur: ZoomBlur,
    pub gaussian_blur: GaussianBlur,
    pub snow: Snow,
    pub frost: Frost,
    pub fog: Fog,
    pub brightness: Brightness,
    pub spatter: Spatter,
    pub contrast: Contrast,
    pub elastic: Elastic,
    pub pixelate: Pixelate,
    pub jpeg: Jpeg,
    pub saturate: Saturate,
    pub cloudy: Cloudy,
}

impl SeverityTable {
    pub fn builtin() -> SeverityTable {
        Self::from_toml(BUILTIN_SEVERITY_TOML).expect("shipped severity table parses")
    }

    pub fn from_toml(text: &str) -> Result<SeverityTable> {
        let t: SeverityTable = toml::from_str(text).map_err(|e| Error::format("severity table", e.to_string()))?;
        if t.version != SEVERITY_TABLE_VERSION {
            return Err(Error::format(
                "severity table",
                format!("version {} is not supported (expected {SEVERITY_TABLE_VERSION})", t.version),
            ));
        }
        Ok(t)
    }
}
