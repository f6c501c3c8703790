//! Project configuration: one TOML document with a table per stage.
//!
//! Every table is optional and falls back to its defaults. Relative paths
//! resolve against the directory of the config file.

use std::path::{Path, PathBuf};

use advcat::attack::{AttackConfig, EvalConfig};
use advcat::calibrate::SyntheticPrinter;
use advcat::detect::SurrogateTrainConfig;
use advcat::mesh::io::{parse_toml, read_text};
use advcat::texture::{Palette, Rgb, SynthSettings};
use advcat::topoproj::ZipParams;
use advcat::warp::Preset;
use advcat::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectConfig {
    /// Master seed; also replaces the `seed` of the attack and eval tables.
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    /// Palette colors; the woodland palette when absent.
    pub palette: Option<Vec<Rgb>>,
    /// Built-in garment for `zip` and `warp` when no mesh is given.
    pub garment: GarmentChoice,
    pub assets: Assets,
    pub synth: SynthSettings,
    pub zip: ZipParams,
    pub warp: WarpSection,
    pub render: RenderSection,
    pub calibrate: CalibrateSection,
    pub surrogate: SurrogateSection,
    pub backgrounds: BackgroundSection,
    pub attack: AttackConfig,
    pub eval: EvalConfig,
    pub gradcheck: GradcheckSection,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GarmentChoice {
    #[default]
    Cylinder,
    Shirt,
}

/// Input files. Each is optional; subcommands that need one say so.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Assets {
    /// OBJ garment mesh (texture coordinates are the GeoProj).
    pub mesh: Option<PathBuf>,
    pub geo: Option<PathBuf>,
    pub topo: Option<PathBuf>,
    pub seams: Option<PathBuf>,
    /// Starting layout for `zip`; rigid piece placement when absent.
    pub zip_init: Option<PathBuf>,
    /// Texture parameters (as written by `synth` or `attack`).
    pub params: Option<PathBuf>,
    /// Exported hard texture image, snapped back to the palette.
    pub texture: Option<PathBuf>,
    pub surrogate: Option<PathBuf>,
    pub color_model: Option<PathBuf>,
    /// Calibration pairs CSV (`R,G,B,R*,G*,B*`).
    pub pairs: Option<PathBuf>,
}

impl Assets {
    fn paths_mut(&mut self) -> [(&'static str, &mut Option<PathBuf>); 10] {
        [
            ("mesh", &mut self.mesh),
            ("geo", &mut self.geo),
            ("topo", &mut self.topo),
            ("seams", &mut self.seams),
            ("zip_init", &mut self.zip_init),
            ("params", &mut self.params),
            ("texture", &mut self.texture),
            ("surrogate", &mut self.surrogate),
            ("color_model", &mut self.color_model),
            ("pairs", &mut self.pairs),
        ]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WarpSection {
    /// Shear strain `s` of `y' = y + s (x - cx)`.
    pub shear: f64,
    pub size: usize,
    /// Checkerboard cell in GeoProj units.
    pub cell: f64,
    pub angle: f64,
}

impl Default for WarpSection {
    fn default() -> Self {
        Self {
            shear: 0.1,
            size: 128,
            cell: 0.1,
            angle: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderSection {
    pub ring_size: usize,
    pub cols: usize,
    /// Mesh deformation applied to every view.
    pub preset: Preset,
    pub ambient: f64,
}

impl Default for RenderSection {
    fn default() -> Self {
        Self {
            ring_size: 37,
            cols: 8,
            preset: Preset::None,
            ambient: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrateSection {
    /// Lattice size per channel of the synthetic printer palette.
    pub palette_n: usize,
    pub d_max: u32,
    pub splits: usize,
    pub printer: SyntheticPrinter,
}

impl Default for CalibrateSection {
    fn default() -> Self {
        Self {
            palette_n: 15,
            d_max: 10,
            splits: 20,
            printer: SyntheticPrinter::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateSection {
    /// Person renders; the backgrounds are added as person-free images.
    pub n_person: usize,
    pub train: SurrogateTrainConfig,
}

impl Default for SurrogateSection {
    fn default() -> Self {
        Self {
            n_person: 480,
            train: SurrogateTrainConfig::default(),
        }
    }
}

/// Procedural background sets (seed, count) per purpose.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackgroundSection {
    pub size: usize,
    pub surrogate_seed: u64,
    pub n_surrogate: usize,
    pub train_seed: u64,
    pub n_train: usize,
    pub eval_seed: u64,
    pub n_eval: usize,
}

impl Default for BackgroundSection {
    fn default() -> Self {
        Self {
            size: 128,
            surrogate_seed: 100,
            n_surrogate: 120,
            train_seed: 200,
            n_train: 32,
            eval_seed: 300,
            n_eval: 64,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckSection {
    pub n_params: usize,
    pub tau: f64,
    pub texture_tolerance: f64,
    pub end_to_end_tolerance: f64,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        Self {
            n_params: 64,
            tau: 0.3,
            texture_tolerance: 1e-4,
            end_to_end_tolerance: 1e-3,
        }
    }
}

impl ProjectConfig {
    /// Reads, resolves and validates a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: ProjectConfig = parse_toml(&read_text(path)?, "project config")?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        cfg.resolve(&base)?;
        Ok(cfg)
    }

    /// Makes relative paths absolute against `base` and checks they exist.
    pub fn resolve(&mut self, base: &Path) -> Result<()> {
        if let Some(out) = &self.out {
            if out.is_relative() {
                self.out = Some(base.join(out));
            }
        }
        for (name, slot) in self.assets.paths_mut() {
            if let Some(p) = slot {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
                if !p.exists() {
                    return Err(Error::Validation(format!(
                        "assets.{name}: {} does not exist",
                        p.display()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn palette(&self) -> Result<Palette> {
        match &self.palette {
            Some(colors) => Palette::new(colors.clone()),
            None => Ok(Palette::woodland()),
        }
    }
}
