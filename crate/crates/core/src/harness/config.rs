//! Run configuration in a line-oriented `key = value` text format.
//!
//! Blank lines and everything after `#` are ignored. Keys:
//!
//! | key | meaning |
//! |-----|---------|
//! | `mode` | one of the [`Mode`] names, e.g. `fit-gaussians` |
//! | `seed` | master seed |
//! | `iterations` | optimizer steps |
//! | `lr_scale` | multiplier on the texture fitting rates |
//! | `lr_g`, `lr_d` | generator and discriminator Adam rates |
//! | `lr_hair` | Adam rate of the silhouette fit |
//! | `image_size`, `texture_resolution` | render and texture edge lengths |
//! | `views`, `scenes` | dataset size |
//! | `components` | blend-shape components kept by `build-pca` |
//! | `focal`, `radius`, `pitch` | camera ring |
//! | `pose_swap`, `drop_probability` | training probabilities |
//! | `omega`, `omegas` | guidance factor and the sweep list |
//! | `yaws` | comma-separated yaw sweep in degrees |
//! | `face_seed`, `hair_seed` | latent seeds for sampling and editing |
//! | `log_every`, `checkpoint_every` | cadences in steps |
//! | `out_dir`, `checkpoint` | paths |
//! | `emit_float` | write float dumps instead of PNG |
//! | `weight.<term>` | loss weight override (`rgb`, `mask`, `seg`, `seg_mesh`, `pos`, `scale`, `uv`, `adv`, `r1_rgb`, `r1_mask`) |

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::losses::LossWeights;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    GenData,
    FitHair,
    BuildPca,
    FitGaussians,
    TrainToy,
    Sample,
    Edit,
    CfgSweep,
    Render,
    CheckGrads,
}

impl Mode {
    pub const ALL: [Mode; 10] = [
        Mode::GenData,
        Mode::FitHair,
        Mode::BuildPca,
        Mode::FitGaussians,
        Mode::TrainToy,
        Mode::Sample,
        Mode::Edit,
        Mode::CfgSweep,
        Mode::Render,
        Mode::CheckGrads,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::GenData => "gen-data",
            Mode::FitHair => "fit-hair",
            Mode::BuildPca => "build-pca",
            Mode::FitGaussians => "fit-gaussians",
            Mode::TrainToy => "train-toy",
            Mode::Sample => "sample",
            Mode::Edit => "edit",
            Mode::CfgSweep => "cfg-sweep",
            Mode::Render => "render",
            Mode::CheckGrads => "check-grads",
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    pub iterations: usize,
    pub lr_scale: f64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub lr_hair: f64,
    pub image_size: usize,
    pub texture_resolution: usize,
    pub views: usize,
    pub scenes: usize,
    /// Blend-shape components kept by `build-pca`.
    pub components: usize,
    pub focal: f64,
    pub radius: f64,
    pub pitch: f64,
    pub pose_swap: f64,
    pub drop_probability: f64,
    pub omega: f64,
    pub omegas: Vec<f64>,
    pub yaws: Vec<f64>,
    pub face_seed: u64,
    pub hair_seed: u64,
    pub log_every: usize,
    pub checkpoint_every: usize,
    pub out_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub emit_float: bool,
    pub weights: LossWeights,
}

impl RunConfig {
    /// Defaults for `mode`.
    pub fn new(mode: Mode) -> Self {
        let mut c = Self {
            mode,
            seed: 0,
            iterations: 1,
            lr_scale: 1.0,
            lr_g: 2e-3,
            lr_d: 2e-3,
            lr_hair: 1e-2,
            image_size: 64,
            texture_resolution: 16,
            views: 8,
            scenes: 1,
            components: crate::hair::NUM_COEFFS,
            focal: 2.0,
            radius: 160.0,
            pitch: 10.0,
            pose_swap: 0.8,
            drop_probability: 0.1,
            omega: 1.0,
            omegas: vec![0.0, 0.5, 1.0],
            yaws: vec![0.0, 45.0, 90.0, 135.0, 180.0],
            face_seed: 1,
            hair_seed: 2,
            log_every: 1,
            checkpoint_every: 50,
            out_dir: PathBuf::from("out"),
            checkpoint: None,
            emit_float: false,
            weights: LossWeights::default(),
        };
        match mode {
            Mode::FitGaussians => {
                c.iterations = 2000;
                c.image_size = 128;
                c.texture_resolution = 64;
                c.weights.mask = 3.0;
            }
            Mode::TrainToy => {
                c.iterations = 200;
                c.image_size = 32;
                c.scenes = 4;
            }
            Mode::FitHair => {
                c.iterations = 500;
                c.image_size = 256;
                c.views = 4;
                c.pitch = 15.0;
                c.focal = 1.4;
            }
            Mode::BuildPca => {
                c.scenes = 10;
                c.components = 9;
            }
            Mode::GenData => c.image_size = 128,
            Mode::Sample | Mode::Edit | Mode::CfgSweep | Mode::Render => c.image_size = 32,
            Mode::CheckGrads => {}
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("pose_swap", self.pose_swap), ("drop_probability", self.drop_probability)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        for (name, n) in [
            ("iterations", self.iterations),
            ("image_size", self.image_size),
            ("texture_resolution", self.texture_resolution),
            ("views", self.views),
            ("scenes", self.scenes),
            ("components", self.components),
            ("log_every", self.log_every),
            ("checkpoint_every", self.checkpoint_every),
        ] {
            if n == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        for (name, v) in [
            ("lr_scale", self.lr_scale),
            ("lr_g", self.lr_g),
            ("lr_d", self.lr_d),
            ("lr_hair", self.lr_hair),
            ("focal", self.focal),
            ("radius", self.radius),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !self.pitch.is_finite() || !self.omega.is_finite() {
            return Err(Error::Config("pitch and omega must be finite".into()));
        }
        if self.omegas.is_empty() || self.omegas.iter().any(|w| !w.is_finite()) {
            return Err(Error::Config("omegas must be a nonempty list of finite values".into()));
        }
        if self.yaws.is_empty() || self.yaws.iter().any(|w| !w.is_finite()) {
            return Err(Error::Config("yaws must be a nonempty list of finite values".into()));
        }
        self.weights.validate()
    }

    /// Parses config text on top of the defaults of the mode it names, or of
    /// `fallback` when it names none.
    pub fn parse(text: &str, fallback: Mode) -> Result<Self> {
        let mut entries = Vec::new();
        let mut mode = fallback;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k == "mode" {
                mode = v.parse().map_err(|e: Error| at_line(i, e))?;
            }
            entries.push((i, k.to_string(), v.to_string()));
        }
        let mut cfg = Self::new(mode);
        for (i, k, v) in entries {
            cfg.set(&k, &v).map_err(|e| at_line(i, e))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, fallback: Mode) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Config(format!("config file {} does not exist", path.display())),
            _ => Error::io(path, e),
        })?;
        Self::parse(&text, fallback)
    }

    /// Assigns one key. Unknown keys and malformed values are config errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "mode" => self.mode = value.parse()?,
            "seed" => self.seed = num(key, value)?,
            "iterations" => self.iterations = num(key, value)?,
            "lr_scale" => self.lr_scale = num(key, value)?,
            "lr_g" => self.lr_g = num(key, value)?,
            "lr_d" => self.lr_d = num(key, value)?,
            "lr_hair" => self.lr_hair = num(key, value)?,
            "image_size" => self.image_size = num(key, value)?,
            "texture_resolution" => self.texture_resolution = num(key, value)?,
            "views" => self.views = num(key, value)?,
            "scenes" => self.scenes = num(key, value)?,
            "components" => self.components = num(key, value)?,
            "focal" => self.focal = num(key, value)?,
            "radius" => self.radius = num(key, value)?,
            "pitch" => self.pitch = num(key, value)?,
            "pose_swap" => self.pose_swap = num(key, value)?,
            "drop_probability" => self.drop_probability = num(key, value)?,
            "omega" => self.omega = num(key, value)?,
            "omegas" => self.omegas = list(key, value)?,
            "yaws" => self.yaws = list(key, value)?,
            "face_seed" => self.face_seed = num(key, value)?,
            "hair_seed" => self.hair_seed = num(key, value)?,
            "log_every" => self.log_every = num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "checkpoint" => self.checkpoint = (!value.is_empty()).then(|| PathBuf::from(value)),
            "emit_float" => self.emit_float = num(key, value)?,
            _ => match key.strip_prefix("weight.") {
                Some(term) => *self.weight_mut(term)? = num(key, value)?,
                None => return Err(Error::Config(format!("unknown key `{key}`"))),
            },
        }
        Ok(())
    }

    fn weight_mut(&mut self, term: &str) -> Result<&mut f64> {
        let w = &mut self.weights;
        Ok(match term {
            "rgb" => &mut w.rgb,
            "mask" => &mut w.mask,
            "seg" => &mut w.seg,
            "seg_mesh" => &mut w.seg_mesh,
            "pos" => &mut w.pos,
            "scale" => &mut w.scale,
            "uv" => &mut w.uv,
            "adv" => &mut w.adv,
            "r1_rgb" => &mut w.r1_rgb,
            "r1_mask" => &mut w.r1_mask,
            _ => return Err(Error::Config(format!("unknown loss weight `{term}`"))),
        })
    }

    /// Every key, one per line; [`RunConfig::parse`] reads it back exactly.
    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let w = &self.weights;
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("mode", self.mode.name().into());
        put("seed", self.seed.to_string());
        put("iterations", self.iterations.to_string());
        put("lr_scale", self.lr_scale.to_string());
        put("lr_g", self.lr_g.to_string());
        put("lr_d", self.lr_d.to_string());
        put("lr_hair", self.lr_hair.to_string());
        put("image_size", self.image_size.to_string());
        put("texture_resolution", self.texture_resolution.to_string());
        put("views", self.views.to_string());
        put("scenes", self.scenes.to_string());
        put("components", self.components.to_string());
        put("focal", self.focal.to_string());
        put("radius", self.radius.to_string());
        put("pitch", self.pitch.to_string());
        put("pose_swap", self.pose_swap.to_string());
        put("drop_probability", self.drop_probability.to_string());
        put("omega", self.omega.to_string());
        put("omegas", join(&self.omegas));
        put("yaws", join(&self.yaws));
        put("face_seed", self.face_seed.to_string());
        put("hair_seed", self.hair_seed.to_string());
        put("log_every", self.log_every.to_string());
        put("checkpoint_every", self.checkpoint_every.to_string());
        put("out_dir", self.out_dir.display().to_string());
        put("checkpoint", self.checkpoint.as_ref().map(|p| p.display().to_string()).unwrap_or_default());
        put("emit_float", self.emit_float.to_string());
        for (k, v) in [
            ("rgb", w.rgb),
            ("mask", w.mask),
            ("seg", w.seg),
            ("seg_mesh", w.seg_mesh),
            ("pos", w.pos),
            ("scale", w.scale),
            ("uv", w.uv),
            ("adv", w.adv),
            ("r1_rgb", w.r1_rgb),
            ("r1_mask", w.r1_mask),
        ] {
            put(&format!("weight.{k}"), v.to_string());
        }
        s
    }
}

fn at_line(i: usize, e: Error) -> Error {
    match e {
        Error::Config(m) => Error::Config(format!("line {}: {m}", i + 1)),
        other => other,
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn list(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(',').map(|v| num(key, v.trim())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_validate_for_every_mode() {
        for m in Mode::ALL {
            RunConfig::new(m).validate().unwrap();
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
        }
        assert_eq!(RunConfig::new(Mode::TrainToy).pose_swap, 0.8);
        assert_eq!(RunConfig::new(Mode::TrainToy).drop_probability, 0.1);
    }

    #[test]
    fn parse_applies_mode_defaults_then_overrides() {
        let c = RunConfig::parse("# comment\nmode = train-toy\n\nseed = 7  # trailing\nweight.adv = 0.5\n", Mode::Sample).unwrap();
        assert_eq!(c.mode, Mode::TrainToy);
        assert_eq!(c.seed, 7);
        assert_eq!(c.iterations, 200);
        assert_eq!(c.weights.adv, 0.5);
    }

    #[test]
    fn unknown_key_reports_line() {
        let e = RunConfig::parse("seed = 1\nbogus = 2\n", Mode::FitGaussians).unwrap_err();
        assert!(matches!(&e, Error::Config(m) if m.contains("line 2") && m.contains("bogus")), "{e}");
        assert!(matches!(RunConfig::parse("seed = x", Mode::Render), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("weight.nope = 1", Mode::Render), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("seed", Mode::Render), Err(Error::Config(_))));
    }

    #[test]
    fn invariants_are_enforced() {
        assert!(RunConfig::parse("pose_swap = 1.5", Mode::TrainToy).is_err());
        assert!(RunConfig::parse("drop_probability = -0.1", Mode::TrainToy).is_err());
        assert!(RunConfig::parse("iterations = 0", Mode::TrainToy).is_err());
        assert!(RunConfig::parse("weight.rgb = -1", Mode::TrainToy).is_err());
        assert!(RunConfig::parse("pose_swap = 1\ndrop_probability = 0", Mode::TrainToy).is_ok());
    }

    #[test]
    fn missing_file_is_a_config_error() {
        let e = RunConfig::load(Path::new("/nonexistent/run.cfg"), Mode::Render).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
    }

    proptest! {
        #[test]
        fn text_round_trips(
            mode in 0usize..10,
            seed in any::<u64>(),
            iterations in 1usize..100_000,
            lr in 1e-6f64..10.0,
            p in 0.0f64..=1.0,
            omegas in proptest::collection::vec(-3.0f64..3.0, 1..5),
            emit in any::<bool>(),
            w in 0.0f64..1e6,
        ) {
            let mut c = RunConfig::new(Mode::ALL[mode]);
            c.seed = seed;
            c.iterations = iterations;
            c.lr_g = lr;
            c.pose_swap = p;
            c.drop_probability = 1.0 - p;
            c.omegas = omegas;
            c.emit_float = emit;
            c.weights.seg_mesh = w;
            c.checkpoint = emit.then(|| PathBuf::from("ck/a.3dgh"));
            let back = RunConfig::parse(&c.to_text(), Mode::Render).unwrap();
            prop_assert_eq!(back, c);
        }
    }
}
