//! Sampling, hairstyle swaps and guidance sweeps with a trained generator.

use std::path::Path;

use crate::camera::CameraPose;
use crate::error::{Error, Result};
use crate::hair::{blend_hair_shape, HairBlendModel};
use crate::math::Vec3;
use crate::net::{generate_from_codes, generate_textures, mapping_forward, GeneratedTextures, NetConfig, NetParams};
use crate::render::RenderOutput;

use super::pipeline::HeadRig;

/// Cameras at which a generated head is rendered.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSweep {
    pub yaws: Vec<f64>,
    pub pitch_deg: f64,
    pub radius: f64,
    pub focal: f64,
    pub image_size: usize,
}

impl Default for ViewSweep {
    fn default() -> Self {
        Self {
            yaws: vec![0.0, 45.0, 90.0, 135.0, 180.0],
            pitch_deg: 10.0,
            radius: 160.0,
            focal: 2.0,
            image_size: 32,
        }
    }
}

impl ViewSweep {
    pub fn cameras(&self) -> Vec<CameraPose> {
        self.yaws
            .iter()
            .map(|&y| CameraPose::orbit(y, self.pitch_deg, self.radius, self.focal))
            .collect()
    }
}

/// A generated head and its renders over a sweep.
#[derive(Debug, Clone)]
pub struct HeadSample {
    pub textures: GeneratedTextures,
    pub hair_vertices: Vec<Vec3>,
    pub views: Vec<RenderOutput>,
}

/// Trained generator with the rig and hair model it renders through.
#[derive(Debug, Clone)]
pub struct HeadModel {
    pub net: NetConfig,
    pub params: NetParams,
    pub rig: HeadRig,
    pub blend: HairBlendModel,
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} {} does not exist", path.display())))
    }
}

impl HeadModel {
    pub fn new(net: NetConfig, params: NetParams, rig: HeadRig, blend: HairBlendModel) -> Result<Self> {
        net.validate()?;
        if rig.texture_resolution() != net.synthesis.output_resolution {
            return Err(Error::Config("rig and generator texture resolutions differ".into()));
        }
        if blend.vertex_count() != rig.hair_template.vertices.len() || blend.num_coeffs != net.synthesis.num_coeffs {
            return Err(Error::Shape("blend model does not match the hair template and generator".into()));
        }
        Ok(Self { net, params, rig, blend })
    }

    /// Reads parameters and the hair model from disk. A missing file is a
    /// configuration error.
    pub fn load(checkpoint: &Path, blend: &Path, net: NetConfig, rig: HeadRig) -> Result<Self> {
        require(checkpoint, "checkpoint")?;
        require(blend, "hair model")?;
        let params = NetParams::load(checkpoint, &net)?;
        let blend = HairBlendModel::read(blend)?;
        Self::new(net, params, rig, blend)
    }

    fn finish(&self, textures: GeneratedTextures, sweep: &ViewSweep) -> Result<HeadSample> {
        let hair_vertices = blend_hair_shape(&self.blend, &textures.theta)?;
        let head = self.rig.compose(&textures.face, &textures.hair, &hair_vertices)?;
        let views = sweep
            .cameras()
            .iter()
            .map(|c| head.render(c, sweep.image_size))
            .collect::<Result<_>>()?;
        Ok(HeadSample {
            textures,
            hair_vertices,
            views,
        })
    }

    /// Plain sample from `(z, camera)`.
    pub fn sample(&self, z: &[f64], camera: &CameraPose, omega: f64, sweep: &ViewSweep) -> Result<HeadSample> {
        let textures = generate_textures(&self.params, &self.net.synthesis, z, camera, omega, false)?;
        self.finish(textures, sweep)
    }

    /// Face of `z_face` with the hairstyle (texture code and shape) of
    /// `z_hair`.
    pub fn edit_hairstyle(&self, z_face: &[f64], z_hair: &[f64], camera: &CameraPose, omega: f64, sweep: &ViewSweep) -> Result<HeadSample> {
        let syn = &self.net.synthesis;
        let (_, w_face) = mapping_forward(&self.params, syn, z_face, camera)?;
        let (w_hair, _) = mapping_forward(&self.params, syn, z_hair, camera)?;
        let textures = generate_from_codes(&self.params, syn, &w_hair, &w_face, omega, false)?;
        self.finish(textures, sweep)
    }

    /// One sample per guidance factor.
    pub fn cfg_sweep(&self, z: &[f64], camera: &CameraPose, omegas: &[f64], sweep: &ViewSweep) -> Result<Vec<HeadSample>> {
        omegas.iter().map(|&w| self.sample(z, camera, w, sweep)).collect()
    }
}
