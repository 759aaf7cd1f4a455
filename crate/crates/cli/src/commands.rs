//! One function per subcommand.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use headgen::camera::CameraRing;
use headgen::container::{read_tensor, write_tensor, StoredTensor};
use headgen::gradcheck;
use headgen::hair::{build_blend_model, fit_hair_mesh, project_onto_model, HairFitConfig, HairTarget};
use headgen::harness::{
    fit_gaussians, make_synthetic_dataset, random_hair_style, ChannelRates, DatasetSpec, FitConfig, FitInit, GanConfig, HeadModel, HeadRig, HeadSample, MetricsLog, Mode, RigSpec,
    RunConfig, ViewSweep, ViewTruth,
};
use headgen::image_io::{write_mask_png, write_render, write_rgb_png, write_seg_png};
use headgen::mesh::hair_mesh;
use headgen::net::sample_latent;
use headgen::optim::AdamConfig;
use headgen::render::{reference_render, render};
use headgen::scene::TEXTURE_CHANNELS;
use headgen::silhouette::{mask_iou, part_label, render_mesh_labels, LabeledMeshScene, MeshTopology, DEFAULT_SOFTNESS};
use headgen::{CameraPose, Error, GaussianTextureMap, RenderOptions, Result};

struct Run<'a> {
    cfg: &'a RunConfig,
    log: MetricsLog,
    out: &'a mut dyn Write,
}

impl Run<'_> {
    fn dir(&self) -> &Path {
        &self.cfg.out_dir
    }

    /// Appends to `metrics.log` and echoes to the console.
    fn say(&mut self, line: String) -> Result<()> {
        let _ = writeln!(self.out, "{line}");
        self.log.push(line)
    }
}

/// Runs `cfg.mode`, writing the config echo, metrics log and artifacts under
/// `cfg.out_dir`.
pub fn execute(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let dir = &cfg.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let echo = dir.join("config.txt");
    std::fs::write(&echo, cfg.to_text()).map_err(|e| Error::io(&echo, e))?;
    let log = MetricsLog::create(&dir.join("metrics.log"))?;
    let mut run = Run { cfg, log, out };
    match cfg.mode {
        Mode::GenData => gen_data(&mut run),
        Mode::FitHair => fit_hair(&mut run),
        Mode::BuildPca => build_pca(&mut run),
        Mode::FitGaussians => fit(&mut run),
        Mode::TrainToy => train_toy(&mut run),
        Mode::Sample | Mode::Edit | Mode::CfgSweep => generate(&mut run),
        Mode::Render => render_views(&mut run),
        Mode::CheckGrads => check_grads(&mut run),
    }
}

fn rig_spec(cfg: &RunConfig) -> RigSpec {
    RigSpec {
        texture_resolution: cfg.texture_resolution,
        ..RigSpec::default()
    }
}

fn dataset_spec(cfg: &RunConfig) -> DatasetSpec {
    DatasetSpec {
        scenes: cfg.scenes,
        views: cfg.views,
        image_size: cfg.image_size,
        rig: rig_spec(cfg),
        radius: cfg.radius,
        pitch_deg: cfg.pitch,
        focal: cfg.focal,
        ..DatasetSpec::default()
    }
}

fn ring(cfg: &RunConfig) -> CameraRing {
    CameraRing {
        count: cfg.views,
        radius: cfg.radius,
        yaw_start_deg: 0.0,
        yaw_span_deg: 360.0,
        pitch_deg: cfg.pitch,
        focal: cfg.focal,
    }
}

fn sweep(cfg: &RunConfig) -> ViewSweep {
    ViewSweep {
        yaws: cfg.yaws.clone(),
        pitch_deg: cfg.pitch,
        radius: cfg.radius,
        focal: cfg.focal,
        image_size: cfg.image_size,
    }
}

fn mkdir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_texture(path: &Path, tex: &GaussianTextureMap) -> Result<()> {
    write_tensor(path, &StoredTensor::new(vec![tex.height, tex.width, TEXTURE_CHANNELS], tex.data.clone())?)
}

fn read_texture(path: &Path) -> Result<GaussianTextureMap> {
    if !path.is_file() {
        return Err(Error::Config(format!("texture {} does not exist", path.display())));
    }
    let t = read_tensor(path)?;
    match t.dims[..] {
        [h, w, c] if c == TEXTURE_CHANNELS => GaussianTextureMap::from_data(h, w, t.data),
        _ => Err(Error::Data(format!("{}: expected an H x W x {TEXTURE_CHANNELS} tensor, got {:?}", path.display(), t.dims))),
    }
}

fn write_truth(dir: &Path, stem: &str, truth: &ViewTruth, size: usize, emit_float: bool) -> Result<()> {
    if emit_float {
        let seg = truth.seg.iter().map(|&c| c as f64).collect();
        write_tensor(&dir.join(format!("{stem}_rgb.3dgh")), &StoredTensor::new(vec![size, size, 3], truth.rgb.clone())?)?;
        write_tensor(&dir.join(format!("{stem}_mask.3dgh")), &StoredTensor::new(vec![size, size], truth.mask.clone())?)?;
        write_tensor(&dir.join(format!("{stem}_seg.3dgh")), &StoredTensor::new(vec![size, size], seg)?)
    } else {
        write_rgb_png(&dir.join(format!("{stem}_rgb.png")), size, size, &truth.rgb)?;
        write_mask_png(&dir.join(format!("{stem}_mask.png")), size, size, &truth.mask)?;
        write_seg_png(&dir.join(format!("{stem}_seg.png")), size, size, &truth.seg)
    }
}

fn gen_data(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let data = make_synthetic_dataset(&dataset_spec(cfg), cfg.seed)?;
    for (s, scene) in data.scenes.iter().enumerate() {
        let dir = run.dir().join(format!("scene_{s:03}"));
        mkdir(&dir)?;
        data.rig.hair_mesh(&scene.style).write_obj(&dir.join("hair.obj"))?;
        write_texture(&dir.join("face_texture.3dgh"), &scene.face_texture)?;
        write_texture(&dir.join("hair_texture.3dgh"), &scene.hair_texture)?;
        for (v, truth) in scene.views.iter().enumerate() {
            write_truth(&dir, &format!("view_{v:02}"), truth, cfg.image_size, cfg.emit_float)?;
            let cover = truth.mask.iter().sum::<f64>() / truth.mask.len() as f64;
            let hair = truth.seg.iter().filter(|&&c| c == 2).count() as f64 / truth.seg.len() as f64;
            run.say(format!("scene={s} view={v} yaw={:.1} coverage={cover:.4} hair={hair:.4}", truth.yaw_deg))?;
        }
    }
    run.say(format!("scenes={} views={}", data.scenes.len(), data.view_count()))
}

fn fit_hair(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let rig = RigSpec::default();
    let template = hair_mesh(rig.hair_rings, rig.hair_segments, &Default::default());
    let style = random_hair_style(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let target = hair_mesh(rig.hair_rings, rig.hair_segments, &style);
    let topology = MeshTopology::from_mesh(&template)?;
    let label = part_label(&template)?;
    let size = cfg.image_size;
    let labels = |v: &[headgen::math::Vec3], c: &CameraPose| render_mesh_labels(&LabeledMeshScene::new().with_part(v, &topology, label), c, size, size, DEFAULT_SOFTNESS);
    let cameras = ring(cfg).cameras();
    let targets = cameras
        .iter()
        .map(|c| Ok(HairTarget { camera: c.clone(), labels: labels(&target.vertices, c)?.values }))
        .collect::<Result<Vec<_>>>()?;
    let config = HairFitConfig {
        iterations: cfg.iterations,
        adam: AdamConfig::with_lr(cfg.lr_hair),
        width: size,
        height: size,
        softness: DEFAULT_SOFTNESS,
    };
    let fitted = fit_hair_mesh(&template, &targets, &config)?;
    for (i, loss) in fitted.trace.iter().enumerate() {
        if i % cfg.log_every == 0 {
            run.say(format!("step={i} loss={loss:.6}"))?;
        }
    }
    let mut total = 0.0;
    for (k, c) in cameras.iter().enumerate() {
        let fit_img = labels(&fitted.mesh.vertices, c)?;
        let tgt_img = labels(&target.vertices, c)?;
        let iou = mask_iou(&fit_img.hard_foreground(), &tgt_img.hard_foreground());
        total += iou;
        write_mask_png(&run.dir().join(format!("view_{k:02}_fit.png")), size, size, &fit_img.values.iter().map(|v| v / label).collect::<Vec<_>>())?;
        write_mask_png(&run.dir().join(format!("view_{k:02}_target.png")), size, size, &tgt_img.values.iter().map(|v| v / label).collect::<Vec<_>>())?;
        run.say(format!("view={k} iou={iou:.5}"))?;
    }
    target.write_obj(&run.dir().join("target.obj"))?;
    fitted.mesh.write_obj(&run.dir().join("fitted.obj"))?;
    run.say(format!("final_loss={:.6} mean_iou={:.5}", fitted.final_loss, total / cameras.len() as f64))
}

fn build_pca(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let rig = RigSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let meshes: Vec<_> = (0..cfg.scenes)
        .map(|_| hair_mesh(rig.hair_rings, rig.hair_segments, &random_hair_style(&mut rng)))
        .collect();
    let model = build_blend_model(&meshes, cfg.components)?;
    let mut worst = 0.0f64;
    for (i, m) in meshes.iter().enumerate() {
        let theta = project_onto_model(&model, &m.vertices)?;
        let back = model.mesh(&theta)?;
        let sq: f64 = back.vertices.iter().zip(&m.vertices).map(|(a, b)| (a - b).norm_squared()).sum();
        let rel = (sq / m.vertices.len() as f64).sqrt() / m.bbox_diagonal();
        worst = worst.max(rel);
        run.say(format!("mesh={i} rms_rel={rel:.3e}"))?;
    }
    let n = 3 * model.vertex_count();
    let mut ortho = 0.0f64;
    for a in 0..model.rank {
        for b in 0..model.rank {
            let dot: f64 = model.component(a).iter().zip(model.component(b)).map(|(x, y)| x * y).sum();
            ortho = ortho.max((dot - if a == b { 1.0 } else { 0.0 }).abs());
        }
    }
    model.write(&run.dir().join("hair_model.3dgh"))?;
    run.say(format!("meshes={} coords={n} rank={} sigma={:.6} worst_rms_rel={worst:.3e} orthonormality={ortho:.3e}", meshes.len(), model.rank, model.sigma))
}

fn fit(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let data = make_synthetic_dataset(&dataset_spec(cfg), cfg.seed)?;
    let config = FitConfig {
        iterations: cfg.iterations,
        weights: cfg.weights,
        rates: ChannelRates::default().scaled(cfg.lr_scale),
        init: FitInit::Random { seed: cfg.seed },
    };
    for s in 0..data.scenes.len() {
        let result = fit_gaussians(&data, s, &config, &mut run.log)?;
        let scene = &data.scenes[s];
        let dir = run.dir().join(format!("scene_{s:03}"));
        mkdir(&dir)?;
        write_texture(&dir.join("face_texture.3dgh"), &result.face)?;
        write_texture(&dir.join("hair_texture.3dgh"), &result.hair)?;
        data.rig.hair_mesh(&scene.style).write_obj(&dir.join("hair.obj"))?;
        let head = data.rig.compose(&result.face, &result.hair, &scene.hair_vertices)?;
        for (v, truth) in scene.views.iter().enumerate() {
            let img = head.render(&truth.camera, cfg.image_size)?;
            write_render(&dir, &format!("view_{v:02}"), &img, cfg.emit_float)?;
        }
        for (v, m) in result.views.iter().enumerate() {
            run.say(format!("scene={s} view={v} {}", m.log_line()))?;
        }
        let (psnr, seg, iou) = result.summary();
        run.say(format!("scene={s} psnr={psnr:.3} seg={seg:.4} iou={iou:.4}"))?;
    }
    Ok(())
}

fn gan_config(cfg: &RunConfig) -> GanConfig {
    let mut gan = GanConfig::toy(cfg.texture_resolution, cfg.image_size);
    gan.steps = cfg.iterations;
    gan.seed = cfg.seed;
    gan.lr_g = cfg.lr_g;
    gan.lr_d = cfg.lr_d;
    gan.weights = cfg.weights;
    gan.pose_swap = cfg.pose_swap;
    gan.net.synthesis.drop_probability = cfg.drop_probability;
    gan.log_every = cfg.log_every;
    gan.checkpoint_every = cfg.checkpoint_every;
    gan
}

fn train_toy(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let data = make_synthetic_dataset(&dataset_spec(cfg), cfg.seed)?;
    let mut gan = gan_config(cfg);
    gan.checkpoint_dir = Some(run.dir().join("checkpoints"));
    let model = build_blend_model(&data.hair_meshes(), gan.net.synthesis.num_coeffs)?;
    model.write(&run.dir().join("hair_model.3dgh"))?;
    let result = train_toy_gan_logged(run, &data, &model, &gan)?;
    result.params.save(&run.dir().join("model.3dgh"))?;
    let _ = writeln!(run.out, "model written to {}", run.dir().join("model.3dgh").display());
    Ok(())
}

fn train_toy_gan_logged(
    run: &mut Run,
    data: &headgen::harness::SyntheticDataset,
    model: &headgen::hair::HairBlendModel,
    gan: &GanConfig,
) -> Result<headgen::harness::GanRun> {
    let before = run.log.lines().len();
    let result = headgen::harness::train_toy_gan(data, model, gan, &mut run.log);
    for line in &run.log.lines()[before..] {
        let _ = writeln!(run.out, "{line}");
    }
    result
}

/// The hair model next to a checkpoint, or one directory up (checkpoints
/// written during training live in a subdirectory).
fn hair_model_for(checkpoint: &Path) -> PathBuf {
    let here = checkpoint.with_file_name("hair_model.3dgh");
    match checkpoint.parent().and_then(Path::parent) {
        Some(up) if !here.is_file() => up.join("hair_model.3dgh"),
        _ => here,
    }
}

fn load_model(cfg: &RunConfig) -> Result<HeadModel> {
    let checkpoint = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::Config(format!("`{}` needs `checkpoint` (a trained model file)", cfg.mode.name())))?;
    let net = GanConfig::toy(cfg.texture_resolution, cfg.image_size).net;
    let rig = HeadRig::new(rig_spec(cfg))?;
    HeadModel::load(checkpoint, &hair_model_for(checkpoint), net, rig)
}

fn save_sample(run: &mut Run, stem: &str, sample: &HeadSample, yaws: &[f64]) -> Result<()> {
    for (view, yaw) in sample.views.iter().zip(yaws) {
        write_render(run.dir(), &format!("{stem}_yaw{yaw:03.0}"), view, run.cfg.emit_float)?;
        let cover = view.mask.iter().sum::<f64>() / view.mask.len() as f64;
        let hair = view.seg_classes().iter().filter(|&&c| c == 2).count() as f64 / view.mask.len() as f64;
        run.say(format!("{stem} yaw={yaw:.1} coverage={cover:.4} hair={hair:.4}"))?;
    }
    Ok(())
}

fn generate(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let model = load_model(cfg)?;
    let z_dim = model.net.synthesis.z_dim;
    let latent = |seed: u64| sample_latent(&mut ChaCha8Rng::seed_from_u64(seed), z_dim);
    let camera = CameraPose::orbit(0.0, cfg.pitch, cfg.radius, cfg.focal);
    let views = sweep(cfg);
    let z_face = latent(cfg.face_seed);
    match cfg.mode {
        Mode::Sample => {
            let s = model.sample(&z_face, &camera, cfg.omega, &views)?;
            save_sample(run, "sample", &s, &views.yaws)
        }
        Mode::Edit => {
            let z_hair = latent(cfg.hair_seed);
            let face = model.sample(&z_face, &camera, cfg.omega, &views)?;
            let hair = model.sample(&z_hair, &camera, cfg.omega, &views)?;
            let edited = model.edit_hairstyle(&z_face, &z_hair, &camera, cfg.omega, &views)?;
            save_sample(run, "face_source", &face, &views.yaws)?;
            save_sample(run, "hair_source", &hair, &views.yaws)?;
            save_sample(run, "edited", &edited, &views.yaws)
        }
        _ => {
            let samples = model.cfg_sweep(&z_face, &camera, &cfg.omegas, &views)?;
            for (s, omega) in samples.iter().zip(&cfg.omegas) {
                save_sample(run, &format!("omega{omega}"), s, &views.yaws)?;
            }
            Ok(())
        }
    }
}

fn render_views(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let (face, hair, hair_mesh_vertices, rig) = match &cfg.checkpoint {
        Some(dir) => {
            let face = read_texture(&dir.join("face_texture.3dgh"))?;
            let hair = read_texture(&dir.join("hair_texture.3dgh"))?;
            let rig = HeadRig::new(RigSpec {
                texture_resolution: face.height,
                ..RigSpec::default()
            })?;
            let obj = dir.join("hair.obj");
            if !obj.is_file() {
                return Err(Error::Config(format!("hair mesh {} does not exist", obj.display())));
            }
            let mesh = headgen::TemplateMesh::read_obj(&obj, rig.hair_template.labels[0])?;
            (face, hair, mesh.vertices, rig)
        }
        None => {
            let spec = DatasetSpec {
                views: 1,
                ..dataset_spec(cfg)
            };
            let data = make_synthetic_dataset(&spec, cfg.seed)?;
            let scene = data.scenes.into_iter().next().expect("one scene");
            (scene.face_texture, scene.hair_texture, scene.hair_vertices, data.rig)
        }
    };
    let head = rig.compose(&face, &hair, &hair_mesh_vertices)?;
    let views = sweep(cfg);
    let opts = RenderOptions::default();
    let n = cfg.image_size;
    for (camera, yaw) in views.cameras().iter().zip(&views.yaws) {
        let tiled = render(&head.combined, camera, n, n, &opts)?;
        let exact = reference_render(&head.combined, camera, n, n, &opts)?;
        let diff = tiled.rgb.iter().zip(&exact.rgb).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        write_render(run.dir(), &format!("render_yaw{yaw:03.0}"), &tiled, cfg.emit_float)?;
        run.say(format!("yaw={yaw:.1} gaussians={} max_reference_diff={diff:.3e}", head.combined.len()))?;
    }
    Ok(())
}

fn check_grads(run: &mut Run) -> Result<()> {
    let checks = gradcheck::run_all(run.cfg.seed)?;
    let mut failed = Vec::new();
    for c in &checks {
        run.say(c.line())?;
        if !c.passed() {
            failed.push(c.name.clone());
        }
    }
    if failed.is_empty() {
        run.say(format!("all {} checks passed", checks.len()))
    } else {
        Err(Error::Numeric(format!("gradient checks failed: {}", failed.join(", "))))
    }
}
