use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::camera::CameraPose;
use crate::math::{normalize_quat, quat_to_rotation, Mat3, Vec3};
use crate::scene::{GaussianPrimitive, GaussianSet, PartLabel};

const W: usize = 40;
const H: usize = 32;

fn front_camera() -> CameraPose {
    CameraPose::orbit(0.0, 0.0, 10.0, 1.2)
}

fn random_set(seed: u64, n: usize, max_opacity: f64) -> GaussianSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = [PartLabel::Face, PartLabel::Hair];
    let gaussians = (0..n)
        .map(|i| GaussianPrimitive {
            position: Vec3::new(rng.random_range(-2.5..2.5), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)),
            rotation: normalize_quat([
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ]),
            scale: Vec3::new(rng.random_range(0.2..0.8), rng.random_range(0.2..0.8), rng.random_range(0.2..0.8)),
            color: [rng.random(), rng.random(), rng.random()],
            opacity: rng.random_range(0.1..max_opacity),
            label: labels[i % 2],
        })
        .collect();
    GaussianSet::from_primitives(gaussians)
}

#[test]
fn empty_set_renders_background() {
    let opts = RenderOptions {
        background: [0.2, 0.4, 0.6],
        t_min: DEFAULT_T_MIN,
    };
    let out = render(&GaussianSet::default(), &front_camera(), W, H, &opts).unwrap();
    for p in out.rgb.chunks_exact(3) {
        assert_eq!(p, &[0.2, 0.4, 0.6]);
    }
    assert!(out.mask.iter().all(|&m| m == 0.0));
    for p in out.seg.chunks_exact(3) {
        assert_eq!(p, &[1.0, 0.0, 0.0]);
    }
}

#[test]
fn zero_size_image_is_an_error() {
    assert!(render(&GaussianSet::default(), &front_camera(), 0, 4, &RenderOptions::default()).is_err());
}

#[test]
fn single_opaque_splat_center_pixel() {
    // Camera looks down -z from z=10; a Gaussian at the origin projects to the
    // image center.
    let g = GaussianPrimitive {
        position: Vec3::zeros(),
        rotation: [1.0, 0.0, 0.0, 0.0],
        scale: Vec3::repeat(1.0),
        color: [1.0, 0.5, 0.25],
        opacity: 1.0,
        label: PartLabel::Hair,
    };
    let cam = front_camera();
    let out = render(&GaussianSet::from_primitives(vec![g.clone()]), &cam, 32, 32, &RenderOptions::default()).unwrap();
    let s = project_gaussian(&g, &cam, 32, 32).unwrap();
    assert!((s.mean[0] - 16.0).abs() < 1e-9 && (s.mean[1] - 16.0).abs() < 1e-9);
    // pixel (15, 15) has center (15.5, 15.5): q = 0.25 (a + 2b + c) for the conic
    let q = 0.25 * (s.conic[0] + 2.0 * s.conic[1] + s.conic[2]);
    let alpha = (-0.5 * q).exp().min(ALPHA_MAX);
    let idx = 15 * 32 + 15;
    assert!((out.mask[idx] - alpha).abs() < 1e-12);
    assert!((out.rgb[3 * idx] - alpha).abs() < 1e-12);
    assert!((out.seg[3 * idx + 2] - alpha).abs() < 1e-12);
    assert!((out.seg[3 * idx] - (1.0 - alpha)).abs() < 1e-12);
}

#[test]
fn footprint_is_smooth_across_the_taper() {
    assert_eq!(footprint(0.0), (1.0, -0.5));
    assert_eq!(footprint(MAX_MAHALANOBIS), (0.0, 0.0));
    assert_eq!(footprint(20.0), (0.0, 0.0));
    let (below, d_below) = footprint(TAPER_START - 1e-12);
    let (above, d_above) = footprint(TAPER_START + 1e-12);
    assert!((below - above).abs() < 1e-10 && (d_below - d_above).abs() < 1e-9);
    let (edge, d_edge) = footprint(MAX_MAHALANOBIS - 1e-9);
    assert!(edge < 1e-15 && d_edge.abs() < 1e-7);
    let h = 1e-6;
    for q in [0.3, 5.0, 7.6, 8.2, 8.9] {
        let fd = (footprint(q + h).0 - footprint(q - h).0) / (2.0 * h);
        assert!((fd - footprint(q).1).abs() < 1e-8, "q={q}");
    }
}

#[test]
fn dilated_covariance_matches_numerical_jacobian() {
    let g = GaussianPrimitive {
        position: Vec3::new(0.7, -0.4, 1.1),
        rotation: normalize_quat([0.9, 0.2, -0.3, 0.1]),
        scale: Vec3::new(0.3, 0.6, 0.2),
        color: [0.5; 3],
        opacity: 0.5,
        label: PartLabel::Face,
    };
    let cam = CameraPose::orbit(30.0, 10.0, 8.0, 1.1);
    let s = project_gaussian(&g, &cam, W, H).unwrap();
    let t = cam.world_to_camera(&g.position);
    let h = 1e-6;
    let mut jac = [[0.0; 3]; 2];
    for k in 0..3 {
        let mut e = Vec3::zeros();
        e[k] = h;
        let (u1, v1) = cam.project_camera_point(&(t + e), W, H);
        let (u0, v0) = cam.project_camera_point(&(t - e), W, H);
        jac[0][k] = (u1 - u0) / (2.0 * h);
        jac[1][k] = (v1 - v0) / (2.0 * h);
    }
    let r = quat_to_rotation(g.rotation);
    let m = r * Mat3::from_diagonal(&g.scale);
    let w = cam.rotation();
    let sc = w * m * m.transpose() * w.transpose();
    let mut c = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            for i in 0..3 {
                for j in 0..3 {
                    c[a][b] += jac[a][i] * sc[(i, j)] * jac[b][j];
                }
            }
        }
    }
    let expect = [c[0][0] + 0.3, c[0][1], c[1][1] + 0.3];
    for k in 0..3 {
        assert!((s.cov[k] - expect[k]).abs() < 1e-5 * (1.0 + expect[k].abs()), "{k}: {} vs {}", s.cov[k], expect[k]);
    }
}

#[test]
fn behind_camera_is_culled() {
    let g = GaussianPrimitive {
        position: Vec3::new(0.0, 0.0, 20.0),
        rotation: [1.0, 0.0, 0.0, 0.0],
        scale: Vec3::repeat(1.0),
        color: [1.0; 3],
        opacity: 1.0,
        label: PartLabel::Face,
    };
    assert!(project_gaussian(&g, &front_camera(), W, H).is_none());
}

#[test]
fn tiled_equals_reference_exactly_without_termination() {
    let set = random_set(3, 60, 0.95);
    let cam = CameraPose::orbit(20.0, -10.0, 9.0, 1.0);
    let opts = RenderOptions::exact();
    let a = render(&set, &cam, 53, 37, &opts).unwrap();
    let b = reference_render(&set, &cam, 53, 37, &opts).unwrap();
    assert_eq!(a, b);
}

#[test]
fn early_termination_stays_close_to_reference() {
    let set = random_set(4, 200, 0.999);
    let cam = front_camera();
    let a = render(&set, &cam, W, H, &RenderOptions::default()).unwrap();
    let b = reference_render(&set, &cam, W, H, &RenderOptions::default()).unwrap();
    assert!(a.max_abs_diff(&b) <= 1e-4 + 1e-12);
}

#[test]
fn render_is_deterministic() {
    let set = random_set(5, 150, 0.9);
    let cam = front_camera();
    let a = render(&set, &cam, W, H, &RenderOptions::default()).unwrap();
    for _ in 0..3 {
        assert_eq!(a, render(&set, &cam, W, H, &RenderOptions::default()).unwrap());
    }
}

fn weighted_sum(out: &RenderOutput, g: &RenderGrads) -> f64 {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    dot(&out.rgb, &g.rgb) + dot(&out.mask, &g.mask) + dot(&out.seg, &g.seg)
}

fn fd(set: &GaussianSet, cam: &CameraPose, g: &RenderGrads, bump: impl Fn(&mut GaussianPrimitive, f64)) -> f64 {
    let h = 1e-6;
    let opts = RenderOptions::exact();
    let mut plus = set.clone();
    let mut minus = set.clone();
    bump(&mut plus.gaussians[0], h);
    bump(&mut minus.gaussians[0], -h);
    let a = render(&plus, cam, W, H, &opts).unwrap();
    let b = render(&minus, cam, W, H, &opts).unwrap();
    let mut diff = 0.0;
    for (k, (x, y)) in a.rgb.iter().zip(&b.rgb).enumerate() {
        diff += g.rgb[k] * (x - y);
    }
    for (k, (x, y)) in a.mask.iter().zip(&b.mask).enumerate() {
        diff += g.mask[k] * (x - y);
    }
    for (k, (x, y)) in a.seg.iter().zip(&b.seg).enumerate() {
        diff += g.seg[k] * (x - y);
    }
    diff / (2.0 * h)
}

fn assert_close(a: f64, n: f64, what: &str) {
    let err = (a - n).abs() / (1e-6 + a.abs().max(n.abs()));
    assert!(err < 1e-4 || (a - n).abs() < 1e-8, "{what}: analytic {a} numeric {n}");
}

#[test]
fn backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cam = CameraPose::orbit(15.0, 5.0, 10.0, 1.2);
    for seed in 0..4 {
        let mut set = random_set(100 + seed, 12, 0.9);
        // check the Gaussian rendered in front of everything else in the scene
        set.gaussians[0].position = Vec3::new(0.3, 0.2, 1.0 + seed as f64 * 0.5);
        let n = W * H;
        let up = RenderGrads {
            rgb: (0..3 * n).map(|_| rng.random_range(-1.0..1.0)).collect(),
            mask: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
            seg: (0..3 * n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let grads = render_backward(&set, &cam, W, H, &RenderOptions::exact(), &up).unwrap();
        for k in 0..3 {
            let n = fd(&set, &cam, &up, |g, h| g.position[k] += h);
            assert_close(grads.position[0][k], n, &format!("position {k}"));
            let n = fd(&set, &cam, &up, |g, h| g.scale[k] += h);
            assert_close(grads.scale[0][k], n, &format!("scale {k}"));
            let n = fd(&set, &cam, &up, |g, h| g.color[k] += h);
            assert_close(grads.color[0][k], n, &format!("color {k}"));
        }
        for k in 0..4 {
            let n = fd(&set, &cam, &up, |g, h| g.rotation[k] += h);
            assert_close(grads.rotation[0][k], n, &format!("rotation {k}"));
        }
        let n = fd(&set, &cam, &up, |g, h| g.opacity += h);
        assert_close(grads.opacity[0], n, "opacity");
        // a Gaussian further back exercises the transmittance terms
        let base = weighted_sum(&render(&set, &cam, W, H, &RenderOptions::exact()).unwrap(), &up);
        assert!(base.is_finite());
    }
}

#[test]
fn backward_rejects_bad_upstream() {
    let set = random_set(1, 3, 0.5);
    let mut up = RenderGrads::zeros(W, H);
    up.rgb.pop();
    assert!(render_backward(&set, &front_camera(), W, H, &RenderOptions::default(), &up).is_err());
    let mut up = RenderGrads::zeros(W, H);
    up.mask[0] = f64::NAN;
    assert!(render_backward(&set, &front_camera(), W, H, &RenderOptions::default(), &up).is_err());
}

#[test]
fn backward_is_deterministic() {
    let set = random_set(9, 80, 0.9);
    let up = RenderGrads {
        rgb: vec![0.3; 3 * W * H],
        mask: vec![-0.2; W * H],
        seg: vec![],
    };
    let a = render_backward(&set, &front_camera(), W, H, &RenderOptions::default(), &up).unwrap();
    let b = render_backward(&set, &front_camera(), W, H, &RenderOptions::default(), &up).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn outputs_are_bounded_and_conserve_weight(seed in 0u64..1000, n in 0usize..40, yaw in -180.0f64..180.0) {
        let set = random_set(seed, n, 1.0);
        let cam = CameraPose::orbit(yaw, 0.0, 9.0, 1.0);
        let out = render(&set, &cam, 24, 20, &RenderOptions::default()).unwrap();
        for i in 0..out.pixel_count() {
            let m = out.mask[i];
            prop_assert!((0.0..=1.0).contains(&m));
            prop_assert!((m + out.transmittance[i] - 1.0).abs() < 1e-12);
            let s = &out.seg[3 * i..3 * i + 3];
            prop_assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(s.iter().all(|&v| v >= -1e-12));
            prop_assert!((s[1] + s[2] - m).abs() < 1e-9);
            for k in 0..3 {
                prop_assert!((-1e-12..=1.0 + 1e-12).contains(&out.rgb[3 * i + k]));
            }
        }
    }
}
