use demo2prog::image::Image;
use demo2prog::induce::induce_program;
use demo2prog::net::{MicroNet, NetConfig, Sample};
use demo2prog::program::{ControllerParams, ProgramAst, SymbolId};
use demo2prog::smc::{effective_sample_size, systematic_resample, Particle, ParticleSet};
use demo2prog::symbolize::{cluster_controllers, detect_peaks, kmeans, smooth, ClusterConfig, PeakConfig};
use demo2prog::world::{ArmModel, JointState, Point2};
use proptest::prelude::*;

fn normalize(raw: &[f64]) -> Vec<f64> {
    let s: f64 = raw.iter().sum();
    raw.iter().map(|w| w / s).collect()
}

fn small_net(seed: u64) -> MicroNet {
    let cfg = NetConfig {
        input_width: 3,
        input_height: 2,
        hidden: vec![5, 4],
        ..NetConfig::default()
    };
    MicroNet::new(&cfg, 2, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn induction_is_lossless(trace in prop::collection::vec(0u32..6, 0..120)) {
        let p = induce_program(&trace);
        prop_assert_eq!(p.expand(), trace);
        prop_assert_eq!(ProgramAst::parse(&p.to_dsl()).unwrap(), p);
    }

    #[test]
    fn n_eff_is_bounded(raw in prop::collection::vec(1e-6f64..1.0, 1..200)) {
        let w = normalize(&raw);
        let n = effective_sample_size(&w).unwrap();
        prop_assert!(n >= 1.0 - 1e-9 && n <= w.len() as f64 + 1e-9);
    }

    #[test]
    fn unnormalized_weights_are_rejected(raw in prop::collection::vec(0.01f64..1.0, 2..50)) {
        let s: f64 = raw.iter().sum();
        let scaled: Vec<f64> = raw.iter().map(|w| 2.0 * w / s).collect();
        prop_assert!(effective_sample_size(&scaled).is_err());
    }

    #[test]
    fn resampling_keeps_count_and_uniform_weights(raw in prop::collection::vec(1e-3f64..1.0, 2..60), u in 0.0f64..1.0) {
        let w = normalize(&raw);
        let set = ParticleSet {
            particles: w
                .iter()
                .enumerate()
                .map(|(i, &weight)| Particle {
                    params: ControllerParams::new(JointState(vec![i as f64]), 1.0).unwrap(),
                    weight,
                })
                .collect(),
            normalized: true,
        };
        let out = systematic_resample(&set, u);
        prop_assert_eq!(out.len(), set.len());
        let n = out.len() as f64;
        prop_assert!(out.particles.iter().all(|p| (p.weight - 1.0 / n).abs() < 1e-12));
        prop_assert_eq!(out, systematic_resample(&set, u));
    }

    #[test]
    fn smoothing_preserves_length_and_range(series in prop::collection::vec(-5.0f64..5.0, 1..100), window in 1usize..12) {
        let s = smooth(&series, window);
        prop_assert_eq!(s.len(), series.len());
        let lo = series.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = series.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(s.iter().all(|v| *v >= lo - 1e-9 && *v <= hi + 1e-9));
    }

    #[test]
    fn isolated_bumps_are_found(centers in prop::collection::btree_set(1usize..20, 1..6)) {
        // bumps every 25 samples, well above the prominence threshold
        let mut series = vec![0.0; 520];
        let positions: Vec<usize> = centers.iter().map(|c| c * 25).collect();
        for &p in &positions {
            for d in 0..5usize {
                let v = 10.0 - 2.0 * d as f64;
                series[p + d] = v;
                series[p - d] = v;
            }
        }
        let cfg = PeakConfig { smoothing_window: 1, ..PeakConfig::default() };
        prop_assert_eq!(detect_peaks(&series, &cfg, 10.0).unwrap(), positions);
    }

    #[test]
    fn kmeans_ignores_point_order(
        points in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 2), 4..30),
        k in 1usize..4,
        rot in 0usize..30,
    ) {
        let a = kmeans(&points, k, 100).unwrap();
        let mut shuffled = points.clone();
        shuffled.rotate_left(rot % points.len());
        shuffled.reverse();
        let b = kmeans(&shuffled, k, 100).unwrap();
        let mut ca = a.centers.clone();
        let mut cb = b.centers.clone();
        ca.sort_by(|x, y| x.partial_cmp(y).unwrap());
        cb.sort_by(|x, y| x.partial_cmp(y).unwrap());
        prop_assert_eq!(ca, cb);
        prop_assert!((a.wcss - b.wcss).abs() < 1e-9);
    }

    #[test]
    fn ik_inverts_fk(t in prop::collection::vec(-1.2f64..1.2, 3)) {
        let arm = ArmModel::default();
        let theta = JointState(t);
        let p = arm.forward_kinematics(&theta).unwrap();
        if p.distance(arm.base_position) > arm.min_reach() + 0.05 {
            let back = arm.inverse_kinematics(p, &theta).unwrap();
            prop_assert!(arm.forward_kinematics(&back).unwrap().distance(p) < 1e-3);
        }
    }

    #[test]
    fn ppm_round_trip(w in 1usize..8, h in 1usize..8, seed in any::<u8>()) {
        let data: Vec<f64> = (0..w * h * 3).map(|i| ((i * 37 + seed as usize) % 256) as f64 / 255.0).collect();
        let img = Image::from_raw(w, h, data).unwrap();
        let mut buf = Vec::new();
        img.write_ppm(&mut buf).unwrap();
        let back = Image::read_ppm(&buf[..], std::path::Path::new("mem.ppm")).unwrap();
        prop_assert_eq!(back, img);
    }
}

#[test]
fn clustering_labels_follow_first_appearance() {
    let goals = [[0.0, 0.0], [5.0, 5.0], [0.1, 0.0], [5.0, 5.1], [-5.0, 5.0], [0.0, 0.1]];
    let params: Vec<ControllerParams> = goals
        .iter()
        .map(|g| ControllerParams::new(JointState(g.to_vec()), 2.0).unwrap())
        .collect();
    let (lib, labels) = cluster_controllers(&params, 5, &ClusterConfig::default()).unwrap();
    assert_eq!(lib.len(), 3);
    assert_eq!(labels, [0, 1, 0, 1, 2, 0] as [SymbolId; 6]);
}

#[test]
fn backprop_matches_finite_differences() {
    let net = small_net(7);
    let x: Vec<f64> = (0..net.layer_sizes()[0]).map(|i| (i as f64 * 0.37).sin()).collect();
    let samples = vec![Sample { input: x.clone(), target: vec![0.3, -0.2] }];
    let (_, grad) = net.loss_and_grad(&samples).unwrap();
    let p0 = net.params();
    let h = 1e-5;
    for i in 0..p0.len() {
        let mut plus = net.clone();
        let mut minus = net.clone();
        let mut p = p0.clone();
        p[i] += h;
        plus.set_params(&p).unwrap();
        p[i] -= 2.0 * h;
        minus.set_params(&p).unwrap();
        let fd = (plus.loss(&samples).unwrap() - minus.loss(&samples).unwrap()) / (2.0 * h);
        assert!((fd - grad[i]).abs() < 1e-7, "param {i}: {fd} vs {}", grad[i]);
    }
    let jac = net.input_jacobian(&x).unwrap();
    for j in 0..x.len() {
        let mut xp = x.clone();
        xp[j] += h;
        let mut xm = x.clone();
        xm[j] -= h;
        let (fp, fm) = (net.forward_vec(&xp).unwrap(), net.forward_vec(&xm).unwrap());
        for o in 0..2 {
            assert!(((fp[o] - fm[o]) / (2.0 * h) - jac[o][j]).abs() < 1e-7);
        }
    }
}

#[test]
fn camera_round_trip() {
    let cam = demo2prog::CameraModel::default();
    let p = Point2::new(0.4, 1.3);
    assert!(cam.unproject(cam.project(p)).distance(p) < 1e-12);
}
