use proptest::prelude::*;

use pseudocal::cascade::{coarse_grid_estimate, run_cascade, CascadeConfig, CoarseGridConfig, EstimatorSpec};
use pseudocal::eval::mae_metrics;
use pseudocal::loss::{centroid_loss, pcl_loss, rotation_loss, total_loss, translation_loss, CalibParams, LossWeights};
use pseudocal::pillar::{occupancy, pillarize, PillarGridConfig};
use pseudocal::pseudo_lidar::{back_project, filter_edges, CameraIntrinsics, DepthMap, EdgeMask};
use pseudocal::sample::{apply_augmentation, sample_with_decalibration, DecalibrationRange};
use pseudocal::se3::{
    body_motion_in_optical, euler_to_matrix, matrix_to_euler, wrap_angle, EulerAngles, PointCloud, RigidTransform,
};
use pseudocal::{Point3, Vector3};

use std::f64::consts::{FRAC_PI_2, PI};

fn angles() -> impl Strategy<Value = EulerAngles> {
    (-PI..PI, -FRAC_PI_2 + 0.01..FRAC_PI_2 - 0.01, -PI..PI).prop_map(|(r, p, y)| EulerAngles::new(r, p, y))
}

fn transform() -> impl Strategy<Value = RigidTransform> {
    (angles(), prop::array::uniform3(-5.0..5.0f64))
        .prop_map(|(e, t)| RigidTransform::from_euler(e, Vector3::from(t)).unwrap())
}

fn point(r: f64) -> impl Strategy<Value = Point3<f64>> {
    prop::array::uniform3(-r..r).prop_map(|[x, y, z]| Point3::new(x, y, z))
}

fn cloud(n: std::ops::Range<usize>) -> impl Strategy<Value = PointCloud> {
    prop::collection::vec(point(20.0), n).prop_map(PointCloud::from_points)
}

fn params(rot: f64, trans: f64) -> impl Strategy<Value = CalibParams> {
    (prop::array::uniform3(-rot..rot), prop::array::uniform3(-trans..trans))
        .prop_map(|(r, t)| CalibParams::new(EulerAngles::new(r[0], r[1], r[2]), Vector3::from(t)))
}

fn decal(r: DecalibrationRange) -> impl Strategy<Value = CalibParams> {
    let [rb, pb, yb] = r.rotation_bounds();
    let tb = r.trans_bound();
    (-rb..=rb, -pb..=pb, -yb..=yb, prop::array::uniform3(-tb..=tb))
        .prop_map(|(a, b, c, t)| CalibParams::new(EulerAngles::new(a, b, c), Vector3::from(t)))
}

fn close(a: &RigidTransform, b: &RigidTransform, tol: f64) -> bool {
    a.max_abs_diff(b) <= tol
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn euler_round_trip_away_from_gimbal_lock(e in angles()) {
        let back = matrix_to_euler(&euler_to_matrix(e).unwrap());
        prop_assert!(!back.gimbal_lock);
        let (a, b) = (e.as_array(), back.angles.as_array());
        for k in 0..3 {
            prop_assert!(wrap_angle(a[k] - b[k]).abs() < 1e-9, "{e:?} -> {:?}", back.angles);
        }
    }

    #[test]
    fn apply_preserves_pairwise_distances(t in transform(), c in cloud(2..100)) {
        let moved = t.apply(&c);
        for i in 0..c.len() {
            for j in i + 1..c.len() {
                let before = (c.points[i] - c.points[j]).norm();
                let after = (moved.points[i] - moved.points[j]).norm();
                prop_assert!((before - after).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn compose_is_associative(a in transform(), b in transform(), c in transform()) {
        prop_assert!(close(&a.compose(&b).compose(&c), &a.compose(&b.compose(&c)), 1e-12));
    }

    #[test]
    fn inverse_is_an_involution(t in transform()) {
        prop_assert!(close(&t.inverse().inverse(), &t, 1e-12));
        prop_assert!(close(&t.compose(&t.inverse()), &RigidTransform::identity(), 1e-12));
    }

    #[test]
    fn back_projection_emits_one_point_per_valid_pixel_at_its_pixel(
        depth in prop::collection::vec(prop_oneof![Just(0.0f32), 0.1f32..80.0], 12 * 9),
        f in 50.0..900.0f64,
        cu in 0.0..11.9f64,
        cv in 0.0..8.9f64,
    ) {
        let k = CameraIntrinsics::new(f, f * 0.9, cu, cv, 12, 9).unwrap();
        let d = DepthMap::from_depths(12, 9, depth).unwrap();
        let cloud = back_project(&d, &k).unwrap();
        prop_assert_eq!(cloud.len(), d.valid_count());
        let pixels = (0..9).flat_map(|v| (0..12).map(move |u| (u, v))).filter(|&(u, v)| d.get(u, v).is_some());
        for (p, (u, v)) in cloud.points.iter().zip(pixels) {
            let (pu, pv) = k.project(p);
            prop_assert!((pu - u as f64).abs() < 1e-9 && (pv - v as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn edge_filter_never_creates_valid_pixels(
        depth in prop::collection::vec(prop_oneof![Just(0.0f32), 0.1f32..80.0], 10 * 7),
        edge in prop::collection::vec(any::<bool>(), 10 * 7),
    ) {
        let d = DepthMap::from_depths(10, 7, depth).unwrap();
        let m = EdgeMask { width: 10, height: 7, edge };
        let out = filter_edges(&d, &m).unwrap();
        for i in 0..d.valid.len() {
            prop_assert!(!out.valid[i] || d.valid[i]);
            prop_assert_eq!(out.valid[i], d.valid[i] && !m.edge[i]);
        }
    }
}

fn small_grid(cap: usize) -> PillarGridConfig {
    PillarGridConfig {
        x_min: -10.0,
        x_max: 10.0,
        y_min: -10.0,
        y_max: 10.0,
        cell_size: 0.5,
        max_points_per_pillar: cap,
        z_clip_min: -3.0,
        z_clip_max: 5.0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn pillarize_ignores_point_order_without_overflow(
        pts in prop::collection::vec(point(12.0), 1..300),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let grid = small_grid(1000);
        let mut shuffled = pts.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let a = pillarize(&PointCloud::from_points(pts), &grid).unwrap();
        let b = pillarize(&PointCloud::from_points(shuffled), &grid).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn retained_points_never_exceed_input(c in cloud(0..400), cap in 1usize..6) {
        let img = pillarize(&c, &small_grid(cap)).unwrap();
        let total: f64 = img.features.iter().map(|f| f[0] as f64 * cap as f64).sum();
        prop_assert!(total.round() as usize == img.retained_points());
        prop_assert!(img.retained_points() <= c.len());
    }

    #[test]
    fn grid_aligned_shift_moves_occupancy(
        pts in prop::collection::vec(point(9.9), 1..200),
        dc in -6i64..6,
        dr in -6i64..6,
    ) {
        let grid = small_grid(1000);
        // Snap to cell-interior positions so shifted points stay off cell borders.
        let snap = |v: f64| ((v / 0.5).floor() + 0.25) * 0.5;
        let pts: Vec<_> = pts.iter().map(|p| Point3::new(snap(p.x), snap(p.y), p.z)).collect();
        let shift = Vector3::new(dc as f64 * 0.5, dr as f64 * 0.5, 0.0);
        let a = occupancy(&pillarize(&PointCloud::from_points(pts.clone()), &grid).unwrap());
        let moved: Vec<_> = pts.iter().map(|p| p + shift).collect();
        let b = occupancy(&pillarize(&PointCloud::from_points(moved), &grid).unwrap());
        for r in 0..a.rows as i64 {
            for c in 0..a.cols as i64 {
                let (sr, sc) = (r + dr, c + dc);
                if sr >= 0 && sc >= 0 && sr < a.rows as i64 && sc < a.cols as i64 {
                    prop_assert_eq!(a.get(r as usize, c as usize), b.get(sr as usize, sc as usize));
                }
            }
        }
    }

    #[test]
    fn decalibration_inverts_algebraically(t in transform(), d in decal(DecalibrationRange::PSEUDO_PILLARS)) {
        let lidar = PointCloud::from_points(vec![Point3::new(1.0, 2.0, 3.0)]);
        let s = sample_with_decalibration(lidar.clone(), lidar, t, d).unwrap();
        prop_assert!(close(&s.t_decal.inverse().compose(&s.t_init), &s.t_true, 1e-9));
    }

    #[test]
    fn augmentation_keeps_labels_bit_identical(t in transform(), d in decal(DecalibrationRange::UNICAL_M), aug in transform()) {
        let lidar = PointCloud::from_points(vec![Point3::new(4.0, -1.0, 0.5), Point3::new(9.0, 3.0, 1.0)]);
        let s = sample_with_decalibration(lidar.clone(), t.apply(&lidar), t, d).unwrap();
        let a = apply_augmentation(&s, &aug);
        let bits = |t: &RigidTransform| t.rotation.matrix().iter().chain(t.translation.iter()).map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&a.t_true), bits(&s.t_true));
        prop_assert_eq!(bits(&a.t_init), bits(&s.t_init));
        prop_assert_eq!(a.decal_params, s.decal_params);
    }

    #[test]
    fn losses_are_nonnegative_and_vanish_at_the_label(c in cloud(1..100), p in params(1.0, 2.0), g in params(1.0, 2.0)) {
        let w = LossWeights::default();
        let b = total_loss(&c, &p, &g, &w).unwrap();
        for v in [b.l_t, b.l_r, b.l_pcl, b.l_c, b.total] {
            prop_assert!(v >= 0.0);
        }
        let z = total_loss(&c, &g, &g, &w).unwrap();
        prop_assert_eq!([z.l_t, z.l_r, z.l_pcl, z.l_c, z.total], [0.0; 5]);
        prop_assert_eq!(translation_loss(&g, &g), 0.0);
        prop_assert_eq!(rotation_loss(&g, &g), 0.0);
        prop_assert_eq!(centroid_loss(&c, &g, &g).unwrap(), 0.0);
    }

    #[test]
    fn point_loss_is_bounded_by_lever_arm(c in cloud(1..100), p in params(1.0, 2.0), g in params(1.0, 2.0)) {
        let (tp, tg) = (p.to_transform().unwrap(), g.to_transform().unwrap());
        let theta = tp.rotation.geodesic_angle_deg(&tg.rotation).to_radians();
        let reach = c.points.iter().map(|q| q.coords.norm()).fold(0.0, f64::max);
        let bound = reach * theta + (tp.translation - tg.translation).norm();
        prop_assert!(pcl_loss(&c, &p, &g).unwrap() <= bound + 1e-9);
    }

    #[test]
    fn total_is_linear_in_each_weight(c in cloud(1..60), p in params(1.0, 2.0), g in params(1.0, 2.0)) {
        let w = LossWeights::default();
        let base = total_loss(&c, &p, &g, &w).unwrap();
        let doubled = total_loss(&c, &p, &g, &LossWeights { gamma: 2.0 * w.gamma, ..w }).unwrap();
        prop_assert!((doubled.total - base.total - w.gamma * base.l_pcl).abs() <= 1e-12 * base.total.max(1.0));
    }

    #[test]
    fn mae_matches_scalar_recomputation(
        pairs in prop::collection::vec((params(3.0, 2.0), params(3.0, 2.0)), 1..40),
    ) {
        let (preds, gts): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let m = mae_metrics(&preds, &gts).unwrap();
        let n = preds.len() as f64;
        let mut yaw = 0.0;
        let mut tz = 0.0;
        for (p, g) in preds.iter().zip(&gts) {
            let mut d = (p.euler.yaw - g.euler.yaw).to_degrees().rem_euclid(360.0);
            if d > 180.0 {
                d = 360.0 - d;
            }
            yaw += d;
            tz += (p.translation.z - g.translation.z).abs() * 100.0;
        }
        prop_assert!((m.rotation_axes[2] - yaw / n).abs() < 1e-9);
        prop_assert!((m.translation_axes[2] - tz / n).abs() < 1e-9);
        prop_assert!((m.rotation_mae - m.rotation_axes.iter().sum::<f64>() / 3.0).abs() < 1e-12);
    }
}

/// A LiDAR-like cloud (x forward, z up): ground plus a
/// few walls, with an asymmetric layout so alignments are unambiguous.
fn structured_cloud() -> PointCloud {
    let mut pts = Vec::new();
    let walls = [
        ((8.0, -6.0), (8.0, 4.0)),
        ((-3.0, 9.0), (6.0, 9.0)),
        ((-12.0, -4.0), (-5.0, -10.0)),
        ((3.0, -14.0), (4.0, -14.0)),
    ];
    for ((x0, y0), (x1, y1)) in walls {
        for i in 0..=80 {
            let s = i as f64 / 80.0;
            for h in 0..8 {
                pts.push(Point3::new(
                    x0 + s * (x1 - x0),
                    y0 + s * (y1 - y0),
                    -1.5 + h as f64 * 0.4,
                ));
            }
        }
    }
    for i in -30..30 {
        for j in -30..30 {
            pts.push(Point3::new(i as f64 * 0.7, j as f64 * 0.7, -1.6));
        }
    }
    PointCloud::from_points(pts)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn oracle_cascade_closes_for_any_decalibration(t in transform(), d in decal(DecalibrationRange::PSEUDO_PILLARS)) {
        let lidar = structured_cloud();
        let s = sample_with_decalibration(lidar.clone(), t.apply(&lidar), t, d).unwrap();
        let cfg = CascadeConfig::new(
            vec![
                EstimatorSpec::oracle(DecalibrationRange::PSEUDO_PILLARS),
                EstimatorSpec::oracle(DecalibrationRange::UNICAL_M),
                EstimatorSpec::oracle(DecalibrationRange::UNICAL_S),
            ],
            PillarGridConfig::default(),
        )
        .unwrap();
        let r = run_cascade(&s, &cfg).unwrap();
        prop_assert!(close(&r.estimate, &s.t_true, 1e-9));
        prop_assert!(r.stages.iter().all(|st| close(&st.estimate, &s.t_true, 1e-9)));
    }

    #[test]
    fn stage_estimates_compose_residuals_in_order(d in decal(DecalibrationRange::UNICAL_M)) {
        let lidar = structured_cloud();
        let t = pseudocal::se3::body_to_optical();
        let s = sample_with_decalibration(lidar.clone(), t.apply(&lidar), t, d).unwrap();
        let cfg = CascadeConfig::new(
            vec![
                EstimatorSpec::coarse(DecalibrationRange::PSEUDO_PILLARS, 3.0),
                EstimatorSpec::oracle(DecalibrationRange::UNICAL_M),
                EstimatorSpec::oracle(DecalibrationRange::UNICAL_S),
            ],
            PillarGridConfig::default(),
        )
        .unwrap();
        let r = run_cascade(&s, &cfg).unwrap();
        let mut current = s.t_init;
        for st in &r.stages {
            current = body_motion_in_optical(&st.residual.to_transform().unwrap()).compose(&current);
            prop_assert!(close(&st.estimate, &current, 1e-12));
        }
        prop_assert!(close(&r.estimate, &current, 0.0));
        prop_assert_eq!(&r, &run_cascade(&s, &cfg).unwrap());
    }

    #[test]
    fn coarse_yaw_is_equivariant_at_grid_resolution(k in 0i64..120) {
        let grid = PillarGridConfig::default();
        let cfg = CoarseGridConfig::default();
        let base = structured_cloud();
        let yaw_of = |extra: i64| {
            let rot = RigidTransform::from_euler(EulerAngles::from_degrees(0.0, 0.0, extra as f64 * cfg.yaw_step_deg), Vector3::zeros()).unwrap();
            let pseudo = pillarize(&rot.apply(&base), &grid).unwrap();
            let lidar = pillarize(&base, &grid).unwrap();
            coarse_grid_estimate(&pseudo, &lidar, &cfg).unwrap().euler.yaw.to_degrees()
        };
        let (y0, yk) = (yaw_of(0), yaw_of(k));
        let step = (yk - y0 - k as f64 * cfg.yaw_step_deg).rem_euclid(360.0);
        prop_assert!(step.min(360.0 - step) < 1e-6, "k {k}: {y0} -> {yk}");
    }
}
