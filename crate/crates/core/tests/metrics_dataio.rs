use proptest::prelude::*;
use sar_core::dataio::*;
use sar_core::metrics::*;
use sar_core::motion::{Motion, Pose, Rotation, Skeleton};
use sar_core::SarError;

fn motion(joints: usize, max_len: usize) -> impl Strategy<Value = Vec<Pose>> {
    proptest::collection::vec(proptest::collection::vec([-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0], joints), 2..max_len)
        .prop_map(|frames| frames.into_iter().map(|j| Pose(j.into_iter().map(Rotation).collect())).collect())
}

fn pair() -> impl Strategy<Value = (Vec<Pose>, Vec<Pose>)> {
    (1usize..4, 2usize..20).prop_flat_map(|(j, n)| (motion(j, n + 1), motion(j, n + 1))).prop_filter_map(
        "equal lengths",
        |(mut a, mut b)| {
            let n = a.len().min(b.len());
            a.truncate(n);
            b.truncate(n);
            Some((a, b))
        },
    )
}

proptest! {
    #[test]
    fn mpjae_is_a_metric((a, b) in pair()) {
        let ab = mpjae(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - mpjae(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert_eq!(mpjae(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn geodesic_error_is_at_most_pi((a, b) in pair()) {
        let g = mpjae_geodesic(&a, &b).unwrap();
        prop_assert!((0.0..=std::f64::consts::PI + 1e-12).contains(&g));
    }

    #[test]
    fn npss_is_bounded_and_scale_free((a, b) in pair(), k in 0.1f64..10.0) {
        let truth_power: f64 = b.iter().map(|p| p.flat().iter().map(|v| v * v).sum::<f64>()).sum();
        prop_assume!(truth_power > 1e-6);
        let v = npss(&a, &b).unwrap();
        prop_assert!(v >= 0.0);
        prop_assert!(v <= (a.len() - 1) as f64 + 1e-9);
        let scaled: Vec<Pose> = a.iter().map(|p| Pose::from_flat(&p.flat().iter().map(|x| x * k).collect::<Vec<_>>())).collect();
        prop_assert!((npss(&scaled, &b).unwrap() - v).abs() < 1e-9);
    }

    #[test]
    fn power_spectrum_satisfies_parseval(x in proptest::collection::vec(-5.0f64..5.0, 1..40)) {
        let p = power_spectrum(&x);
        let energy: f64 = x.iter().map(|v| v * v).sum();
        prop_assert!((p.iter().sum::<f64>() / x.len() as f64 - energy).abs() < 1e-9 * (1.0 + energy));
    }

    #[test]
    fn motion_json_round_trips(frames in motion(3, 12), fps in 1.0f64..500.0) {
        let m = Motion::new(frames, fps).unwrap();
        prop_assert_eq!(motion_from_json(&motion_to_json(&m), "test").unwrap(), m);
    }

    #[test]
    fn windows_have_the_requested_length(len in 1usize..120, window in 1usize..20, stride in 1usize..10, fps in prop_oneof![Just(30.0), Just(120.0)]) {
        let frames = (0..len).map(|t| Pose(vec![Rotation([t as f64, 0.0, 0.0])])).collect();
        let m = Motion::new(frames, fps).unwrap();
        let w = slice_windows(&m, window, stride, FrameratePolicy::default()).unwrap();
        let native = if len >= window { (len - window) / stride + 1 } else { 0 };
        let half = if fps >= 60.0 && len >= 2 * window { (len - 2 * window) / (2 * stride) + 1 } else { 0 };
        prop_assert_eq!(w.len(), native + half);
        for (i, x) in w.iter().enumerate() {
            prop_assert_eq!(x.len(), window);
            let step = if i < native { 1.0 } else { 2.0 };
            prop_assert_eq!(x.frames[1.min(window - 1)].0[0].0[0] - x.frames[0].0[0].0[0], if window > 1 { step } else { 0.0 });
        }
    }

    #[test]
    fn split_keeps_groups_together(sizes in proptest::collection::vec(1usize..5, 1..30), seed in any::<u64>()) {
        let groups: Vec<Vec<(usize, usize)>> = sizes.iter().enumerate().map(|(g, &k)| (0..k).map(|i| (g, i)).collect()).collect();
        let total: usize = sizes.iter().sum();
        let s = split_dataset(groups, [0.6, 0.2, 0.2], seed).unwrap();
        prop_assert_eq!(s.train.len() + s.val.len() + s.test.len(), total);
        let owner = |x: &[(usize, usize)]| x.iter().map(|p| p.0).collect::<std::collections::BTreeSet<_>>();
        let (a, b, c) = (owner(&s.train), owner(&s.val), owner(&s.test));
        prop_assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
    }
}

#[test]
fn neighbor_l2_of_a_ramp() {
    let frames: Vec<Pose> = (0..5).map(|t| Pose(vec![Rotation([0.3 * t as f64, 0.4 * t as f64, 0.0])])).collect();
    assert!((neighbor_l2(&frames).unwrap() - 0.5).abs() < 1e-12);
    let skel = Skeleton::chain(1, 1.0).unwrap();
    assert_eq!(neighbor_l2_positions(&frames, &skel).unwrap(), 0.0);
}

#[test]
fn silent_truth_makes_npss_undefined() {
    let zeros = vec![Pose(vec![Rotation([0.0; 3])]); 8];
    let moving: Vec<Pose> = (0..8).map(|t| Pose(vec![Rotation([t as f64, 0.0, 0.0])])).collect();
    assert!(matches!(npss(&moving, &zeros), Err(SarError::UndefinedMetric(_))));
    assert!(npss(&zeros, &moving).unwrap() > 0.0);
}

#[test]
fn mismatched_lengths_are_rejected() {
    let a = vec![Pose::identity(2); 4];
    let b = vec![Pose::identity(2); 5];
    assert!(mpjae(&a, &b).is_err());
    assert!(npss(&a, &b).is_err());
}

#[test]
fn evaluation_table_has_fixed_columns() {
    let truth = vec![(0..6).map(|t| Pose(vec![Rotation([t as f64 * 0.1, 0.0, 0.0]); 2])).collect::<Vec<_>>()];
    let row = evaluate("gt", &truth, &truth, &Skeleton::chain(2, 0.5).unwrap()).unwrap();
    assert_eq!((row.mpjae, row.mpjpe, row.neighbor_gap, row.npss), (0.0, 0.0, 0.0, 0.0));
    let csv = eval_csv(&[row]);
    assert_eq!(csv.lines().next().unwrap(), EVAL_COLUMNS.join(","));
}

#[test]
fn unknown_fields_and_ragged_frames_fail_to_parse() {
    let ragged = r#"{"fps": 30.0, "frames": [[[0,0,0]], [[0,0,0],[1,1,1]]]}"#;
    assert!(matches!(motion_from_json(ragged, "x"), Err(SarError::InvalidInput(_)) | Err(SarError::Parse { .. })));
    let extra = r#"{"fps": 30.0, "frames": [[[0,0,0]]], "name": "walk"}"#;
    assert!(matches!(motion_from_json(extra, "x"), Err(SarError::Parse { .. })));
}

#[test]
fn manifest_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_generate(10, 2, 5, 30.0, 1).unwrap();
    let split = split_dataset(data.iter().cloned().map(|m| vec![m]).collect(), [0.5, 0.2, 0.3], 0).unwrap();
    let manifest = write_dataset(dir.path(), &split).unwrap();
    assert_eq!(load_split(&manifest, "train").unwrap(), split.train);
    assert_eq!(load_split(&manifest, "val").unwrap(), split.val);
    assert_eq!(load_split(&manifest, "test").unwrap(), split.test);
    let entries = load_manifest(&manifest).unwrap();
    assert_eq!(entries.len(), 10);
}

#[test]
fn bad_split_ratios_are_rejected() {
    assert!(split_dataset(vec![vec![1]], [0.5, 0.5, 0.5], 0).is_err());
    assert!(split_dataset(vec![vec![1]], [1.2, -0.1, -0.1], 0).is_err());
}
