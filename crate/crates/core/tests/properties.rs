use std::sync::Arc;

use metareg::data::{load_ddf, load_volume, save_ddf, save_volume};
use metareg::meta::reptile_update;
use metareg::metrics::dice;
use metareg::params::{Layout, ParamVector};
use metareg::report::{records_from_csv, records_to_csv, Method, MetricsRecord};
use metareg::transforms::{warp_volume, DisplacementField};
use metareg::volume::Volume;
use metareg::Tensor;
use proptest::prelude::*;

const EXT: [usize; 3] = [5, 4, 6];
const N: usize = 5 * 4 * 6;

fn volume(values: Vec<f32>) -> Volume {
    Volume::new(Tensor::new(&EXT, values).unwrap(), 0.8).unwrap()
}

fn field(values: Vec<f32>) -> DisplacementField {
    DisplacementField::new(Tensor::new(&[3, EXT[0], EXT[1], EXT[2]], values).unwrap()).unwrap()
}

fn params(values: Vec<f32>) -> ParamVector {
    let mut layout = Layout::new();
    layout.push("w", &[values.len()]);
    ParamVector::from_values(Arc::new(layout), values).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dice_is_symmetric_and_bounded(a in prop::collection::vec(any::<bool>(), N), b in prop::collection::vec(any::<bool>(), N)) {
        let to = |m: &[bool]| volume(m.iter().map(|&x| x as u8 as f32).collect());
        let (va, vb) = (to(&a), to(&b));
        let d = dice(&va, &vb).unwrap();
        prop_assert_eq!(d, dice(&vb, &va).unwrap());
        prop_assert!((0.0..=1.0).contains(&d));
    }

    #[test]
    fn reptile_stays_on_the_segment(
        pairs in prop::collection::vec((-10.0f32..10.0, -10.0f32..10.0), 1..64),
        beta in 0.0f64..=1.0,
    ) {
        let (o, t): (Vec<f32>, Vec<f32>) = pairs.into_iter().unzip();
        let got = reptile_update(&params(o.clone()), &params(t.clone()), beta).unwrap();
        for ((&g, &a), &b) in got.values().iter().zip(&o).zip(&t) {
            prop_assert!(g >= a.min(b) && g <= a.max(b), "{g} outside [{a}, {b}]");
        }
    }

    #[test]
    fn warping_is_linear_in_the_image(
        v1 in prop::collection::vec(-1.0f32..1.0, N),
        v2 in prop::collection::vec(-1.0f32..1.0, N),
        u in prop::collection::vec(-2.0f32..2.0, 3 * N),
        a in -3.0f32..3.0,
    ) {
        let ddf = field(u);
        let combo = volume(v1.iter().zip(&v2).map(|(x, y)| a * x + y).collect());
        let lhs = warp_volume(&combo, &ddf).unwrap();
        let (w1, w2) = (warp_volume(&volume(v1), &ddf).unwrap(), warp_volume(&volume(v2), &ddf).unwrap());
        for ((&l, &p), &q) in lhs.data().iter().zip(w1.data()).zip(w2.data()) {
            prop_assert!((l - (a * p + q)).abs() <= 1e-5, "{l} vs {}", a * p + q);
        }
    }

    #[test]
    fn grids_round_trip_bit_exactly(v in prop::collection::vec(any::<f32>().prop_filter("finite", |x| x.is_finite()), N)) {
        let dir = tempfile::tempdir().unwrap();
        let vol = volume(v.clone());
        save_volume(&dir.path().join("v.hdr"), &vol).unwrap();
        prop_assert_eq!(load_volume(&dir.path().join("v.hdr")).unwrap(), vol);
        let ddf = field([v.clone(), v.clone(), v].concat());
        save_ddf(&dir.path().join("u.hdr"), &ddf, 0.8).unwrap();
        prop_assert_eq!(load_ddf(&dir.path().join("u.hdr")).unwrap(), ddf);
    }

    #[test]
    fn metrics_csv_round_trips(rows in prop::collection::vec((0usize..4, 0usize..1000, 0.0f64..=1.0, 0.0f64..1e3, 0.0f64..1e4), 0..20)) {
        let records: Vec<MetricsRecord> = rows
            .into_iter()
            .map(|(m, pair_id, dsc, tre_mm, wall_time_s)| MetricsRecord { method: Method::ALL[m], pair_id, dsc, tre_mm, wall_time_s })
            .collect();
        prop_assert_eq!(records_from_csv(&records_to_csv(&records)).unwrap(), records);
    }
}
