//! Invariants under generated inputs.

use num_complex::Complex64;
use proptest::prelude::*;
use voladapt_core::curation::{judge, refine_volume, CaseReport, RefineConfig, SelectConfig, SliceProposal};
use voladapt_core::fourier::{apply_fda, fftshift3, ifftshift3};
use voladapt_core::metrics::{dice, label_components, Connectivity};
use voladapt_core::proposer::rle;
use voladapt_core::schedule::{ema_blend, LambdaSchedule, ParamVector};
use voladapt_core::volume::{
    decode, encode_mask, encode_volume, extract_slice, minmax_normalize, stack_slices, BBox2D, Dims3, Mask3D,
    SliceMask2D, VolFile, Volume3D,
};

fn dims_strategy(max: usize) -> impl Strategy<Value = Dims3> {
    (1..=max, 1..=max, 1..=max).prop_map(|(d, h, w)| Dims3::new(d, h, w))
}

fn volume_strategy(max: usize) -> impl Strategy<Value = Volume3D> {
    dims_strategy(max).prop_flat_map(|dims| {
        prop::collection::vec(-1000.0f32..1000.0, dims.len()).prop_map(move |v| Volume3D::new(dims, v).unwrap())
    })
}

fn mask_strategy(max: usize) -> impl Strategy<Value = Mask3D> {
    dims_strategy(max).prop_flat_map(|dims| {
        prop::collection::vec(any::<bool>(), dims.len())
            .prop_map(move |v| Mask3D::new(dims, v.into_iter().map(u8::from).collect()).unwrap())
    })
}

fn slice_strategy() -> impl Strategy<Value = SliceMask2D> {
    (1usize..12, 1usize..12).prop_flat_map(|(h, w)| {
        prop::collection::vec(any::<bool>(), h * w)
            .prop_map(move |v| SliceMask2D::new(h, w, v.into_iter().map(u8::from).collect()).unwrap())
    })
}

proptest! {
    #[test]
    fn rle_round_trips_and_sums(s in slice_strategy()) {
        let runs = rle::encode(&s);
        prop_assert_eq!(runs.iter().map(|&r| r as usize).sum::<usize>(), s.height() * s.width());
        prop_assert_eq!(rle::decode(&runs, s.height(), s.width()).unwrap(), s);
    }

    #[test]
    fn fftshift_inverts(dims in dims_strategy(7)) {
        let data: Vec<Complex64> = (0..dims.len()).map(|i| Complex64::new(i as f64, -(i as f64))).collect();
        prop_assert_eq!(ifftshift3(&fftshift3(&data, dims), dims), data);
    }

    #[test]
    fn vol1_round_trip(v in volume_strategy(6), m in mask_strategy(6)) {
        match decode(&encode_volume(&v).unwrap()).unwrap() {
            VolFile::Volume(back) => prop_assert_eq!(back, v),
            _ => prop_assert!(false, "dtype changed"),
        }
        let bytes = encode_mask(&m, [1.0, 2.0, 3.0]).unwrap();
        prop_assert_eq!(decode(&bytes).unwrap().into_mask(), m);
        for cut in [0, 4, 28, bytes.len() - 1] {
            if cut < bytes.len() {
                prop_assert!(decode(&bytes[..cut]).is_err());
            }
        }
    }

    #[test]
    fn normalize_is_bounded_and_idempotent(v in volume_strategy(5)) {
        let n = minmax_normalize(&v);
        prop_assert!(n.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
        let nn = minmax_normalize(&n);
        for (a, b) in n.data().iter().zip(nn.data()) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn fda_self_transfer_is_identity(v in volume_strategy(8), l in 0.01f64..0.5) {
        let out = apply_fda(&v, &v, l).unwrap();
        let scale = v.data().iter().fold(1.0f32, |m, x| m.max(x.abs()));
        for (a, b) in v.data().iter().zip(out.adapted.data()) {
            prop_assert!((a - b).abs() <= 1e-4 * scale);
        }
    }

    #[test]
    fn ema_stays_between_inputs(
        pair in (1usize..40).prop_flat_map(|n| (
            prop::collection::vec(-10.0f32..10.0, n),
            prop::collection::vec(-10.0f32..10.0, n),
        )),
        alpha in 0.001f64..0.999,
    ) {
        let (t, s) = pair;
        let out = ema_blend(
            &ParamVector::new("x", t.clone()).unwrap(),
            &ParamVector::new("x", s.clone()).unwrap(),
            alpha,
        ).unwrap();
        for ((o, a), b) in out.values().iter().zip(&t).zip(&s) {
            prop_assert!(*o >= a.min(*b) && *o <= a.max(*b));
        }
        let bytes = out.to_bytes();
        prop_assert_eq!(ParamVector::from_bytes(&bytes).unwrap(), out);
    }

    #[test]
    fn lambda_is_monotone_and_bounded(
        max in 0.01f64..10.0, gamma in 0.01f64..5.0, t0 in 0.0f64..100.0, warmup in 0u32..50,
        a in 0.0f64..200.0, b in 0.0f64..200.0,
    ) {
        let s = LambdaSchedule::new(max, gamma, t0, warmup).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(s.lambda_at(lo) <= s.lambda_at(hi));
        prop_assert!(s.lambda_at(hi) <= max && s.lambda_at(lo) >= 0.0);
    }

    #[test]
    fn slices_stack_back(m in mask_strategy(6)) {
        let slices: Vec<_> = (0..m.dims().d).map(|j| extract_slice(&m, j).unwrap()).collect();
        prop_assert_eq!(stack_slices(&slices).unwrap(), m);
    }

    #[test]
    fn components_coarsen_with_connectivity(m in mask_strategy(6)) {
        let six = label_components(&m, Connectivity::Six);
        let all = label_components(&m, Connectivity::TwentySix);
        prop_assert!(all.count <= six.count);
        prop_assert_eq!(six.sizes().iter().sum::<usize>(), m.count());
        prop_assert_eq!(six.count == 0, m.is_empty());
    }

    #[test]
    fn dice_is_symmetric_and_bounded(pair in dims_strategy(5).prop_flat_map(|d| (
        prop::collection::vec(any::<bool>(), d.len()),
        prop::collection::vec(any::<bool>(), d.len()),
        Just(d),
    ))) {
        let (a, b, dims) = pair;
        let a = Mask3D::new(dims, a.into_iter().map(u8::from).collect()).unwrap();
        let b = Mask3D::new(dims, b.into_iter().map(u8::from).collect()).unwrap();
        let x = dice(&a, &b).unwrap();
        prop_assert_eq!(x, dice(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert_eq!(dice(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn refine_leaves_unproposed_slices(
        m in mask_strategy(5),
        conf in 0.0f64..=1.0,
        tau in 0.05f64..0.95,
        which in any::<prop::sample::Index>(),
    ) {
        let dims = m.dims();
        let j = which.index(dims.d);
        let fill = SliceMask2D::new(dims.h, dims.w, vec![1; dims.h * dims.w]).unwrap();
        let bbox = BBox2D::new(0, dims.h - 1, 0, dims.w - 1).unwrap();
        let p = SliceProposal::new(j, fill.clone(), conf, bbox).unwrap();
        let out = refine_volume(&m, &[p], &RefineConfig::new(tau).unwrap()).unwrap();
        for k in 0..dims.d {
            let want = if k == j && conf >= tau { fill.clone() } else { extract_slice(&m, k).unwrap() };
            prop_assert_eq!(extract_slice(&out, k).unwrap(), want);
        }
    }

    #[test]
    fn tightening_never_admits(
        stats in (0.0f64..=1.0, 0.0f64..=1.0, 1usize..60),
        base in (0.05f64..0.95, 0.05f64..0.5, 0.5f64..0.95, 1u32..60),
        tighten in (0.0f64..0.2, 0.0f64..0.2, 0.0f64..0.2, 0u32..20),
    ) {
        let (mc, ov, cc) = stats;
        let (tc, lo, hi, tcc) = base;
        let loose = SelectConfig::new(tc, (lo, hi), tcc).unwrap();
        let tc2 = (tc + tighten.0).min(0.99);
        let lo2 = (lo + tighten.1).min(0.49);
        let hi2 = (hi - tighten.2).max(0.51);
        let tight = SelectConfig::new(tc2, (lo2, hi2), tcc.saturating_sub(tighten.3).max(1)).unwrap();
        let a: CaseReport = judge("c", 1, mc, ov, cc, &loose);
        let b = judge("c", 1, mc, ov, cc, &tight);
        prop_assert!(!b.retained || a.retained);
        prop_assert_eq!(a.retained, a.conf_pass && a.overlap_pass && a.cc_pass);
    }
}
