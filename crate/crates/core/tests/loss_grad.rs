mod support;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use support::*;
use topo_interaction::loss::{
    masked_loss, masked_loss_grad, total_loss_with_mask, DEFAULT_DICE_SMOOTHING,
};
use topo_interaction::{
    argmax_labels, detect, total_loss, Algorithm, BinaryMask, Connectivity, Constraint,
    ConstraintSet, Error, LabelGrid, LikelihoodGrid, LossConfig, Shape, Surrogate,
};

const STEP: f64 = 1e-4;

struct Case {
    f: LikelihoodGrid,
    g: LabelGrid,
    v: BinaryMask,
    cfg: LossConfig,
}

fn random_case(rng: &mut ChaCha8Rng, surrogate: Surrogate) -> Case {
    let dims = if rng.gen_bool(0.5) {
        vec![rng.gen_range(2..=6), rng.gen_range(2..=6)]
    } else {
        vec![
            rng.gen_range(2..=3),
            rng.gen_range(2..=3),
            rng.gen_range(2..=3),
        ]
    };
    let shape = Shape::new(&dims).unwrap();
    let c = rng.gen_range(2..=4u16);
    let logits: Vec<f64> = (0..shape.len() * usize::from(c))
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let f = LikelihoodGrid::softmax(shape, c, &logits).unwrap();
    let g = LabelGrid::new(
        &dims,
        (0..shape.len())
            .map(|_| rng.gen_range(0..c) as u8)
            .collect(),
        c,
    )
    .unwrap();
    let v = BinaryMask::from_shape(shape, (0..shape.len()).map(|_| rng.gen_bool(0.5)).collect())
        .unwrap();
    let cfg = LossConfig {
        surrogate,
        lambda_dice: rng.gen_range(0.5..2.0),
        lambda_ti: rng.gen_range(0.5..2.0),
        dice_smoothing: DEFAULT_DICE_SMOOTHING,
    };
    Case { f, g, v, cfg }
}

fn oracle<'a>(case: &'a Case, name: &'a str) -> LossOracle<'a> {
    LossOracle {
        labels: case.g.labels(),
        classes: usize::from(case.g.num_classes()),
        mask: case.v.bits(),
        eps: case.cfg.dice_smoothing,
        lambda_dice: case.cfg.lambda_dice,
        lambda_ti: case.cfg.lambda_ti,
        surrogate: name,
    }
}

/// Worst violation of `|analytic - fd| <= max(abs, rel * |fd|)`, as a ratio.
fn check_gradient(case: &Case) -> f64 {
    let name = case.cfg.surrogate.to_string();
    let o = oracle(case, &name);
    let report = total_loss_with_mask(&case.f, &case.g, &case.v, &case.cfg, true).unwrap();
    let (ce, dice, ti, total) = o.terms(case.f.values());
    for (lib, want) in [
        (report.l_ce, ce),
        (report.l_dice, dice),
        (report.l_ti, ti),
        (report.l_total, total),
    ] {
        assert!(
            (lib - want).abs() <= 1e-12 * want.abs().max(1.0),
            "{lib} vs {want}"
        );
    }
    let grad = report.gradient.unwrap();
    let mut x = case.f.values().to_vec();
    let mut worst: f64 = 0.0;
    for j in 0..x.len() {
        let keep = x[j];
        x[j] = keep + STEP;
        let up = o.total(&x);
        x[j] = keep - STEP;
        let down = o.total(&x);
        x[j] = keep;
        let fd = (up - down) / (2.0 * STEP);
        let allowed = (1e-4 * fd.abs()).max(1e-6);
        worst = worst.max((grad.values()[j] - fd).abs() / allowed);
    }
    worst
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for surrogate in Surrogate::ALL {
        for _ in 0..30 {
            let case = random_case(&mut rng, surrogate);
            let worst = check_gradient(&case);
            assert!(worst <= 1.0, "{surrogate}: worst ratio {worst}");
        }
    }
}

#[test]
fn masked_gradient_alone_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for surrogate in Surrogate::ALL {
        let case = random_case(&mut rng, surrogate);
        let lv = masked_loss_grad(
            &case.f,
            &case.g,
            &case.v,
            surrogate,
            case.cfg.dice_smoothing,
        )
        .unwrap();
        let name = surrogate.to_string();
        let o = oracle(&case, &name);
        let ti = |x: &[f64]| o.terms(x).2;
        assert!((lv.value - ti(case.f.values())).abs() < 1e-12);
        let mut x = case.f.values().to_vec();
        for j in 0..x.len() {
            let keep = x[j];
            x[j] = keep + STEP;
            let up = ti(&x);
            x[j] = keep - STEP;
            let down = ti(&x);
            x[j] = keep;
            let fd = (up - down) / (2.0 * STEP);
            assert!(
                (lv.gradient[j] - fd).abs() <= (1e-4 * fd.abs()).max(1e-6),
                "{surrogate} entry {j}"
            );
        }
    }
}

#[test]
fn hand_computed_cross_entropy() {
    let f = LikelihoodGrid::new(&[1, 2], 2, vec![0.6, 0.3, 0.4, 0.7], true).unwrap();
    let g = LabelGrid::new(&[1, 2], vec![0, 1], 2).unwrap();
    let v = BinaryMask::new(&[1, 2], vec![true, true]).unwrap();
    let l = masked_loss(&f, &g, &v, Surrogate::Ce, DEFAULT_DICE_SMOOTHING).unwrap();
    assert!((l - (-(0.6f64.ln() + 0.7f64.ln()) / 2.0)).abs() < 1e-15);
}

#[test]
fn empty_mask_and_one_hot_give_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for surrogate in Surrogate::ALL {
        let case = random_case(&mut rng, surrogate);
        let empty = BinaryMask::empty(case.f.shape());
        assert_eq!(
            masked_loss(&case.f, &case.g, &empty, surrogate, 1e-5).unwrap(),
            0.0
        );
        let lv = masked_loss_grad(&case.f, &case.g, &empty, surrogate, 1e-5).unwrap();
        assert!(lv.gradient.iter().all(|&x| x == 0.0));
    }
    let g = random_grid(&mut rng, &[6, 6], 3);
    let f = LikelihoodGrid::one_hot(&g);
    let all = BinaryMask::from_shape(g.shape(), vec![true; g.len()]).unwrap();
    assert_eq!(masked_loss(&f, &g, &all, Surrogate::Ce, 1e-5).unwrap(), 0.0);
    assert_eq!(
        masked_loss(&f, &g, &all, Surrogate::Mse, 1e-5).unwrap(),
        0.0
    );
}

#[test]
fn satisfying_one_hot_prediction_has_near_zero_total() {
    let g = LabelGrid::new(
        &[4, 4],
        vec![2, 2, 2, 2, 2, 1, 1, 2, 2, 1, 1, 2, 2, 2, 2, 2],
        3,
    )
    .unwrap();
    let cs = ConstraintSet::new(3, vec![Constraint::contain(1, 2)]).unwrap();
    let f = LikelihoodGrid::one_hot(&g);
    let r = total_loss(
        &f,
        &g,
        &cs,
        Connectivity::Eight,
        &LossConfig::for_ndim(2),
        true,
    )
    .unwrap();
    assert_eq!((r.l_ce, r.l_ti, r.critical_sites), (0.0, 0.0, 0));
    assert!(r.l_dice.abs() < 1e-6 && r.l_total.abs() < 1e-6);
}

#[test]
fn total_is_affine_in_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let case = random_case(&mut rng, Surrogate::Mse);
    let at = |ld: f64, lt: f64| {
        let cfg = LossConfig {
            lambda_dice: ld,
            lambda_ti: lt,
            ..case.cfg
        };
        total_loss_with_mask(&case.f, &case.g, &case.v, &cfg, false).unwrap()
    };
    let base = at(0.0, 0.0);
    assert_eq!(base.l_total, base.l_ce);
    for (ld, lt) in [(1.0, 0.0), (0.0, 2.5), (0.3, 0.7)] {
        let r = at(ld, lt);
        let expect = r.l_ce + ld * r.l_dice + lt * r.l_ti;
        assert!((r.l_total - expect).abs() <= 1e-12 * expect.abs().max(1.0));
        assert_eq!(
            (r.l_ce, r.l_dice, r.l_ti),
            (base.l_ce, base.l_dice, base.l_ti)
        );
    }
}

#[test]
fn surrogate_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..50 {
        let case = random_case(&mut rng, Surrogate::Ce);
        let eps = case.cfg.dice_smoothing;
        assert!(masked_loss(&case.f, &case.g, &case.v, Surrogate::Ce, eps).unwrap() >= 0.0);
        let mse = masked_loss(&case.f, &case.g, &case.v, Surrogate::Mse, eps).unwrap();
        assert!((0.0..=2.0).contains(&mse));
        let dice = masked_loss(&case.f, &case.g, &case.v, Surrogate::Dice, eps).unwrap();
        assert!((0.0..=1.0 + 1e-6).contains(&dice), "{dice}");
    }
}

#[test]
fn critical_mask_comes_from_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let cs = ConstraintSet::new(3, vec![Constraint::exclude(1, 2)]).unwrap();
    for _ in 0..20 {
        let case = random_case(&mut rng, Surrogate::Dice);
        if case.g.num_classes() != 3 {
            continue;
        }
        let conn = Connectivity::Box;
        let v = detect(&argmax_labels(&case.f), &cs, conn, Algorithm::Naive)
            .unwrap()
            .mask;
        let via_detect = total_loss(&case.f, &case.g, &cs, conn, &case.cfg, true).unwrap();
        let via_mask = total_loss_with_mask(&case.f, &case.g, &v, &case.cfg, true).unwrap();
        assert_eq!(via_detect, via_mask);
        assert_eq!(via_detect.critical_sites, v.count());
    }
}

#[test]
fn ce_needs_normalized_input() {
    let f = LikelihoodGrid::new(&[1, 2], 2, vec![2.0, 0.3, 0.4, 0.7], false).unwrap();
    let g = LabelGrid::new(&[1, 2], vec![0, 1], 2).unwrap();
    let v = BinaryMask::new(&[1, 2], vec![true, true]).unwrap();
    let err = masked_loss(&f, &g, &v, Surrogate::Ce, 1e-5).unwrap_err();
    assert!(matches!(err, Error::NotNormalized(_)));
    assert!(err.to_string().contains("normalized"));
    assert!(masked_loss(&f, &g, &v, Surrogate::Mse, 1e-5).is_ok());
}

#[test]
fn underflow_is_counted_and_floored() {
    let f = LikelihoodGrid::new(&[1, 2], 2, vec![1.0, 0.5, 0.0, 0.5], true).unwrap();
    let g = LabelGrid::new(&[1, 2], vec![1, 1], 2).unwrap();
    let v = BinaryMask::new(&[1, 2], vec![true, false]).unwrap();
    let lv = masked_loss_grad(&f, &g, &v, Surrogate::Ce, 1e-5).unwrap();
    assert_eq!(lv.underflow_sites, 1);
    assert!((lv.value + 1e-12f64.ln()).abs() < 1e-9);
    assert!(lv.value.is_finite());
}
