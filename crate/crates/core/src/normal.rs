//! Standard normal distribution primitives.
//!
//! `cdf` is computed from the complementary error function and is accurate to
//! about one ulp in the tails. `quantile` is Wichura's AS241 (PPND16), with
//! relative accuracy near 1e-16 over the whole open unit interval. Both map
//! the boundary values to the exact infinities: `cdf(±inf)` is 1 or 0 and
//! `quantile(0)`/`quantile(1)` are `-inf`/`+inf`.

use std::f64::consts::FRAC_1_SQRT_2;

/// 1 / sqrt(2 pi)
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
#[inline]
pub fn pdf(x: f64) -> f64 {
    if x.is_infinite() {
        return 0.0;
    }
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal cumulative distribution function.
#[inline]
pub fn cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        1.0
    } else if x == f64::NEG_INFINITY {
        0.0
    } else {
        0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
    }
}

const A: [f64; 8] = [
    3.387_132_872_796_366_608,
    1.331_416_678_917_843_774_5e2,
    1.971_590_950_306_551_442_7e3,
    1.373_169_376_550_946_112_5e4,
    4.592_195_393_154_987_145_7e4,
    6.726_577_092_700_870_085_3e4,
    3.343_057_558_358_812_810_5e4,
    2.509_080_928_730_122_672_7e3,
];
const B: [f64; 8] = [
    1.0,
    4.231_333_070_160_091_125_2e1,
    6.871_870_074_920_579_083e2,
    5.394_196_021_424_751_107_7e3,
    2.121_379_430_158_659_586_7e4,
    3.930_789_580_009_271_061e4,
    2.872_908_573_572_194_267_4e4,
    5.226_495_278_852_854_561e3,
];
const C: [f64; 8] = [
    1.423_437_110_749_683_577_34,
    4.630_337_846_156_545_295_9,
    5.769_497_221_460_691_405_5,
    3.647_848_324_763_204_605_04,
    1.270_458_252_452_368_382_58,
    2.417_807_251_774_506_117_7e-1,
    2.272_384_498_926_918_458_33e-2,
    7.745_450_142_783_414_076_4e-4,
];
const D: [f64; 8] = [
    1.0,
    2.053_191_626_637_758_821_87,
    1.676_384_830_183_803_849_4,
    6.897_673_349_851_000_045_5e-1,
    1.481_039_764_274_800_745_9e-1,
    1.519_866_656_361_645_719_66e-2,
    5.475_938_084_995_344_946e-4,
    1.050_750_071_644_416_843_24e-9,
];
const E: [f64; 8] = [
    6.657_904_643_501_103_777_2,
    5.463_784_911_164_114_369_9,
    1.784_826_539_917_291_335_8,
    2.965_605_718_285_048_912_3e-1,
    2.653_218_952_657_612_309_3e-2,
    1.242_660_947_388_078_438_6e-3,
    2.711_555_568_743_487_578_15e-5,
    2.010_334_399_292_288_132_65e-7,
];
const F: [f64; 8] = [
    1.0,
    5.998_322_065_558_879_376_9e-1,
    1.369_298_809_227_358_053_1e-1,
    1.487_536_129_085_061_485_25e-2,
    7.868_691_311_456_132_591e-4,
    1.846_318_317_510_054_681_8e-5,
    1.421_511_758_316_445_888_7e-7,
    2.044_263_103_389_939_785_64e-15,
];

#[inline]
fn poly(coef: &[f64; 8], x: f64) -> f64 {
    coef.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// Inverse of the standard normal CDF.
///
/// Returns NaN outside `[0, 1]`.
pub fn quantile(p: f64) -> f64 {
    if !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let x = if r <= 5.0 {
        r -= 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        r -= 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -x
    } else {
        x
    }
}

/// `sqrt(2 pi)`
pub const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values computed with mpmath at 40 digits.
    const CDF_REF: &[(f64, f64)] = &[
        (-38.0, 2.885_428_360_068_784_3e-316),
        (-10.0, 7.619_853_024_160_526e-24),
        (-5.0, 2.866_515_718_791_939_1e-7),
        (-1.5, 0.066_807_201_268_858_066),
        (-0.5, 0.308_537_538_725_986_9),
        (0.0, 0.5),
        (0.7, 0.758_036_347_776_927),
        (2.0, 0.977_249_868_051_820_8),
        (6.5, 0.999_999_999_959_84),
    ];

    const QUANTILE_REF: &[(f64, f64)] = &[
        (1e-300, -37.047_096_299_361_2),
        (1e-20, -9.262_340_089_798_408),
        (1e-12, -7.034_483_825_301_132),
        (1e-6, -4.753_424_308_822_899),
        (0.001, -3.090_232_306_167_813_5),
        (0.02, -2.053_748_910_631_823),
        (0.1, -1.281_551_565_544_600_4),
        (0.3, -0.524_400_512_708_040_8),
        (0.5, 0.0),
        (0.75, 0.674_489_750_196_081_7),
        (0.999, 3.090_232_306_167_813),
        (1.0 - 1e-10, 6.361_340_889_697_422),
    ];

    #[test]
    fn cdf_matches_high_precision_reference() {
        for &(x, want) in CDF_REF {
            let got = cdf(x);
            assert!((got - want).abs() <= 1e-15, "cdf({x}) = {got}, want {want}");
            if want > 0.0 {
                assert!(((got - want) / want).abs() < 1e-13, "relative error at {x}");
            }
        }
    }

    #[test]
    fn quantile_matches_high_precision_reference() {
        for &(p, want) in QUANTILE_REF {
            let got = quantile(p);
            let tol = 1e-9_f64.max(want.abs() * 1e-14);
            assert!((got - want).abs() <= tol, "quantile({p}) = {got}, want {want}");
        }
    }

    #[test]
    fn boundaries_are_infinite() {
        assert_eq!(quantile(0.0), f64::NEG_INFINITY);
        assert_eq!(quantile(1.0), f64::INFINITY);
        assert_eq!(cdf(f64::INFINITY), 1.0);
        assert_eq!(cdf(f64::NEG_INFINITY), 0.0);
        assert!(quantile(-0.1).is_nan());
        assert!(quantile(1.1).is_nan());
        assert_eq!(pdf(f64::NEG_INFINITY), 0.0);
    }

    #[test]
    fn round_trip() {
        for k in 1..1000 {
            let p = k as f64 / 1000.0;
            assert!((cdf(quantile(p)) - p).abs() < 1e-15);
        }
    }
}
