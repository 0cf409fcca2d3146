//! Software emulation of 8-bit floating point (E4M3, E5M2) and BF16 rounding.
//!
//! All conversions go through `f32`. Decoding re-biases the 8-bit exponent
//! field into the `f32` exponent field and shifts the mantissa into place, so
//! every finite FP8 value is represented exactly. Encoding rounds to the
//! nearest finite level with ties to an even mantissa field and saturates
//! out-of-range magnitudes to the largest finite level.

use std::fmt;

/// How the all-ones exponent field is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpecialConvention {
    /// No infinities. Only `S.1111.111` is NaN; the other all-ones exponent
    /// patterns are ordinary normal numbers.
    E4m3Style,
    /// All-ones exponent encodes infinity (zero mantissa) or NaN, as in the
    /// IEEE binary interchange formats.
    IeeeStyle,
}

/// Descriptor of a sign + exponent + mantissa 8-bit float layout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fp8Format {
    name: &'static str,
    exponent_bits: u32,
    mantissa_bits: u32,
    bias: i32,
    special: SpecialConvention,
    max_finite: f32,
}

/// E4M3: bias 7, no infinities, max finite 448.
pub const E4M3: Fp8Format = Fp8Format::new("e4m3", 4, 3, 7, SpecialConvention::E4m3Style);

/// E5M2: bias 15, IEEE-style specials, max finite 57344.
pub const E5M2: Fp8Format = Fp8Format::new("e5m2", 5, 2, 15, SpecialConvention::IeeeStyle);

const fn pow2(exp: i32) -> f32 {
    let mut v = 1.0f32;
    let mut i = 0;
    if exp >= 0 {
        while i < exp {
            v *= 2.0;
            i += 1;
        }
    } else {
        while i < -exp {
            v *= 0.5;
            i += 1;
        }
    }
    v
}

impl Fp8Format {
    /// Builds a format descriptor. Panics unless `1 + exponent_bits +
    /// mantissa_bits == 8` with at least one bit in each field.
    pub const fn new(
        name: &'static str,
        exponent_bits: u32,
        mantissa_bits: u32,
        bias: i32,
        special: SpecialConvention,
    ) -> Self {
        assert!(exponent_bits + mantissa_bits == 7, "FP8 layouts have 7 non-sign bits");
        assert!(exponent_bits >= 2 && mantissa_bits >= 1);
        let all_ones_exp = (1u32 << exponent_bits) - 1;
        let all_ones_mant = (1u32 << mantissa_bits) - 1;
        let (top_exp, top_mant) = match special {
            SpecialConvention::E4m3Style => (all_ones_exp, all_ones_mant - 1),
            SpecialConvention::IeeeStyle => (all_ones_exp - 1, all_ones_mant),
        };
        let significand = ((1u32 << mantissa_bits) + top_mant) as f32;
        let max_finite = significand * pow2(top_exp as i32 - bias - mantissa_bits as i32);
        Self { name, exponent_bits, mantissa_bits, bias, special, max_finite }
    }

    /// Looks up one of the built-in formats by (case-insensitive) name.
    pub fn by_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "e4m3" => Some(E4M3),
            "e5m2" => Some(E5M2),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn exponent_bits(&self) -> u32 {
        self.exponent_bits
    }

    pub fn mantissa_bits(&self) -> u32 {
        self.mantissa_bits
    }

    pub fn bias(&self) -> i32 {
        self.bias
    }

    pub fn special_convention(&self) -> SpecialConvention {
        self.special
    }

    /// Largest finite magnitude the format can represent.
    pub fn max_finite(&self) -> f32 {
        self.max_finite
    }

    /// Smallest positive normal magnitude.
    pub fn min_normal(&self) -> f32 {
        pow2(1 - self.bias)
    }

    /// Smallest positive subnormal magnitude.
    pub fn min_subnormal(&self) -> f32 {
        pow2(1 - self.bias - self.mantissa_bits as i32)
    }

    fn exp_mask(&self) -> u8 {
        ((1u32 << self.exponent_bits) - 1) as u8
    }

    fn mant_mask(&self) -> u8 {
        ((1u32 << self.mantissa_bits) - 1) as u8
    }

    /// Bit pattern of `+max_finite`.
    pub fn max_code(&self) -> u8 {
        match self.special {
            SpecialConvention::E4m3Style => 0x7E,
            SpecialConvention::IeeeStyle => (self.exp_mask() - 1) << self.mantissa_bits | self.mant_mask(),
        }
    }

    /// Canonical (positive, quiet) NaN pattern.
    pub fn nan_code(&self) -> u8 {
        match self.special {
            SpecialConvention::E4m3Style => 0x7F,
            SpecialConvention::IeeeStyle => {
                self.exp_mask() << self.mantissa_bits | 1 << (self.mantissa_bits - 1)
            }
        }
    }

    /// `+inf` pattern, if the format has infinities.
    pub fn inf_code(&self) -> Option<u8> {
        match self.special {
            SpecialConvention::E4m3Style => None,
            SpecialConvention::IeeeStyle => Some(self.exp_mask() << self.mantissa_bits),
        }
    }

    pub fn is_nan_code(&self, bits: u8) -> bool {
        let mag = bits & 0x7F;
        match self.special {
            SpecialConvention::E4m3Style => mag == 0x7F,
            SpecialConvention::IeeeStyle => {
                (mag >> self.mantissa_bits) == self.exp_mask() && (mag & self.mant_mask()) != 0
            }
        }
    }

    pub fn is_inf_code(&self, bits: u8) -> bool {
        self.inf_code().is_some_and(|inf| bits & 0x7F == inf)
    }

    pub fn is_finite_code(&self, bits: u8) -> bool {
        !self.is_nan_code(bits) && !self.is_inf_code(bits)
    }

    /// Decodes an 8-bit pattern to its exact `f32` value.
    pub fn decode(&self, bits: u8) -> f32 {
        let negative = bits & 0x80 != 0;
        let sign = (negative as u32) << 31;
        if self.is_nan_code(bits) {
            return f32::NAN;
        }
        if self.is_inf_code(bits) {
            return if negative { f32::NEG_INFINITY } else { f32::INFINITY };
        }
        let m = self.mantissa_bits;
        let mut exp_field = ((bits >> m) & self.exp_mask()) as i32;
        let mut mant = (bits & self.mant_mask()) as u32;
        if exp_field == 0 {
            if mant == 0 {
                return f32::from_bits(sign);
            }
            // Subnormal: normalize so the leading one becomes implicit.
            exp_field = 1;
            while mant & (1 << m) == 0 {
                mant <<= 1;
                exp_field -= 1;
            }
            mant &= (1 << m) - 1;
        }
        let f32_exp = (exp_field - self.bias + 127) as u32;
        f32::from_bits(sign | f32_exp << 23 | mant << (23 - m))
    }

    /// Encodes `x` to the nearest finite level, ties to even mantissa,
    /// saturating magnitudes above `max_finite`.
    pub fn encode(&self, x: f32) -> u8 {
        if x.is_nan() {
            return self.nan_code();
        }
        let sign: u8 = if x.is_sign_negative() { 0x80 } else { 0 };
        let mag = x.abs();
        if mag.is_infinite() {
            return sign | self.inf_code().unwrap_or_else(|| self.max_code());
        }
        if mag >= self.max_finite {
            return sign | self.max_code();
        }

        let m = self.mantissa_bits as i32;
        let min_normal_exp = 1 - self.bias;
        // f32 subnormals report -127 here and land far below the FP8 grid.
        let exp = ((mag.to_bits() >> 23) & 0xFF) as i32 - 127;
        let quantum_exp = exp.max(min_normal_exp) - m;
        let steps = (mag * pow2(-quantum_exp)).round_ties_even() as u32;

        let code = if exp < min_normal_exp {
            // A carry to 1 << m lands exactly on the smallest normal code.
            steps
        } else {
            // steps is in [2^m, 2^(m+1)]; the top value carries into the exponent.
            (((exp + self.bias) as u32) << m) + steps - (1 << m)
        };
        debug_assert!(code <= self.max_code() as u32);
        sign | code as u8
    }

    /// Spacing between adjacent levels around magnitude `mag` (the ulp).
    pub fn quantum(&self, mag: f32) -> f32 {
        let mag = mag.abs();
        let exp = if mag == 0.0 { i32::MIN } else { ((mag.to_bits() >> 23) & 0xFF) as i32 - 127 };
        pow2(exp.max(1 - self.bias) - self.mantissa_bits as i32)
    }

    /// Every distinct finite value of the format in strictly increasing
    /// order, with `+0` and `-0` merged.
    pub fn levels(&self) -> Vec<f32> {
        let mut out: Vec<f32> = (0..=255u8)
            .filter(|&c| self.is_finite_code(c))
            .map(|c| self.decode(c) + 0.0)
            .collect();
        out.sort_by(f32::total_cmp);
        out.dedup();
        out
    }
}

impl fmt::Display for Fp8Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name)
    }
}

/// An 8-bit pattern tagged with the format it belongs to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fp8Code {
    pub bits: u8,
    pub format: Fp8Format,
}

impl Fp8Code {
    pub fn new(bits: u8, format: Fp8Format) -> Self {
        Self { bits, format }
    }

    pub fn decode(self) -> f32 {
        self.format.decode(self.bits)
    }
}

impl fmt::LowerHex for Fp8Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::LowerHex::fmt(&self.bits, f)
    }
}

impl fmt::UpperHex for Fp8Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::UpperHex::fmt(&self.bits, f)
    }
}

pub fn decode(code: Fp8Code) -> f32 {
    code.decode()
}

pub fn encode_nearest(x: f32, format: Fp8Format) -> Fp8Code {
    Fp8Code::new(format.encode(x), format)
}

/// Fake-quantizes `x` onto the format's grid: `decode(encode_nearest(x))`.
pub fn round_to_fp8(x: f32, format: Fp8Format) -> f32 {
    format.decode(format.encode(x))
}

pub fn enumerate_levels(format: Fp8Format) -> Vec<f32> {
    format.levels()
}

/// BF16 bit pattern of `x`, round-to-nearest-even. NaN stays NaN (quieted).
pub fn bf16_bits(x: f32) -> u16 {
    let bits = x.to_bits();
    if x.is_nan() {
        return ((bits >> 16) | 0x0040) as u16;
    }
    let lsb = (bits >> 16) & 1;
    (bits.wrapping_add(0x7FFF + lsb) >> 16) as u16
}

/// Rounds `x` to the nearest BF16 value (8 exponent bits, 7 mantissa bits),
/// ties to even. Infinities and signed zeros pass through.
pub fn round_to_bf16(x: f32) -> f32 {
    f32::from_bits((bf16_bits(x) as u32) << 16)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Field-by-field decode in f64, written from the layout definition.
    fn decode_by_fields(bits: u8, fmt: &Fp8Format) -> f64 {
        let m = fmt.mantissa_bits();
        let e = fmt.exponent_bits();
        let sign = if bits & 0x80 != 0 { -1.0 } else { 1.0 };
        let exp_field = ((bits >> m) as u32) & ((1 << e) - 1);
        let mant_field = (bits as u32) & ((1 << m) - 1);
        let all_ones = (1 << e) - 1;
        match fmt.special_convention() {
            SpecialConvention::E4m3Style if exp_field == all_ones && mant_field == (1 << m) - 1 => {
                return f64::NAN
            }
            SpecialConvention::IeeeStyle if exp_field == all_ones => {
                return if mant_field == 0 { sign * f64::INFINITY } else { f64::NAN };
            }
            _ => {}
        }
        let bias = fmt.bias();
        if exp_field == 0 {
            sign * mant_field as f64 * 2f64.powi(1 - bias - m as i32)
        } else {
            sign * (1.0 + mant_field as f64 / 2f64.powi(m as i32)) * 2f64.powi(exp_field as i32 - bias)
        }
    }

    #[test]
    fn decode_matches_field_oracle_for_all_codes() {
        for fmt in [E4M3, E5M2] {
            for c in 0..=255u8 {
                let got = fmt.decode(c) as f64;
                let want = decode_by_fields(c, &fmt);
                if want.is_nan() {
                    assert!(got.is_nan(), "{fmt} {c:#04x}");
                } else {
                    assert_eq!(got, want, "{fmt} {c:#04x}");
                    assert_eq!(got.is_sign_negative(), want.is_sign_negative());
                }
            }
        }
    }

    #[test]
    fn e4m3_decode_examples() {
        assert_eq!(E4M3.decode(0x00).to_bits(), 0.0f32.to_bits());
        assert_eq!(E4M3.decode(0x7E), 448.0);
        assert_eq!(E4M3.decode(0x38), 1.0);
        assert_eq!(E4M3.decode(0x01), 0.001953125);
        assert!(E4M3.decode(0x7F).is_nan());
        assert!(E4M3.decode(0xFF).is_nan());
        assert_eq!(E4M3.decode(0x80).to_bits(), (-0.0f32).to_bits());
    }

    #[test]
    fn e5m2_decode_examples() {
        assert_eq!(E5M2.decode(0x7B), 57344.0);
        assert_eq!(E5M2.decode(0x7C), f32::INFINITY);
        assert_eq!(E5M2.decode(0xFC), f32::NEG_INFINITY);
        assert!(E5M2.decode(0x7D).is_nan());
        assert_eq!(E5M2.decode(0x3C), 1.0);
        assert_eq!(E5M2.decode(0x01), 2f32.powi(-16));
    }

    #[test]
    fn max_finite_matches_enumeration() {
        for fmt in [E4M3, E5M2] {
            let max = (0..=255u8)
                .map(|c| fmt.decode(c))
                .filter(|v| v.is_finite())
                .fold(f32::MIN, f32::max);
            assert_eq!(max, fmt.max_finite());
            assert_eq!(fmt.decode(fmt.max_code()), fmt.max_finite());
        }
        assert_eq!(E4M3.max_finite(), 448.0);
        assert_eq!(E5M2.max_finite(), 57344.0);
    }

    #[test]
    fn encode_examples() {
        assert_eq!(E4M3.encode(17.0), E4M3.encode(16.0));
        assert_eq!(E4M3.encode(17.0), 0x58);
        assert_eq!(E4M3.encode(1000.0), 0x7E);
        assert_eq!(E4M3.encode(-1000.0), 0xFE);
        assert_eq!(E4M3.encode(0.0), 0x00);
        assert_eq!(E5M2.encode(0.0), 0x00);
        assert_eq!(E4M3.encode(-0.0), 0x80);
        assert_eq!(E4M3.decode(E4M3.encode(0.017)), 0.017578125);
        assert_eq!(E4M3.encode(1.0), 0x38);
    }

    #[test]
    fn specials_encode() {
        assert_eq!(E4M3.encode(f32::INFINITY), 0x7E);
        assert_eq!(E4M3.encode(f32::NEG_INFINITY), 0xFE);
        assert_eq!(E5M2.encode(f32::INFINITY), 0x7C);
        assert_eq!(E5M2.encode(f32::NEG_INFINITY), 0xFC);
        assert_eq!(E5M2.encode(1.0e6), 0x7B);
        assert_eq!(E4M3.encode(f32::NAN), 0x7F);
        assert_eq!(E5M2.encode(f32::NAN), 0x7E);
        assert!(E5M2.is_nan_code(E5M2.nan_code()));
    }

    #[test]
    fn subnormal_boundaries() {
        // Half of the smallest subnormal ties to zero (even).
        assert_eq!(E4M3.encode(2f32.powi(-10)), 0x00);
        assert_eq!(E4M3.encode(2f32.powi(-10) * 1.0001), 0x01);
        // Largest subnormal rounding up carries into the smallest normal.
        assert_eq!(E4M3.encode(E4M3.min_normal() - E4M3.min_subnormal() / 4.0), 0x08);
        assert_eq!(E4M3.decode(0x08), E4M3.min_normal());
        assert_eq!(E4M3.encode(f32::from_bits(1)), 0x00);
        assert_eq!(E5M2.encode(-f32::from_bits(1)), 0x80);
    }

    #[test]
    fn round_trip_every_finite_code() {
        for fmt in [E4M3, E5M2] {
            for c in 0..=255u8 {
                if fmt.is_finite_code(c) {
                    assert_eq!(fmt.encode(fmt.decode(c)), c, "{fmt} {c:#04x}");
                }
            }
        }
    }

    #[test]
    fn round_to_fp8_examples() {
        assert_eq!(round_to_fp8(1.0, E4M3), 1.0);
        assert_eq!(round_to_fp8(17.0, E4M3), 16.0);
        assert_eq!(round_to_fp8(-17.0, E4M3), -16.0);
        assert_eq!(round_to_fp8(19.0, E4M3), 20.0);
    }

    #[test]
    fn level_sets() {
        let levels = enumerate_levels(E4M3);
        assert_eq!(levels.len(), 253);
        assert_eq!(levels[0], -448.0);
        assert_eq!(*levels.last().unwrap(), 448.0);
        assert!(levels.windows(2).all(|w| w[0] < w[1]));
        for v in &levels {
            assert!(levels.contains(&-v));
        }
        let zero = levels.iter().position(|&v| v == 0.0).unwrap();
        assert_eq!(levels[zero + 1] - levels[zero], 2f32.powi(-9));
        for w in levels.windows(2).filter(|w| w[0] >= 256.0) {
            assert_eq!(w[1] - w[0], 32.0);
        }
        assert_eq!(enumerate_levels(E5M2).len(), 247);
    }

    #[test]
    fn quantum_examples() {
        assert_eq!(E4M3.quantum(1.0), 0.125);
        assert_eq!(E4M3.quantum(300.0), 32.0);
        assert_eq!(E4M3.quantum(0.0), 2f32.powi(-9));
        assert_eq!(E5M2.quantum(57344.0), 8192.0);
    }

    #[test]
    fn bf16_examples() {
        assert_eq!(round_to_bf16(1.0), 1.0);
        assert_eq!(round_to_bf16(1.0 + 2f32.powi(-9)), 1.0);
        assert_eq!(round_to_bf16(-0.0).to_bits(), (-0.0f32).to_bits());
        // exact tie at half-ulp goes to even (1.0), just above goes up
        assert_eq!(round_to_bf16(1.0 + 2f32.powi(-8)), 1.0);
        assert_eq!(round_to_bf16(1.0 + 3.0 * 2f32.powi(-8)), 1.0 + 2f32.powi(-6));
        assert_eq!(round_to_bf16(f32::INFINITY), f32::INFINITY);
        assert!(round_to_bf16(f32::NAN).is_nan());
        assert_eq!(round_to_bf16(f32::MAX), f32::INFINITY);
    }

    #[test]
    fn bf16_agrees_with_half_crate() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200_000 {
            let x = f32::from_bits(rng.random::<u32>());
            let want = half::bf16::from_f32(x).to_f32();
            let got = round_to_bf16(x);
            if want.is_nan() {
                assert!(got.is_nan());
            } else {
                assert_eq!(got.to_bits(), want.to_bits(), "{x:e}");
            }
        }
    }
}
