//! Reference implementations that share no code with the library: FP8
//! decoding straight from the bit-field formulas, and encoding by exhaustive
//! nearest-level search.

#![allow(dead_code)]

#[derive(Debug, Clone, Copy)]
pub struct Layout {
    pub exp_bits: u32,
    pub man_bits: u32,
    pub bias: i32,
    /// True for the standard binary-interchange convention (all-ones
    /// exponent reserved for inf/NaN); false for the E4M3 convention where
    /// only `S.1111.111` is NaN.
    pub ieee: bool,
}

pub const E4M3: Layout = Layout { exp_bits: 4, man_bits: 3, bias: 7, ieee: false };
pub const E5M2: Layout = Layout { exp_bits: 5, man_bits: 2, bias: 15, ieee: true };

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decoded {
    Finite(f64),
    Inf(bool),
    Nan,
}

pub fn decode(bits: u8, l: Layout) -> Decoded {
    let negative = bits & 0x80 != 0;
    let e = ((bits >> l.man_bits) as u32) & ((1 << l.exp_bits) - 1);
    let m = (bits as u32) & ((1 << l.man_bits) - 1);
    let all_ones = (1 << l.exp_bits) - 1;
    if e == all_ones {
        if l.ieee {
            return if m == 0 { Decoded::Inf(negative) } else { Decoded::Nan };
        }
        if m == (1 << l.man_bits) - 1 {
            return Decoded::Nan;
        }
    }
    let mag = if e == 0 {
        m as f64 * 2f64.powi(1 - l.bias - l.man_bits as i32)
    } else {
        (1.0 + m as f64 / (1 << l.man_bits) as f64) * 2f64.powi(e as i32 - l.bias)
    };
    Decoded::Finite(if negative { -mag } else { mag })
}

/// Non-negative finite codes in increasing order with their values.
pub fn positive_levels(l: Layout) -> Vec<(u8, f64)> {
    let mut v: Vec<(u8, f64)> = (0u8..=0x7F)
        .filter_map(|b| match decode(b, l) {
            Decoded::Finite(x) => Some((b, x)),
            _ => None,
        })
        .collect();
    v.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    v
}

pub fn max_finite(l: Layout) -> f64 {
    positive_levels(l).last().unwrap().1
}

/// Nearest level, ties to the even code, saturating at the largest finite
/// magnitude, with the sign bit copied from the input.
pub fn encode(x: f64, l: Layout, levels: &[(u8, f64)]) -> u8 {
    if x.is_nan() {
        return 0x7F;
    }
    let sign = if x.is_sign_negative() { 0x80 } else { 0 };
    if x.is_infinite() && l.ieee {
        return sign | (((1u32 << l.exp_bits) - 1) << l.man_bits) as u8;
    }
    let mag = x.abs();
    let top = levels[levels.len() - 1];
    if mag >= top.1 {
        return sign | top.0;
    }
    let mut best = levels[0];
    for &(code, v) in &levels[1..] {
        let d_new = (v - mag).abs();
        let d_best = (best.1 - mag).abs();
        if d_new < d_best || (d_new == d_best && code & 1 == 0) {
            best = (code, v);
        }
    }
    sign | best.0
}

pub fn encode_value(x: f64, l: Layout, levels: &[(u8, f64)]) -> f64 {
    match decode(encode(x, l, levels), l) {
        Decoded::Finite(v) => v,
        other => panic!("oracle produced {other:?} for {x}"),
    }
}

/// Per-tensor min/max fake quantization through the oracle codec, with the
/// scale and the division performed in f32 as the pipeline does.
pub fn fake_quant_fp8(data: &[f32], l: Layout) -> Vec<f64> {
    let levels = positive_levels(l);
    let amax = data.iter().fold(0f32, |m, v| m.max(v.abs()));
    let s = if amax == 0.0 { 1.0 } else { amax / max_finite(l) as f32 };
    data.iter().map(|&r| encode_value((r / s) as f64, l, &levels) * s as f64).collect()
}

pub fn fake_quant_int8(data: &[f32]) -> Vec<f64> {
    let amax = data.iter().fold(0f32, |m, v| m.max(v.abs()));
    let s = if amax == 0.0 { 1.0 } else { amax / 127.0 };
    data.iter()
        .map(|&r| {
            let q = ((r / s) as f64).round_ties_even().clamp(-127.0, 127.0);
            q * s as f64
        })
        .collect()
}

pub fn mse(a: &[f32], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y).powi(2)).sum::<f64>() / a.len() as f64
}

/// Deterministic splitmix64 stream, independent of the library's RNG.
pub struct SplitMix(pub u64);

impl SplitMix {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }
}

/// Cast-equivalence inputs: log-uniform magnitudes over `[2^-24, 1e5]` with
/// random signs, plus every fourth draw a raw f32 bit pattern in the
/// subnormal band of the target format, plus exact ties between adjacent levels.
pub fn cast_inputs(count: usize, seed: u64, l: Layout) -> Vec<f32> {
    let mut rng = SplitMix(seed);
    let levels = positive_levels(l);
    let min_sub = levels[1].1;
    let (lo, hi) = ((2f64).powi(-24).ln(), 1e5f64.ln());
    (0..count)
        .map(|i| {
            let sign = if rng.next_u64() & 1 == 1 { -1.0 } else { 1.0 };
            let mag = match i % 4 {
                0 => rng.unit() * 4.0 * min_sub * (1 << l.man_bits) as f64,
                1 => {
                    let k = 1 + (rng.next_u64() as usize % (levels.len() - 1));
                    0.5 * (levels[k - 1].1 + levels[k].1)
                }
                _ => (lo + rng.unit() * (hi - lo)).exp(),
            };
            (sign * mag) as f32
        })
        .collect()
}
