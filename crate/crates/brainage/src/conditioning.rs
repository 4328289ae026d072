//! Ordinal binary encoding of age and health state.
//!
//! Ages are encoded as prefix-of-ones vectors of length 100 (one position per
//! year of life, assuming a maximal age of 100), so that the L1 distance
//! between two codes equals the difference between the two ages. Health state
//! uses the same construction over two bits: CN = [0,0], MCI = [1,0],
//! AD = [1,1], making bit-sum monotone in disease severity.
//!
//! One-hot and normalized-continuous encodings are also available as ablation
//! variants of the age code.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of positions in an ordinal age code: one per year, max age 100.
pub const MAX_AGE: u32 = 100;

/// The three ordered health states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HealthState {
    /// Cognitively normal.
    Cn,
    /// Mild cognitive impairment.
    Mci,
    /// Alzheimer's disease.
    Ad,
}

impl HealthState {
    pub const ALL: [HealthState; 3] = [HealthState::Cn, HealthState::Mci, HealthState::Ad];

    /// Ordinal severity: CN = 0, MCI = 1, AD = 2.
    pub fn severity(self) -> u8 {
        match self {
            HealthState::Cn => 0,
            HealthState::Mci => 1,
            HealthState::Ad => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            HealthState::Cn => "CN",
            HealthState::Mci => "MCI",
            HealthState::Ad => "AD",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "CN" => Ok(HealthState::Cn),
            "MCI" => Ok(HealthState::Mci),
            "AD" => Ok(HealthState::Ad),
            other => Err(Error::Parse {
                what: "health state".into(),
                detail: format!("unknown category {other:?}, expected CN, MCI or AD"),
            }),
        }
    }
}

impl std::fmt::Display for HealthState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Subject identity and clinical variables attached to every image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectMeta {
    pub subject_id: String,
    /// Chronological age in whole years, within [0, 100].
    pub age: u32,
    pub health: HealthState,
}

impl SubjectMeta {
    pub fn new(subject_id: impl Into<String>, age: u32, health: HealthState) -> Result<Self> {
        if age > MAX_AGE {
            return Err(Error::AgeOutOfRange(age as i64));
        }
        Ok(SubjectMeta {
            subject_id: subject_id.into(),
            age,
            health,
        })
    }
}

/// How ages are turned into conditioning vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EncodingScheme {
    /// Prefix-of-ones binary vector of length 100.
    Ordinal,
    /// One bin set to 1 out of `age_groups` equal-width bins over [0, 100].
    OneHot { age_groups: u32 },
    /// Single normalized value a / 100.
    Continuous,
}

impl EncodingScheme {
    pub const DEFAULT_ONE_HOT_GROUPS: u32 = 10;

    pub fn one_hot() -> Self {
        EncodingScheme::OneHot {
            age_groups: Self::DEFAULT_ONE_HOT_GROUPS,
        }
    }

    /// Length of the produced age vector.
    pub fn code_len(&self) -> usize {
        match self {
            EncodingScheme::Ordinal => MAX_AGE as usize,
            EncodingScheme::OneHot { age_groups } => *age_groups as usize,
            EncodingScheme::Continuous => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let EncodingScheme::OneHot { age_groups } = self {
            if *age_groups < 2 {
                return Err(Error::Config(format!(
                    "one-hot encoding needs at least 2 age groups, got {age_groups}"
                )));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            EncodingScheme::Ordinal => "ordinal",
            EncodingScheme::OneHot { .. } => "one_hot",
            EncodingScheme::Continuous => "continuous",
        }
    }
}

impl Default for EncodingScheme {
    fn default() -> Self {
        EncodingScheme::Ordinal
    }
}

/// An encoded age: ordinal prefix-of-ones, one-hot, or continuous,
/// depending on the scheme that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct AgeCode {
    bits: Vec<f64>,
}

impl AgeCode {
    pub fn as_slice(&self) -> &[f64] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

/// Two-bit ordinal health code: CN = [0,0], MCI = [1,0], AD = [1,1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HealthCode {
    bits: [f64; 2],
}

impl HealthCode {
    pub fn as_slice(&self) -> &[f64] {
        &self.bits
    }
}

/// Encode an age under the given scheme.
///
/// Ordinal: first `a` positions 1, rest 0. One-hot: single 1 in the bin
/// containing `a` (age 100 falls in the last bin). Continuous: `[a / 100]`.
pub fn encode_age(age: u32, scheme: EncodingScheme) -> Result<AgeCode> {
    if age > MAX_AGE {
        return Err(Error::AgeOutOfRange(age as i64));
    }
    scheme.validate()?;
    let bits = match scheme {
        EncodingScheme::Ordinal => (0..MAX_AGE)
            .map(|k| if k < age { 1.0 } else { 0.0 })
            .collect(),
        EncodingScheme::OneHot { age_groups } => {
            // Equal-width bins over [0, 100]; the maximal age falls in the last bin.
            let bin = (age * age_groups / MAX_AGE).min(age_groups - 1);
            (0..age_groups)
                .map(|k| if k == bin { 1.0 } else { 0.0 })
                .collect()
        }
        EncodingScheme::Continuous => vec![age as f64 / MAX_AGE as f64],
    };
    Ok(AgeCode { bits })
}

/// Encode the age difference `a_o - a_i` for generator conditioning.
///
/// Synthesis is forward-in-time only: `a_o < a_i` is rejected. A zero delta
/// (self-reconstruction) yields the all-zeros code under every scheme.
pub fn encode_age_delta(input_age: u32, target_age: u32, scheme: EncodingScheme) -> Result<AgeCode> {
    if input_age > MAX_AGE {
        return Err(Error::AgeOutOfRange(input_age as i64));
    }
    if target_age > MAX_AGE {
        return Err(Error::AgeOutOfRange(target_age as i64));
    }
    if target_age < input_age {
        return Err(Error::AgeOrdering {
            input: input_age,
            target: target_age,
        });
    }
    encode_age(target_age - input_age, scheme)
}

/// Encode a health state as its two-bit ordinal code.
pub fn encode_health(health: HealthState) -> HealthCode {
    let bits = match health {
        HealthState::Cn => [0.0, 0.0],
        HealthState::Mci => [1.0, 0.0],
        HealthState::Ad => [1.0, 1.0],
    };
    HealthCode { bits }
}

/// Recover the age from an ordinal code. Rejects vectors that are not in
/// prefix-of-ones form.
pub fn decode_age(code: &AgeCode) -> Result<u32> {
    if code.bits.len() != MAX_AGE as usize {
        return Err(Error::Shape {
            expected: format!("{MAX_AGE} positions"),
            got: format!("{}", code.bits.len()),
        });
    }
    let mut age = 0u32;
    let mut in_prefix = true;
    for (k, &b) in code.bits.iter().enumerate() {
        let bit = if b == 1.0 {
            true
        } else if b == 0.0 {
            false
        } else {
            return Err(Error::MalformedAgeCode(k));
        };
        match (in_prefix, bit) {
            (true, true) => age += 1,
            (true, false) => in_prefix = false,
            (false, true) => return Err(Error::MalformedAgeCode(k)),
            (false, false) => {}
        }
    }
    Ok(age)
}

/// Recover a health state from its two-bit code.
pub fn decode_health(code: &HealthCode) -> Result<HealthState> {
    match code.bits {
        [b0, b1] if b0 == 0.0 && b1 == 0.0 => Ok(HealthState::Cn),
        [b0, b1] if b0 == 1.0 && b1 == 0.0 => Ok(HealthState::Mci),
        [b0, b1] if b0 == 1.0 && b1 == 1.0 => Ok(HealthState::Ad),
        bits => Err(Error::InvalidHealthCode(
            bits.iter().map(|&b| b as u8).collect(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ordinal(age: u32) -> AgeCode {
        encode_age(age, EncodingScheme::Ordinal).unwrap()
    }

    #[test]
    fn ordinal_prefix_form() {
        let code = ordinal(3);
        assert_eq!(code.len(), 100);
        assert_eq!(&code.as_slice()[..4], &[1.0, 1.0, 1.0, 0.0]);
        assert!(code.as_slice()[3..].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn ordinal_edge_ages() {
        assert!(ordinal(0).as_slice().iter().all(|&b| b == 0.0));
        assert!(ordinal(100).as_slice().iter().all(|&b| b == 1.0));
        assert!(matches!(
            encode_age(101, EncodingScheme::Ordinal),
            Err(Error::AgeOutOfRange(101))
        ));
    }

    #[test]
    fn ordinal_l1_distance_equals_age_difference() {
        // Exhaustive over all 101 x 101 integer pairs.
        let codes: Vec<AgeCode> = (0..=100).map(ordinal).collect();
        for a in 0..=100u32 {
            for b in 0..=100u32 {
                let l1: f64 = codes[a as usize]
                    .as_slice()
                    .iter()
                    .zip(codes[b as usize].as_slice())
                    .map(|(x, y)| (x - y).abs())
                    .sum();
                assert_eq!(l1 as u32, a.abs_diff(b), "a={a} b={b}");
            }
        }
    }

    #[test]
    fn ordinal_codes_are_elementwise_monotone() {
        for a in 0..100u32 {
            let lo = ordinal(a);
            let hi = ordinal(a + 1);
            assert!(lo
                .as_slice()
                .iter()
                .zip(hi.as_slice())
                .all(|(x, y)| x <= y));
        }
    }

    #[test]
    fn age_delta_encoding() {
        let d = encode_age_delta(67, 72, EncodingScheme::Ordinal).unwrap();
        let sum: f64 = d.as_slice().iter().sum();
        assert_eq!(sum, 5.0);

        let zero = encode_age_delta(40, 40, EncodingScheme::Ordinal).unwrap();
        assert!(zero.as_slice().iter().all(|&b| b == 0.0));

        assert!(matches!(
            encode_age_delta(50, 45, EncodingScheme::Ordinal),
            Err(Error::AgeOrdering {
                input: 50,
                target: 45
            })
        ));
    }

    #[test]
    fn health_codes_ordinal_by_severity() {
        assert_eq!(encode_health(HealthState::Cn).as_slice(), &[0.0, 0.0]);
        assert_eq!(encode_health(HealthState::Mci).as_slice(), &[1.0, 0.0]);
        assert_eq!(encode_health(HealthState::Ad).as_slice(), &[1.0, 1.0]);
        let sums: Vec<f64> = HealthState::ALL
            .iter()
            .map(|&h| encode_health(h).as_slice().iter().sum())
            .collect();
        assert!(sums[0] < sums[1] && sums[1] < sums[2]);
    }

    #[test]
    fn health_roundtrip() {
        for &h in &HealthState::ALL {
            assert_eq!(decode_health(&encode_health(h)).unwrap(), h);
        }
        let bad = HealthCode { bits: [0.0, 1.0] };
        assert!(matches!(decode_health(&bad), Err(Error::InvalidHealthCode(_))));
    }

    #[test]
    fn decode_inverts_encode() {
        for a in 0..=100 {
            assert_eq!(decode_age(&ordinal(a)).unwrap(), a);
        }
    }

    #[test]
    fn decode_rejects_non_prefix() {
        let mut bits = vec![0.0; 100];
        bits[1] = 1.0;
        let code = AgeCode { bits };
        assert!(matches!(decode_age(&code), Err(Error::MalformedAgeCode(1))));
    }

    #[test]
    fn one_hot_bins() {
        let scheme = EncodingScheme::one_hot();
        for age in 0..=100u32 {
            let code = encode_age(age, scheme).unwrap();
            assert_eq!(code.len(), 10);
            let ones: usize = code.as_slice().iter().filter(|&&b| b == 1.0).count();
            assert_eq!(ones, 1);
            let bin = code.as_slice().iter().position(|&b| b == 1.0).unwrap();
            // 10 equal-width bins over [0, 100]; age 100 lands in the last.
            assert_eq!(bin, (age as usize / 10).min(9));
        }
        assert!(encode_age(50, EncodingScheme::OneHot { age_groups: 1 }).is_err());
    }

    #[test]
    fn continuous_is_normalized() {
        let code = encode_age(73, EncodingScheme::Continuous).unwrap();
        assert_eq!(code.as_slice(), &[0.73]);
    }
}
