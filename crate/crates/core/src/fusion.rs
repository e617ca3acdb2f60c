//! Metadata serialization, metadata-as-text construction and the vector math
//! behind every strategy: normalization, cosine and unified weighted-sum fusion.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{MetadataField, MetadataRecord};
use crate::encoder::EmbeddingVector;

/// Norms below this are treated as zero.
pub const ZERO_NORM: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum FusionError {
    #[error("vector has zero norm")]
    ZeroVector,
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("fused vector vanishes (antipodal inputs at this weight)")]
    DegenerateFusion,
    #[error("fusion weight {0} outside [0, 1]")]
    InvalidWeight(f64),
}

/// Convex weight on the content signal; `1.0` means content only.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct FusionWeight(f64);

impl FusionWeight {
    pub const CONTENT_ONLY: FusionWeight = FusionWeight(1.0);
    pub const METADATA_ONLY: FusionWeight = FusionWeight(0.0);

    pub fn new(alpha: f64) -> Result<Self, FusionError> {
        if (0.0..=1.0).contains(&alpha) {
            Ok(Self(alpha))
        } else {
            Err(FusionError::InvalidWeight(alpha))
        }
    }

    pub fn alpha(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for FusionWeight {
    type Error = FusionError;

    fn try_from(v: f64) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<FusionWeight> for f64 {
    fn from(w: FusionWeight) -> f64 {
        w.0
    }
}

impl fmt::Display for FusionWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Where the metadata header goes relative to the chunk text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatVariant {
    Prefix,
    Suffix,
}

/// Renders present fields as `key: value` pairs joined by `"; "`, in schema
/// order. List values are joined by `", "`. An empty record renders as `""`.
///
/// ```
/// use metaret::{MetadataRecord, fusion::serialize_metadata};
/// let m = MetadataRecord {
///     company_name: Some("Alphabet Inc.".into()),
///     form_type: Some("10-K".into()),
///     ..Default::default()
/// };
/// assert_eq!(serialize_metadata(&m), "company: Alphabet Inc.; form: 10-K");
/// ```
pub fn serialize_metadata(record: &MetadataRecord) -> String {
    MetadataField::ALL
        .iter()
        .filter_map(|&f| record.value(f).map(|v| format!("{}: {v}", f.header_key())))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Joins the serialized header and chunk text with a newline; an empty
/// header leaves the text unchanged.
pub fn build_mat_text(record: &MetadataRecord, chunk_text: &str, variant: MatVariant) -> String {
    let header = serialize_metadata(record);
    if header.is_empty() {
        return chunk_text.to_string();
    }
    match variant {
        MatVariant::Prefix => format!("{header}\n{chunk_text}"),
        MatVariant::Suffix => format!("{chunk_text}\n{header}"),
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn l2_normalize(v: &EmbeddingVector) -> Result<EmbeddingVector, FusionError> {
    let n = norm(v.values());
    if n < ZERO_NORM {
        return Err(FusionError::ZeroVector);
    }
    Ok(EmbeddingVector::new(v.values().iter().map(|x| x / n).collect())
        .expect("scaling a finite vector by a positive finite factor stays finite"))
}

/// Cosine similarity clamped to `[-1, 1]`.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, FusionError> {
    cosine_slices(a.values(), b.values())
}

pub(crate) fn cosine_slices(a: &[f64], b: &[f64]) -> Result<f64, FusionError> {
    if a.len() != b.len() {
        return Err(FusionError::DimMismatch(a.len(), b.len()));
    }
    let (na2, nb2) = (dot(a, a), dot(b, b));
    if na2.sqrt() < ZERO_NORM || nb2.sqrt() < ZERO_NORM {
        return Err(FusionError::ZeroVector);
    }
    Ok(cosine_sq_norms(a, b, na2, nb2))
}

/// Cosine given precomputed squared norms. `sqrt(s * s) == s` exactly, so a
/// vector's cosine with itself is exactly 1.
pub(crate) fn cosine_sq_norms(a: &[f64], b: &[f64], na2: f64, nb2: f64) -> f64 {
    (dot(a, b) / (na2 * nb2).sqrt()).clamp(-1.0, 1.0)
}

/// Unified single-index vector: normalize both inputs, take
/// `alpha·text + (1 − alpha)·meta`, renormalize.
///
/// At the endpoints the result is exactly the corresponding normalized input.
pub fn fuse_unified(
    text: &EmbeddingVector,
    meta: &EmbeddingVector,
    weight: FusionWeight,
) -> Result<EmbeddingVector, FusionError> {
    if text.dim() != meta.dim() {
        return Err(FusionError::DimMismatch(text.dim(), meta.dim()));
    }
    let text = l2_normalize(text)?;
    let meta = l2_normalize(meta)?;
    let alpha = weight.alpha();
    if alpha == 1.0 {
        return Ok(text);
    }
    if alpha == 0.0 {
        return Ok(meta);
    }
    let mixed: Vec<f64> = text
        .values()
        .iter()
        .zip(meta.values())
        .map(|(t, m)| alpha * t + (1.0 - alpha) * m)
        .collect();
    let n = norm(&mixed);
    if n < ZERO_NORM {
        return Err(FusionError::DegenerateFusion);
    }
    Ok(EmbeddingVector::new(mixed.into_iter().map(|x| x / n).collect()).expect("finite after renormalization"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(xs.to_vec()).unwrap()
    }

    fn alphabet() -> MetadataRecord {
        MetadataRecord {
            company_name: Some("Alphabet Inc.".into()),
            form_type: Some("10-K".into()),
            section: Some("Item 1 - BUSINESS".into()),
            period_of_report: Some("2023-12-31".into()),
            ..Default::default()
        }
    }

    #[test]
    fn serialization_examples() {
        assert_eq!(
            serialize_metadata(&alphabet()),
            "company: Alphabet Inc.; form: 10-K; section: Item 1 - BUSINESS; period: 2023-12-31"
        );
        assert_eq!(serialize_metadata(&MetadataRecord::default()), "");
        assert_eq!(serialize_metadata(&alphabet()), serialize_metadata(&alphabet()));

        let full = MetadataRecord {
            fiscal_year_end: Some("12-31".into()),
            filed_date: Some("2024-01-31".into()),
            exchange_listings: Some(vec!["NASDAQ".into(), "NYSE".into()]),
            sic_code: Some("COMPUTER".into()),
            ..alphabet()
        };
        assert_eq!(
            serialize_metadata(&full),
            "company: Alphabet Inc.; form: 10-K; section: Item 1 - BUSINESS; \
             fiscal year end: 12-31; period: 2023-12-31; filed: 2024-01-31; \
             exchanges: NASDAQ, NYSE; sic: COMPUTER"
        );
    }

    #[test]
    fn mat_text_examples() {
        let header = serialize_metadata(&alphabet());
        assert_eq!(
            build_mat_text(&alphabet(), "Revenue grew.", MatVariant::Prefix),
            format!("{header}\nRevenue grew.")
        );
        assert_eq!(
            build_mat_text(&alphabet(), "Revenue grew.", MatVariant::Suffix),
            format!("Revenue grew.\n{header}")
        );
        for variant in [MatVariant::Prefix, MatVariant::Suffix] {
            assert_eq!(
                build_mat_text(&MetadataRecord::default(), "Revenue grew.", variant),
                "Revenue grew."
            );
        }
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(l2_normalize(&v(&[3.0, 4.0])).unwrap().values(), &[0.6, 0.8]);
        let unit = v(&[0.0, 1.0, 0.0]);
        assert_eq!(l2_normalize(&unit).unwrap(), unit);
        assert_eq!(l2_normalize(&v(&[0.0, 0.0])), Err(FusionError::ZeroVector));
    }

    #[test]
    fn cosine_examples() {
        let a = v(&[0.3, -1.2, 2.0]);
        assert!((cosine(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        assert_eq!(cosine(&v(&[1.0, 0.0]), &v(&[-1.0, 0.0])).unwrap(), -1.0);
        assert_eq!(cosine(&v(&[1.0]), &v(&[1.0, 0.0])), Err(FusionError::DimMismatch(1, 2)));
        assert_eq!(cosine(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])), Err(FusionError::ZeroVector));
    }

    #[test]
    fn fusion_endpoints_and_identity() {
        let t = v(&[1.0, 2.0, 2.0]);
        let m = v(&[0.0, -4.0, 3.0]);
        assert_eq!(
            fuse_unified(&t, &m, FusionWeight::CONTENT_ONLY).unwrap(),
            l2_normalize(&t).unwrap()
        );
        assert_eq!(
            fuse_unified(&t, &m, FusionWeight::METADATA_ONLY).unwrap(),
            l2_normalize(&m).unwrap()
        );
        let unit = l2_normalize(&t).unwrap();
        for alpha in [0.1, 0.5, 0.77] {
            let fused = fuse_unified(&t, &t, FusionWeight::new(alpha).unwrap()).unwrap();
            for (a, b) in fused.values().iter().zip(unit.values()) {
                assert!((a - b).abs() < 1e-15);
            }
        }
        assert_eq!(
            fuse_unified(&v(&[1.0, 0.0]), &v(&[-1.0, 0.0]), FusionWeight::new(0.5).unwrap()),
            Err(FusionError::DegenerateFusion)
        );
        assert_eq!(
            fuse_unified(&v(&[0.0, 0.0]), &m.clone(), FusionWeight::new(0.5).unwrap()).unwrap_err(),
            FusionError::DimMismatch(2, 3)
        );
        assert_eq!(
            fuse_unified(&v(&[0.0, 0.0]), &v(&[1.0, 0.0]), FusionWeight::new(0.5).unwrap()),
            Err(FusionError::ZeroVector)
        );
        assert!(FusionWeight::new(1.01).is_err());
        assert!(FusionWeight::new(-0.01).is_err());
        assert!(FusionWeight::new(f64::NAN).is_err());
    }

    /// Double-double arithmetic: an independent ~106-bit evaluation path.
    #[derive(Clone, Copy)]
    struct Dd(f64, f64);

    impl Dd {
        fn from(x: f64) -> Self {
            Dd(x, 0.0)
        }
        fn two_sum(a: f64, b: f64) -> Dd {
            let s = a + b;
            let bb = s - a;
            Dd(s, (a - (s - bb)) + (b - bb))
        }
        fn add(self, o: Dd) -> Dd {
            let s = Dd::two_sum(self.0, o.0);
            let e = s.1 + self.1 + o.1;
            Dd::two_sum(s.0, e)
        }
        fn mul(self, o: Dd) -> Dd {
            let p = self.0 * o.0;
            let e = self.0.mul_add(o.0, -p) + (self.0 * o.1 + self.1 * o.0);
            Dd::two_sum(p, e)
        }
        fn div(self, o: Dd) -> Dd {
            let q1 = self.0 / o.0;
            let r = self.add(o.mul(Dd::from(-q1)));
            let q2 = r.0 / o.0;
            let r = r.add(o.mul(Dd::from(-q2)));
            let q3 = r.0 / o.0;
            Dd::two_sum(q1, q2).add(Dd::from(q3))
        }
        fn sqrt(self) -> Dd {
            let x = Dd::from(self.0.sqrt());
            // One Newton step doubles the precision.
            x.add(self.add(x.mul(x).mul(Dd::from(-1.0))).div(x.mul(Dd::from(2.0))))
        }
    }

    fn dd_normalize(xs: &[f64]) -> Vec<Dd> {
        let ss = xs
            .iter()
            .fold(Dd::from(0.0), |acc, &x| acc.add(Dd::from(x).mul(Dd::from(x))));
        let n = ss.sqrt();
        xs.iter().map(|&x| Dd::from(x).div(n)).collect()
    }

    #[test]
    fn half_weight_matches_extended_precision_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let dim = rng.random_range(2..64);
            let a: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (ta, tb) = (dd_normalize(&a), dd_normalize(&b));
            let half = Dd::from(0.5);
            let mixed: Vec<Dd> = ta
                .iter()
                .zip(&tb)
                .map(|(x, y)| half.mul(*x).add(half.mul(*y)))
                .collect();
            let n = mixed.iter().fold(Dd::from(0.0), |acc, x| acc.add(x.mul(*x))).sqrt();
            let oracle: Vec<f64> = mixed.iter().map(|x| x.div(n).0).collect();

            let fused = fuse_unified(&v(&a), &v(&b), FusionWeight::new(0.5).unwrap()).unwrap();
            for (got, want) in fused.values().iter().zip(&oracle) {
                assert!((got - want).abs() < 1e-14, "{got} vs {want}");
            }
        }
    }

    fn vec_strategy(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-10.0f64..10.0, dim)
            .prop_filter("non-zero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-6)
    }

    proptest! {
        #[test]
        fn fused_output_is_unit_norm(
            (a, b) in (1usize..48).prop_flat_map(|d| (vec_strategy(d), vec_strategy(d))),
            alpha in 0.0f64..=1.0,
        ) {
            match fuse_unified(&v(&a), &v(&b), FusionWeight::new(alpha).unwrap()) {
                Ok(f) => prop_assert!((f.norm() - 1.0).abs() < 1e-9),
                Err(e) => prop_assert_eq!(e, FusionError::DegenerateFusion),
            }
        }

        #[test]
        fn normalize_is_unit_norm(a in (1usize..48).prop_flat_map(vec_strategy)) {
            prop_assert!((l2_normalize(&v(&a)).unwrap().norm() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn cosine_is_symmetric((a, b) in (1usize..48).prop_flat_map(|d| (vec_strategy(d), vec_strategy(d)))) {
            let (x, y) = (v(&a), v(&b));
            prop_assert!((cosine(&x, &y).unwrap() - cosine(&y, &x).unwrap()).abs() <= 1e-12);
        }

        #[test]
        fn serialization_is_injective(
            a in proptest::collection::vec(proptest::option::of("[A-Za-z0-9 .]{1,8}"), 8),
            b in proptest::collection::vec(proptest::option::of("[A-Za-z0-9 .]{1,8}"), 8),
        ) {
            let build = |vals: &[Option<String>]| MetadataRecord {
                company_name: vals[0].clone(),
                form_type: vals[1].clone(),
                section: vals[2].clone(),
                fiscal_year_end: vals[3].clone(),
                period_of_report: vals[4].clone(),
                filed_date: vals[5].clone(),
                exchange_listings: vals[6].clone().map(|x| vec![x]),
                sic_code: vals[7].clone(),
            };
            let (ra, rb) = (build(&a), build(&b));
            if ra != rb {
                prop_assert_ne!(serialize_metadata(&ra), serialize_metadata(&rb));
            }
        }
    }
}
