//! Seeded synthetic tables with a known dependence structure.

use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Normal, Poisson};

use super::schema::{ColumnKind, ColumnSpec, Role, Schema};
use super::table::{RawColumn, RawTable, RawValues};
use crate::seed::{self, Stream};

/// Row count of the two-year recidivism table this generator imitates.
pub const COMPAS_ROWS: usize = 6172;

fn column(name: &str, kind: ColumnKind, role: Role, positive: Option<&str>) -> ColumnSpec {
    ColumnSpec {
        name: name.into(),
        kind,
        role,
        positive: positive.map(str::to_string),
        keep: None,
    }
}

/// Schema of [`invariance`]: covariates `u`, `v`; target `y`; sensitive `s`.
pub fn invariance_schema() -> Schema {
    Schema {
        name: "invariance".into(),
        columns: vec![
            column("u", ColumnKind::Numeric, Role::Covariate, None),
            column("v", ColumnKind::Numeric, Role::Covariate, None),
            column("y", ColumnKind::Categorical, Role::Target, Some("1")),
            column("s", ColumnKind::Categorical, Role::Sensitive, Some("1")),
        ],
        fidelity_feature: Some("u".into()),
        target_encoded: None,
        missing_tokens: vec![],
        ignore_unlisted: false,
    }
}

/// `u ~ N(0, 1)`, `s ~ Bernoulli(0.5)`, `v = s + noise * N(0, 1)`, `y = 1(u > 0)`.
///
/// The target depends only on `u`; `s` is recoverable only through `v`.
pub fn invariance(n: usize, noise: f64, seed: u64) -> RawTable {
    let mut rng = seed::rng(seed, Stream::Synthetic, 0);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    for _ in 0..n {
        let ui: f64 = normal.sample(&mut rng);
        let si: bool = rng.random_bool(0.5);
        let vi = f64::from(u8::from(si)) + noise * normal.sample(&mut rng);
        u.push(ui);
        v.push(vi);
        y.push(ui > 0.0);
        s.push(si);
    }
    RawTable {
        schema: invariance_schema(),
        covariates: vec![
            RawColumn {
                name: "u".into(),
                values: RawValues::Numeric(u),
            },
            RawColumn {
                name: "v".into(),
                values: RawValues::Numeric(v),
            },
        ],
        target: y,
        sensitive: s,
        dropped_rows: 0,
    }
}

pub fn compas_like_schema() -> Schema {
    Schema {
        name: "compas-like".into(),
        columns: vec![
            column("age", ColumnKind::Numeric, Role::Covariate, None),
            column("priors_count", ColumnKind::Numeric, Role::Covariate, None),
            column("juv_count", ColumnKind::Numeric, Role::Covariate, None),
            column("length_of_stay", ColumnKind::Numeric, Role::Covariate, None),
            column(
                "charge_degree",
                ColumnKind::Categorical,
                Role::Covariate,
                None,
            ),
            column("age_cat", ColumnKind::Categorical, Role::Covariate, None),
            column("sex", ColumnKind::Categorical, Role::Covariate, None),
            column(
                "two_year_recid",
                ColumnKind::Categorical,
                Role::Target,
                Some("1"),
            ),
            column(
                "race",
                ColumnKind::Categorical,
                Role::Sensitive,
                Some("African-American"),
            ),
        ],
        fidelity_feature: Some("age".into()),
        target_encoded: None,
        missing_tokens: vec![],
        ignore_unlisted: false,
    }
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// A recidivism-style table: four numeric and three categorical covariates,
/// with the sensitive attribute correlated with several of them and with the target.
pub fn compas_like(n: usize, seed: u64) -> RawTable {
    let mut rng = seed::rng(seed, Stream::Synthetic, 1);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let group = Bernoulli::new(0.6).expect("valid probability");
    let male = Bernoulli::new(0.8).expect("valid probability");

    let mut cols: [Vec<f64>; 4] = Default::default();
    let mut charge = Vec::with_capacity(n);
    let mut age_cat = Vec::with_capacity(n);
    let mut sex = Vec::with_capacity(n);
    let mut target = Vec::with_capacity(n);
    let mut sensitive = Vec::with_capacity(n);

    for _ in 0..n {
        let s = group.sample(&mut rng);
        let sf = f64::from(u8::from(s));
        let age = (35.0 - 3.0 * sf + 11.0 * normal.sample(&mut rng))
            .clamp(18.0, 80.0)
            .round();
        let prior_rate = (0.6 + 0.5 * sf - 0.02 * (age - 35.0)).exp();
        let priors = Poisson::new(prior_rate)
            .expect("positive rate")
            .sample(&mut rng);
        let juv = Poisson::new(0.1 + 0.15 * sf)
            .expect("positive rate")
            .sample(&mut rng);
        let felony = rng.random_bool(0.55 + 0.1 * sf);
        let stay = (1.0 + 0.3 * sf + 0.4 * f64::from(u8::from(felony)) + normal.sample(&mut rng))
            .exp()
            .round();
        let is_male = male.sample(&mut rng);
        let logit = -0.9 + 0.22 * priors + 0.4 * juv - 0.04 * (age - 35.0)
            + 0.3 * f64::from(u8::from(felony))
            + 0.25 * f64::from(u8::from(is_male))
            + 0.2 * sf;
        let y = rng.random_bool(sigmoid(logit));

        cols[0].push(age);
        cols[1].push(priors);
        cols[2].push(juv);
        cols[3].push(stay);
        charge.push(if felony { "F" } else { "M" }.to_string());
        age_cat.push(
            if age < 25.0 {
                "Less than 25"
            } else if age <= 45.0 {
                "25 - 45"
            } else {
                "Greater than 45"
            }
            .to_string(),
        );
        sex.push(if is_male { "Male" } else { "Female" }.to_string());
        target.push(y);
        sensitive.push(s);
    }

    let [age, priors, juv, stay] = cols;
    let numeric = |name: &str, v: Vec<f64>| RawColumn {
        name: name.into(),
        values: RawValues::Numeric(v),
    };
    let categorical = |name: &str, v: Vec<String>| RawColumn {
        name: name.into(),
        values: RawValues::Categorical(v),
    };
    RawTable {
        schema: compas_like_schema(),
        covariates: vec![
            numeric("age", age),
            numeric("priors_count", priors),
            numeric("juv_count", juv),
            numeric("length_of_stay", stay),
            categorical("charge_degree", charge),
            categorical("age_cat", age_cat),
            categorical("sex", sex),
        ],
        target,
        sensitive,
        dropped_rows: 0,
    }
}
