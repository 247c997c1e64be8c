//! Synthetic databases with controlled dependencies between tables.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{compute_tuple_factors, ColumnData, Dataset, Table};
use crate::schema::{AnnotatedSchema, ColumnDef, ColumnType, ForeignKey, TableDef};

/// Number of children per parent row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum TfLaw {
    Constant { value: u32 },
    /// `1 + Poisson(mean - 1)`.
    ShiftedPoisson { mean: f64 },
    Uniform { low: u32, high: u32 },
}

impl TfLaw {
    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<u32> {
        Ok(match *self {
            TfLaw::Constant { value } => value,
            TfLaw::ShiftedPoisson { mean } => {
                if mean <= 1.0 {
                    1
                } else {
                    let p = Poisson::new(mean - 1.0).map_err(|e| Error::Config(format!("tf law: {e}")))?;
                    1 + p.sample(rng) as u32
                }
            }
            TfLaw::Uniform { low, high } => rng.random_range(low..=high.max(low)),
        })
    }
}

/// Two tables: complete parents `a(id, a)` and children `b(id, a_id, b)`.
///
/// `a` follows a Zipf law with exponent `skew` over `a_values` values. Each
/// child takes `f(a) = a mod b_values` with probability `predictability`;
/// otherwise it takes its parent's group value with probability
/// `fanout_predictability`, and an independent draw otherwise. Group values
/// and independent draws follow the marginal of `f(a)`, so the marginal of
/// `b` does not depend on either probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_parents: usize,
    pub a_values: usize,
    pub b_values: usize,
    pub predictability: f64,
    pub skew: f64,
    pub fanout_predictability: f64,
    pub tf_law: TfLaw,
    /// Adds a continuous child column `x` that tracks `b`.
    pub numeric: bool,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_parents: 2000,
            a_values: 20,
            b_values: 5,
            predictability: 1.0,
            skew: 0.0,
            fanout_predictability: 0.0,
            tf_law: TfLaw::Constant { value: 5 },
            numeric: false,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.predictability) || !unit(self.fanout_predictability) {
            return Err(Error::Config("predictabilities must lie in [0, 1]".into()));
        }
        if self.skew < 0.0 || !self.skew.is_finite() {
            return Err(Error::Config("skew must be non-negative".into()));
        }
        if self.n_parents == 0 || self.a_values == 0 || self.b_values == 0 {
            return Err(Error::Config("table and domain sizes must be positive".into()));
        }
        Ok(())
    }
}

pub fn synthetic_schema(numeric: bool) -> AnnotatedSchema {
    let col = |name: &str, ty| ColumnDef { name: name.into(), ty };
    let mut b_cols = vec![
        col("id", ColumnType::Key),
        col("a_id", ColumnType::Key),
        col("b", ColumnType::Categorical),
    ];
    if numeric {
        b_cols.push(col("x", ColumnType::Continuous));
    }
    let tables = vec![
        TableDef {
            name: "a".into(),
            columns: vec![col("id", ColumnType::Key), col("a", ColumnType::Categorical)],
            primary_key: "id".into(),
        },
        TableDef { name: "b".into(), columns: b_cols, primary_key: "id".into() },
    ];
    let fk = ForeignKey {
        child_table: "b".into(),
        child_column: "a_id".into(),
        parent_table: "a".into(),
        parent_column: "id".into(),
    };
    AnnotatedSchema::new(tables, vec![fk], &[]).expect("static schema is valid")
}

/// Zipf weights `1 / (k + 1)^skew`; uniform at skew 0.
pub fn zipf_weights(n: usize, skew: f64) -> Vec<f64> {
    (0..n).map(|k| 1.0 / ((k + 1) as f64).powf(skew)).collect()
}

/// Generates the database; both tables are complete in the returned schema.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<(Dataset, AnnotatedSchema)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = zipf_weights(spec.a_values, spec.skew);
    let a_dist = WeightedIndex::new(&weights).map_err(|e| Error::Config(format!("zipf: {e}")))?;
    // Marginal of f(a).
    let mut f_weights = vec![0.0; spec.b_values];
    for (k, w) in weights.iter().enumerate() {
        f_weights[k % spec.b_values] += w;
    }
    let f_dist = WeightedIndex::new(&f_weights).map_err(|e| Error::Config(format!("marginal: {e}")))?;
    let noise = Normal::new(0.0, 2.0).expect("valid normal");

    let (mut a_id, mut a_val) = (Vec::new(), Vec::new());
    let (mut b_id, mut b_ref, mut b_val, mut b_x) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for p in 0..spec.n_parents {
        let a = a_dist.sample(&mut rng);
        let key = format!("a{p}");
        a_id.push(Some(key.clone()));
        a_val.push(Some(format!("v{a}")));
        let group = f_dist.sample(&mut rng);
        let tf = spec.tf_law.draw(&mut rng)?;
        for _ in 0..tf {
            let u: f64 = rng.random();
            let b = if u < spec.predictability {
                a % spec.b_values
            } else if rng.random::<f64>() < spec.fanout_predictability {
                group
            } else {
                f_dist.sample(&mut rng)
            };
            b_id.push(Some(format!("b{}", b_id.len())));
            b_ref.push(Some(key.clone()));
            b_val.push(Some(format!("w{b}")));
            b_x.push(Some(10.0 * b as f64 + noise.sample(&mut rng)));
        }
    }
    let a = Table::new(
        "a",
        "id",
        vec![("id".into(), ColumnData::Key(a_id)), ("a".into(), ColumnData::Categorical(a_val))],
    )?;
    let mut cols = vec![
        ("id".into(), ColumnData::Key(b_id)),
        ("a_id".into(), ColumnData::Key(b_ref)),
        ("b".into(), ColumnData::Categorical(b_val)),
    ];
    if spec.numeric {
        cols.push(("x".into(), ColumnData::Continuous(b_x)));
    }
    let b = Table::new("b", "id", cols)?;
    let schema = synthetic_schema(spec.numeric);
    let ds = compute_tuple_factors(&Dataset::new(vec![a, b]), &schema)?;
    Ok((ds, schema))
}

/// Knobs of the housing-like three-table database.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HousingSpec {
    pub n_neighborhoods: usize,
    pub n_landlords: usize,
    /// Probability that an apartment's room type follows its neighborhood.
    pub predictability: f64,
    pub apartments_per_neighborhood: TfLaw,
}

impl Default for HousingSpec {
    fn default() -> Self {
        HousingSpec {
            n_neighborhoods: 400,
            n_landlords: 150,
            predictability: 0.95,
            apartments_per_neighborhood: TfLaw::ShiftedPoisson { mean: 6.0 },
        }
    }
}

pub const DENSITIES: [&str; 3] = ["high", "medium", "low"];
pub const ROOM_TYPES: [&str; 3] = ["entire", "private", "shared"];

pub fn housing_schema() -> AnnotatedSchema {
    let col = |name: &str, ty| ColumnDef { name: name.into(), ty };
    let tables = vec![
        TableDef {
            name: "neighborhood".into(),
            columns: vec![col("id", ColumnType::Key), col("density", ColumnType::Categorical)],
            primary_key: "id".into(),
        },
        TableDef {
            name: "landlord".into(),
            columns: vec![col("id", ColumnType::Key), col("since", ColumnType::Continuous)],
            primary_key: "id".into(),
        },
        TableDef {
            name: "apartment".into(),
            columns: vec![
                col("id", ColumnType::Key),
                col("neighborhood_id", ColumnType::Key),
                col("landlord_id", ColumnType::Key),
                col("room_type", ColumnType::Categorical),
                col("price", ColumnType::Continuous),
            ],
            primary_key: "id".into(),
        },
    ];
    let fk = |col: &str, parent: &str| ForeignKey {
        child_table: "apartment".into(),
        child_column: col.into(),
        parent_table: parent.into(),
        parent_column: "id".into(),
    };
    AnnotatedSchema::new(tables, vec![fk("neighborhood_id", "neighborhood"), fk("landlord_id", "landlord")], &[])
        .expect("static schema is valid")
}

/// Neighborhoods, landlords and apartments. Dense neighborhoods hold more
/// and pricier apartments; the room type follows the density with
/// probability `predictability`; price depends on both.
pub fn generate_housing(spec: &HousingSpec, seed: u64) -> Result<(Dataset, AnnotatedSchema)> {
    if !(0.0..=1.0).contains(&spec.predictability) || spec.n_neighborhoods == 0 || spec.n_landlords == 0 {
        return Err(Error::Config("invalid housing spec".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 5.0).expect("valid normal");
    let (mut n_id, mut n_den) = (Vec::new(), Vec::new());
    let (mut l_id, mut l_since) = (Vec::new(), Vec::new());
    for l in 0..spec.n_landlords {
        l_id.push(Some(format!("l{l}")));
        l_since.push(Some(rng.random_range(1990..2020) as f64));
    }
    let mut apt: [Vec<Option<String>>; 4] = Default::default();
    let mut price = Vec::new();
    for n in 0..spec.n_neighborhoods {
        let d = rng.random_range(0..DENSITIES.len());
        n_id.push(Some(format!("n{n}")));
        n_den.push(Some(DENSITIES[d].to_string()));
        // Denser neighborhoods have more apartments.
        let extra = (DENSITIES.len() - 1 - d) as u32;
        let count = spec.apartments_per_neighborhood.draw(&mut rng)? + extra;
        for _ in 0..count {
            let room = if rng.random::<f64>() < spec.predictability { d } else { rng.random_range(0..ROOM_TYPES.len()) };
            let p = 200.0 - 60.0 * room as f64 + 30.0 * (DENSITIES.len() - 1 - d) as f64 + noise.sample(&mut rng);
            apt[0].push(Some(format!("p{}", price.len())));
            apt[1].push(Some(format!("n{n}")));
            apt[2].push(Some(format!("l{}", rng.random_range(0..spec.n_landlords))));
            apt[3].push(Some(ROOM_TYPES[room].to_string()));
            price.push(Some(p.max(1.0)));
        }
    }
    let [a_id, a_n, a_l, a_room] = apt;
    let tables = vec![
        Table::new(
            "neighborhood",
            "id",
            vec![("id".into(), ColumnData::Key(n_id)), ("density".into(), ColumnData::Categorical(n_den))],
        )?,
        Table::new(
            "landlord",
            "id",
            vec![("id".into(), ColumnData::Key(l_id)), ("since".into(), ColumnData::Continuous(l_since))],
        )?,
        Table::new(
            "apartment",
            "id",
            vec![
                ("id".into(), ColumnData::Key(a_id)),
                ("neighborhood_id".into(), ColumnData::Key(a_n)),
                ("landlord_id".into(), ColumnData::Key(a_l)),
                ("room_type".into(), ColumnData::Categorical(a_room)),
                ("price".into(), ColumnData::Continuous(price)),
            ],
        )?,
    ];
    let schema = housing_schema();
    let ds = compute_tuple_factors(&Dataset::new(tables), &schema)?;
    Ok((ds, schema))
}

/// The workload run on the housing-like database.
pub fn housing_workload() -> Vec<String> {
    [
        "SELECT COUNT(*) FROM apartment",
        "SELECT COUNT(*) FROM apartment WHERE room_type = 'entire'",
        "SELECT density, COUNT(*) FROM apartment NATURAL JOIN neighborhood GROUP BY density",
        "SELECT SUM(price) FROM apartment",
        "SELECT SUM(price) FROM apartment NATURAL JOIN neighborhood WHERE density = 'high'",
        "SELECT AVG(price) FROM apartment",
    ]
    .map(String::from)
    .to_vec()
}
