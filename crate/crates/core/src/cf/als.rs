//! Latent factor model `r̂(u, i) = q_i · p_u` fit by alternating least squares.
//!
//! The loss is the regularized squared error over observed cells only:
//!
//! ```text
//! L = Σ_(u,i)∈κ (r_ui − q_i·p_u)² + λ (Σ_i ‖q_i‖² + Σ_u ‖p_u‖²)
//! ```
//!
//! With Q fixed, each p_u has the closed form `(Σ q_i q_iᵀ + λI) p_u = Σ r_ui q_i`
//! over u's observed items, and symmetrically for q_i. Every half-iteration
//! solves all rows of one side exactly, so L never increases.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::RatingMatrix;
use crate::error::{Error, Result};
use crate::fsio::{self, Header};

pub const MODEL_FORMAT: &str = "hybrec-mf-v1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlsParams {
    pub factors: usize,
    pub lambda: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Initial factors are drawn uniformly from `[-init_scale, init_scale]`.
    pub init_scale: f64,
}

impl Default for AlsParams {
    fn default() -> Self {
        AlsParams {
            factors: 16,
            lambda: 0.1,
            iterations: 20,
            seed: 0,
            init_scale: 0.01,
        }
    }
}

/// Objective values: entry 0 at initialization, then one per half-iteration
/// (user sweep, item sweep, user sweep, ...).
pub type AlsTrace = Vec<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    factors: usize,
    lambda: f64,
    users: Vec<String>,
    items: Vec<String>,
    item_categories: Vec<String>,
    user_index: HashMap<String, usize>,
    item_index: HashMap<String, usize>,
    /// Row-major `n_users x factors`.
    p: Vec<f64>,
    /// Row-major `n_items x factors`.
    q: Vec<f64>,
    iterations: usize,
    trace: AlsTrace,
}

impl FactorModel {
    pub fn from_factors(
        users: Vec<String>,
        items: Vec<String>,
        item_categories: Vec<String>,
        factors: usize,
        lambda: f64,
        p: Vec<f64>,
        q: Vec<f64>,
    ) -> Self {
        assert_eq!(p.len(), users.len() * factors);
        assert_eq!(q.len(), items.len() * factors);
        assert_eq!(items.len(), item_categories.len());
        FactorModel {
            factors,
            lambda,
            user_index: users
                .iter()
                .enumerate()
                .map(|(k, id)| (id.clone(), k))
                .collect(),
            item_index: items
                .iter()
                .enumerate()
                .map(|(k, id)| (id.clone(), k))
                .collect(),
            users,
            items,
            item_categories,
            p,
            q,
            iterations: 0,
            trace: Vec::new(),
        }
    }

    pub fn factors(&self) -> usize {
        self.factors
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn trace(&self) -> &[f64] {
        &self.trace
    }

    pub fn final_objective(&self) -> Option<f64> {
        self.trace.last().copied()
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn item_category(&self, i: usize) -> &str {
        &self.item_categories[i]
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.user_index.get(id).copied()
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.item_index.get(id).copied()
    }

    pub fn user_factors(&self, u: usize) -> &[f64] {
        &self.p[u * self.factors..(u + 1) * self.factors]
    }

    pub fn item_factors(&self, i: usize) -> &[f64] {
        &self.q[i * self.factors..(i + 1) * self.factors]
    }

    pub fn user_factors_mut(&mut self, u: usize) -> &mut [f64] {
        &mut self.p[u * self.factors..(u + 1) * self.factors]
    }

    pub fn item_factors_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.q[i * self.factors..(i + 1) * self.factors]
    }

    pub fn score(&self, u: usize, i: usize) -> f64 {
        dot(self.user_factors(u), self.item_factors(i))
    }

    /// Scores of every item for user `u`, in item-index order.
    pub fn scores(&self, u: usize) -> Vec<f64> {
        let pu = self.user_factors(u);
        (0..self.items.len())
            .map(|i| dot(pu, self.item_factors(i)))
            .collect()
    }

    fn assert_compatible(&self, matrix: &RatingMatrix) {
        assert!(
            self.users == matrix.users() && self.items == matrix.items(),
            "model and matrix index different users or items"
        );
    }

    /// Gradient of the objective with respect to `p_u`:
    /// `−2 Σ_i (r_ui − q_i·p_u) q_i + 2λ p_u`.
    pub fn user_gradient(&self, matrix: &RatingMatrix, u: usize) -> Vec<f64> {
        self.assert_compatible(matrix);
        let pu = self.user_factors(u);
        let mut grad: Vec<f64> = pu.iter().map(|x| 2.0 * self.lambda * x).collect();
        for &(i, r) in matrix.user_row(u) {
            let qi = self.item_factors(i);
            let err = r - dot(qi, pu);
            for (g, q) in grad.iter_mut().zip(qi) {
                *g -= 2.0 * err * q;
            }
        }
        grad
    }

    /// Gradient of the objective with respect to `q_i`.
    pub fn item_gradient(&self, matrix: &RatingMatrix, i: usize) -> Vec<f64> {
        self.assert_compatible(matrix);
        let qi = self.item_factors(i);
        let mut grad: Vec<f64> = qi.iter().map(|x| 2.0 * self.lambda * x).collect();
        for &(u, r) in matrix.item_column(i) {
            let pu = self.user_factors(u);
            let err = r - dot(qi, pu);
            for (g, p) in grad.iter_mut().zip(pu) {
                *g -= 2.0 * err * p;
            }
        }
        grad
    }

    pub fn to_text(&self, extra: &Header) -> String {
        let mut out = String::new();
        out.push_str(MODEL_FORMAT);
        out.push('\n');
        let mut header = Header::new()
            .with("factors", self.factors)
            .with("lambda", self.lambda)
            .with("iterations", self.iterations)
            .with("trace_len", self.trace.len());
        for (k, v) in extra.entries() {
            header.set(k, v);
        }
        header.write_to(&mut out);
        out.push_str("trace");
        for v in &self.trace {
            let _ = write!(out, "\t{v}");
        }
        let _ = writeln!(out, "\nusers\t{}", self.users.len());
        for (u, id) in self.users.iter().enumerate() {
            out.push_str(id);
            for v in self.user_factors(u) {
                let _ = write!(out, "\t{v}");
            }
            out.push('\n');
        }
        let _ = writeln!(out, "items\t{}", self.items.len());
        for (i, id) in self.items.iter().enumerate() {
            let _ = write!(out, "{id}\t{}", self.item_categories[i]);
            for v in self.item_factors(i) {
                let _ = write!(out, "\t{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, path: &Path) -> Result<(Header, Self)> {
        let bad = |line: usize, reason: String| Error::format(path, line, reason);
        let rest = text
            .strip_prefix(MODEL_FORMAT)
            .and_then(|r| r.strip_prefix('\n'))
            .ok_or_else(|| bad(1, format!("missing magic line {MODEL_FORMAT:?}")))?;
        let (header, body, skipped) = Header::split(rest).map_err(|r| bad(2, r))?;
        let field = |key: &str| -> Result<&str> {
            header
                .get(key)
                .ok_or_else(|| bad(2, format!("missing #{key}")))
        };
        let factors: usize = field("factors")?
            .parse()
            .map_err(|_| bad(2, "bad factors".into()))?;
        let lambda: f64 = field("lambda")?
            .parse()
            .map_err(|_| bad(2, "bad lambda".into()))?;
        let iterations: usize = field("iterations")?
            .parse()
            .map_err(|_| bad(2, "bad iterations".into()))?;
        let trace_len: usize = field("trace_len")?
            .parse()
            .map_err(|_| bad(2, "bad trace_len".into()))?;

        let mut lines = body.lines().enumerate().map(|(k, l)| (k + skipped + 2, l));
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| bad(0, format!("truncated before {what}")))
        };
        let numbers = |line: usize, fields: &[&str]| -> Result<Vec<f64>> {
            fields
                .iter()
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| bad(line, format!("bad number {v:?}")))
                })
                .collect()
        };

        let (ln, trace_line) = next("trace")?;
        let mut fields: Vec<&str> = trace_line.split('\t').collect();
        if fields.remove(0) != "trace" {
            return Err(bad(ln, "expected trace line".into()));
        }
        let trace = numbers(ln, &fields)?;
        if trace.len() != trace_len {
            return Err(bad(
                ln,
                format!("trace has {} values, header says {trace_len}", trace.len()),
            ));
        }

        let block_len = |ln: usize, line: &str, name: &str| -> Result<usize> {
            line.strip_prefix(name)
                .and_then(|r| r.strip_prefix('\t'))
                .and_then(|n| n.parse().ok())
                .ok_or_else(|| bad(ln, format!("expected '{name}\\t<count>'")))
        };
        let (ln, line) = next("users")?;
        let n_users = block_len(ln, line, "users")?;
        let mut users = Vec::with_capacity(n_users);
        let mut p = Vec::with_capacity(n_users * factors);
        for _ in 0..n_users {
            let (ln, line) = next("user row")?;
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != factors + 1 {
                return Err(bad(ln, format!("expected id and {factors} factors")));
            }
            users.push(fields[0].to_string());
            p.extend(numbers(ln, &fields[1..])?);
        }
        let (ln, line) = next("items")?;
        let n_items = block_len(ln, line, "items")?;
        let mut items = Vec::with_capacity(n_items);
        let mut categories = Vec::with_capacity(n_items);
        let mut q = Vec::with_capacity(n_items * factors);
        for _ in 0..n_items {
            let (ln, line) = next("item row")?;
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != factors + 2 {
                return Err(bad(
                    ln,
                    format!("expected id, category and {factors} factors"),
                ));
            }
            items.push(fields[0].to_string());
            categories.push(fields[1].to_string());
            q.extend(numbers(ln, &fields[2..])?);
        }
        if let Some((ln, _)) = lines.next() {
            return Err(bad(ln, "trailing content".into()));
        }
        let mut model = FactorModel::from_factors(users, items, categories, factors, lambda, p, q);
        model.iterations = iterations;
        model.trace = trace;
        Ok((header, model))
    }

    pub fn read(path: &Path) -> Result<(Header, Self)> {
        Self::from_text(&fsio::read_to_string(path)?, path)
    }

    pub fn write(&self, path: &Path, extra: &Header) -> Result<()> {
        fsio::write_atomic(path, self.to_text(extra).as_bytes())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `(Σ v vᵀ + λI) x = Σ r v` for one row. Rows without observations
/// get the zero vector, which minimizes `λ‖x‖²`.
fn solve_row(observed: &[(usize, f64)], other: &[f64], f: usize, lambda: f64) -> Option<Vec<f64>> {
    if observed.is_empty() {
        return Some(vec![0.0; f]);
    }
    let mut a = DMatrix::<f64>::identity(f, f) * lambda;
    let mut b = DVector::<f64>::zeros(f);
    for &(j, r) in observed {
        let v = &other[j * f..(j + 1) * f];
        for x in 0..f {
            b[x] += r * v[x];
            for y in 0..f {
                a[(x, y)] += v[x] * v[y];
            }
        }
    }
    a.cholesky().map(|c| c.solve(&b).iter().copied().collect())
}

fn sweep(
    rows: usize,
    row_entries: impl Fn(usize) -> Vec<(usize, f64)> + Sync,
    other: &[f64],
    f: usize,
    lambda: f64,
    side: &str,
    ids: &[String],
) -> Result<Vec<f64>> {
    let solved: Vec<Option<Vec<f64>>> = (0..rows)
        .into_par_iter()
        .map(|r| solve_row(&row_entries(r), other, f, lambda))
        .collect();
    let mut out = Vec::with_capacity(rows * f);
    for (r, row) in solved.into_iter().enumerate() {
        let row = row.ok_or_else(|| Error::SingularSystem(format!("{side} {}", ids[r])))?;
        if row.iter().any(|x| !x.is_finite()) {
            return Err(Error::SingularSystem(format!(
                "{side} {} (non-finite solution)",
                ids[r]
            )));
        }
        out.extend(row);
    }
    Ok(out)
}

pub fn als_train(matrix: &RatingMatrix, params: &AlsParams) -> Result<FactorModel> {
    let f = params.factors;
    if f == 0 {
        return Err(Error::InvalidConfig("factors must be at least 1".into()));
    }
    if !(params.lambda.is_finite() && params.lambda >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "lambda {} must be >= 0",
            params.lambda
        )));
    }
    if matrix.n_entries() == 0 {
        return Err(Error::InvalidConfig(
            "rating matrix has no observed entries".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let scale = params.init_scale;
    let mut init = |n: usize| -> Vec<f64> {
        (0..n * f)
            .map(|_| rng.random_range(-scale..=scale))
            .collect()
    };
    let p = init(matrix.n_users());
    let q = init(matrix.n_items());
    let mut model = FactorModel::from_factors(
        matrix.users().to_vec(),
        matrix.items().to_vec(),
        matrix.item_categories().to_vec(),
        f,
        params.lambda,
        p,
        q,
    );
    model.trace.push(objective(&model, matrix));
    for _ in 0..params.iterations {
        model.p = sweep(
            matrix.n_users(),
            |u| matrix.user_row(u).to_vec(),
            &model.q,
            f,
            params.lambda,
            "user",
            matrix.users(),
        )?;
        model.trace.push(objective(&model, matrix));
        model.q = sweep(
            matrix.n_items(),
            |i| matrix.item_column(i).to_vec(),
            &model.p,
            f,
            params.lambda,
            "item",
            matrix.items(),
        )?;
        model.trace.push(objective(&model, matrix));
        model.iterations += 1;
    }
    Ok(model)
}

/// The regularized squared error over observed cells.
pub fn objective(model: &FactorModel, matrix: &RatingMatrix) -> f64 {
    model.assert_compatible(matrix);
    let err: f64 = matrix
        .entries()
        .map(|(u, i, r)| {
            let e = r - model.score(u, i);
            e * e
        })
        .sum();
    let norms: f64 = model.p.iter().chain(&model.q).map(|x| x * x).sum();
    err + model.lambda * norms
}

pub fn predict(model: &FactorModel, user_id: &str, item_id: &str) -> Result<f64> {
    let u = model
        .user_index(user_id)
        .ok_or_else(|| Error::UnknownUser(user_id.into()))?;
    let i = model
        .item_index(item_id)
        .ok_or_else(|| Error::UnknownItem(item_id.into()))?;
    Ok(model.score(u, i))
}

/// The `n` best-scoring items not in `exclusions`, score-descending with ties
/// by ascending item id.
pub fn top_n(
    model: &FactorModel,
    user_id: &str,
    n: usize,
    exclusions: &HashSet<String>,
) -> Result<Vec<String>> {
    let u = model
        .user_index(user_id)
        .ok_or_else(|| Error::UnknownUser(user_id.into()))?;
    let scores = model.scores(u);
    let mut ranked: Vec<(usize, f64)> = scores
        .into_iter()
        .enumerate()
        .filter(|&(i, _)| !exclusions.contains(&model.items[i]))
        .collect();
    ranked.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| model.items[a.0].cmp(&model.items[b.0]))
    });
    Ok(ranked
        .into_iter()
        .take(n)
        .map(|(i, _)| model.items[i].clone())
        .collect())
}
