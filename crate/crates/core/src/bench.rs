//! Randomized trigonometric test functions and multi-seed method comparisons.
//!
//! A test function on `[0, 1]^d` is
//! `Σ_k a_k sin(π k_1 x_1) ⋯ sin(π k_d x_d)` with `k_i ∈ 1..=l_i`, random
//! `l_i ∈ 1..=lmax`, `a_k = α_k / |k|^β` and `α_k` uniform in `[-1, 1]`.
//! When the number of multi-indices exceeds the term budget, a uniform subset
//! of them is kept.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::baselines::FixedPointConfig;
use crate::error::{Error, Result};
use crate::greedy::{greedy_decompose, GreedyConfig, Method};
use crate::tensor::{CpTensor, Grid};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomFunctionSpec {
    pub d: usize,
    pub beta: f64,
    pub n_points: usize,
    pub lmax: usize,
    pub seed: u64,
    pub term_budget: usize,
}

impl RandomFunctionSpec {
    pub fn new(d: usize, beta: f64, seed: u64) -> Self {
        RandomFunctionSpec {
            d,
            beta,
            n_points: 25,
            lmax: 6,
            seed,
            term_budget: 200,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::arg("dimension must be at least 1"));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::arg("beta must be positive"));
        }
        if self.n_points == 0 || self.lmax == 0 || self.term_budget == 0 {
            return Err(Error::arg("n_points, lmax and term_budget must be at least 1"));
        }
        Ok(())
    }
}

/// What the generator drew, for the metadata sidecar.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionMeta {
    pub seed: u64,
    pub l_values: Vec<usize>,
    pub total_multi_indices: u128,
    pub retained_terms: usize,
}

impl FunctionMeta {
    pub const CSV_HEADER: &'static str = "seed,l_values,total_multi_indices,retained_terms";

    pub fn csv_row(&self) -> String {
        let l: Vec<String> = self.l_values.iter().map(|l| l.to_string()).collect();
        format!("{},{},{},{}", self.seed, l.join("-"), self.total_multi_indices, self.retained_terms)
    }

    pub fn write_csv<W: Write>(metas: &[FunctionMeta], mut out: W) -> Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for m in metas {
            writeln!(out, "{}", m.csv_row())?;
        }
        Ok(())
    }
}

/// `α / |k|^β`.
pub fn amplitude(alpha: f64, ks: &[usize], beta: f64) -> f64 {
    let sq: f64 = ks.iter().map(|&k| (k * k) as f64).sum();
    alpha / sq.powf(beta / 2.0)
}

/// Midpoint grid `(j + ½)/N`.
pub fn grid_points(n: usize) -> Vec<f64> {
    (0..n).map(|j| (j as f64 + 0.5) / n as f64).collect()
}

/// Random test function in CP form, one term per retained multi-index.
pub fn gen_random_function(spec: &RandomFunctionSpec) -> Result<(CpTensor, FunctionMeta)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let l: Vec<usize> = (0..spec.d).map(|_| rng.random_range(1..=spec.lmax)).collect();
    let total: u128 = l.iter().map(|&x| x as u128).product();

    let picks: Vec<u128> = if total > spec.term_budget as u128 {
        let len = usize::try_from(total).map_err(|_| Error::arg("too many multi-indices to sample from"))?;
        let mut v: Vec<u128> = index::sample(&mut rng, len, spec.term_budget)
            .into_iter()
            .map(|i| i as u128)
            .collect();
        v.sort_unstable();
        v
    } else {
        (0..total).collect()
    };

    let x = grid_points(spec.n_points);
    let n = spec.n_points;
    let r = picks.len();
    let mut weights = Vec::with_capacity(r);
    let mut factors: Vec<DMatrix<f64>> = (0..spec.d).map(|_| DMatrix::zeros(n, r)).collect();
    let mut ks = vec![0usize; spec.d];
    for (t, &flat) in picks.iter().enumerate() {
        // mixed radix, last dimension fastest
        let mut rest = flat;
        for i in (0..spec.d).rev() {
            ks[i] = (rest % l[i] as u128) as usize + 1;
            rest /= l[i] as u128;
        }
        let alpha: f64 = rng.random_range(-1.0..=1.0);
        let a = amplitude(alpha, &ks, spec.beta);
        let mut w = a.abs();
        for (i, &k) in ks.iter().enumerate() {
            let col: Vec<f64> = x.iter().map(|&xj| (std::f64::consts::PI * k as f64 * xj).sin()).collect();
            let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            w *= norm;
            let sign = if i == 0 && a < 0.0 { -1.0 } else { 1.0 };
            for (j, v) in col.iter().enumerate() {
                factors[i][(j, t)] = sign * v / norm;
            }
        }
        weights.push(w);
    }
    let grid = Grid::new(vec![n; spec.d])?;
    let f = CpTensor::new(grid, weights, factors)?;
    let meta = FunctionMeta {
        seed: spec.seed,
        l_values: l,
        total_multi_indices: total,
        retained_terms: r,
    };
    Ok((f, meta))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regularity {
    /// `β = d/2 + 0.1`
    L2,
    /// `β = d/2 + 1.1`
    H1,
}

impl Regularity {
    pub fn beta(self, d: usize) -> f64 {
        let base = d as f64 / 2.0;
        match self {
            Regularity::L2 => base + 0.1,
            Regularity::H1 => base + 1.1,
        }
    }
}

impl fmt::Display for Regularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regularity::L2 => "L2",
            Regularity::H1 => "H1",
        })
    }
}

impl FromStr for Regularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "L2" => Ok(Regularity::L2),
            "H1" => Ok(Regularity::H1),
            other => Err(Error::arg(format!("unknown regularity '{other}' (expected L2 or H1)"))),
        }
    }
}

pub const DEFAULT_REPORT_RANKS: [usize; 3] = [25, 50, 75];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dims: Vec<usize>,
    pub regularity: Regularity,
    pub n_functions: usize,
    pub methods: Vec<Method>,
    pub max_rank: usize,
    pub report_ranks: Vec<usize>,
    /// Function `i` uses seed `base_seed + i`.
    pub base_seed: u64,
    pub n_points: usize,
    pub lmax: usize,
    pub term_budget: usize,
    pub solver: FixedPointConfig,
    /// Worker threads; 0 lets the thread pool decide.
    pub workers: usize,
}

impl ExperimentConfig {
    pub fn new(dims: Vec<usize>, regularity: Regularity, methods: Vec<Method>, max_rank: usize) -> Self {
        ExperimentConfig {
            dims,
            regularity,
            n_functions: 32,
            methods,
            max_rank,
            report_ranks: default_report_ranks(max_rank),
            base_seed: 0,
            n_points: 25,
            lmax: 6,
            term_budget: 200,
            solver: FixedPointConfig::default(),
            workers: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.dims.iter().any(|&d| d < 2) {
            return Err(Error::arg("dims must be a non-empty list of values >= 2"));
        }
        if self.methods.is_empty() {
            return Err(Error::arg("at least one method is required"));
        }
        if self.n_functions == 0 || self.max_rank == 0 {
            return Err(Error::arg("n_functions and max_rank must be at least 1"));
        }
        if self.report_ranks.iter().any(|&r| r == 0 || r > self.max_rank) {
            return Err(Error::arg(format!("report_ranks must lie in 1..={}", self.max_rank)));
        }
        self.solver.validate()?;
        for &d in &self.dims {
            self.function_spec(d, 0).validate()?;
        }
        Ok(())
    }

    pub fn function_spec(&self, d: usize, index: usize) -> RandomFunctionSpec {
        RandomFunctionSpec {
            d,
            beta: self.regularity.beta(d),
            n_points: self.n_points,
            lmax: self.lmax,
            seed: self.base_seed.wrapping_add(index as u64),
            term_budget: self.term_budget,
        }
    }

    pub const REQUIRED_KEYS: [&'static str; 5] = ["dims", "regularity", "methods", "max_rank", "base_seed"];

    /// Parses the flat `key = value` config format. Blank lines and lines
    /// starting with `#` are ignored; lists are comma-separated.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut kv: BTreeMap<String, String> = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(format!("line {}", no + 1), "expected `key = value`"))?;
            let key = k.trim().to_string();
            if kv.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(Error::parse(key, "key given more than once"));
            }
        }
        let missing: Vec<&str> = Self::REQUIRED_KEYS
            .iter()
            .copied()
            .filter(|k| !kv.contains_key(*k))
            .collect();
        if !missing.is_empty() {
            return Err(Error::parse(missing.join(", "), "missing required key(s)"));
        }

        let dims = parse_list(&kv["dims"], "dims")?;
        let regularity: Regularity = kv["regularity"].parse().map_err(|e: Error| Error::parse("regularity", e.to_string()))?;
        let methods = kv["methods"]
            .split(',')
            .map(|m| m.parse::<Method>().map_err(|e| Error::parse("methods", e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let max_rank = parse_one(&kv["max_rank"], "max_rank")?;
        let mut cfg = ExperimentConfig::new(dims, regularity, methods, max_rank);
        cfg.base_seed = parse_one(&kv["base_seed"], "base_seed")?;

        for (key, value) in &kv {
            match key.as_str() {
                "dims" | "regularity" | "methods" | "max_rank" | "base_seed" => {}
                "n_functions" => cfg.n_functions = parse_one(value, key)?,
                "report_ranks" => cfg.report_ranks = parse_list(value, key)?,
                "n_points" => cfg.n_points = parse_one(value, key)?,
                "lmax" => cfg.lmax = parse_one(value, key)?,
                "term_budget" => cfg.term_budget = parse_one(value, key)?,
                "tol" => cfg.solver.tol = parse_one(value, key)?,
                "max_iters" => cfg.solver.max_iters = parse_one(value, key)?,
                "relaxed_als" => cfg.solver.relaxed = parse_one(value, key)?,
                "workers" => cfg.workers = parse_one(value, key)?,
                other => return Err(Error::parse(other, "unknown key")),
            }
        }
        cfg.validate().map_err(|e| Error::parse("config", e.to_string()))?;
        Ok(cfg)
    }
}

fn default_report_ranks(max_rank: usize) -> Vec<usize> {
    let v: Vec<usize> = DEFAULT_REPORT_RANKS.iter().copied().filter(|&r| r <= max_rank).collect();
    if v.is_empty() {
        vec![max_rank]
    } else {
        v
    }
}

fn parse_one<T: FromStr>(s: &str, key: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    s.trim().parse().map_err(|e: T::Err| Error::parse(key, format!("'{}': {e}", s.trim())))
}

fn parse_list<T: FromStr>(s: &str, key: &str) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    s.split(',').map(|x| parse_one(x, key)).collect()
}

/// One results-table row: relative residual of one method on one function
/// after `rank` terms.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: Method,
    pub dim: usize,
    pub beta: f64,
    pub seed: u64,
    /// 0 on error rows.
    pub rank: usize,
    /// NaN on error rows.
    pub rel_residual: f64,
    pub converged: bool,
    pub error_flag: bool,
}

pub const RESULTS_HEADER: &str = "method,dim,beta,seed,rank,rel_residual,converged,error_flag";

fn run_cell(cfg: &ExperimentConfig, d: usize, index: usize, method: Method) -> Vec<ResultRow> {
    let spec = cfg.function_spec(d, index);
    let row = |rank, rel_residual, converged, error_flag| ResultRow {
        method,
        dim: d,
        beta: spec.beta,
        seed: spec.seed,
        rank,
        rel_residual,
        converged,
        error_flag,
    };
    let gcfg = GreedyConfig {
        solver: FixedPointConfig {
            rng_seed: spec.seed,
            ..cfg.solver
        },
        ..GreedyConfig::new(method, cfg.max_rank)
    };
    let outcome = gen_random_function(&spec).and_then(|(f, _)| greedy_decompose(&f, &gcfg));
    let trace = match outcome {
        Ok((_, trace)) if !trace.steps.is_empty() => trace,
        _ => return vec![row(0, f64::NAN, false, true)],
    };
    let mut rows = Vec::with_capacity(cfg.max_rank);
    for step in &trace.steps {
        let first = rows.len() + 1;
        for rank in first..=step.rank.min(cfg.max_rank) {
            rows.push(row(rank, step.rel_residual, step.converged, false));
        }
    }
    // an early stop leaves the approximation unchanged for the remaining ranks
    let last = trace.steps.last().expect("non-empty trace");
    while rows.len() < cfg.max_rank {
        rows.push(row(rows.len() + 1, last.rel_residual, last.converged, false));
    }
    rows
}

/// Runs every (dimension, function, method) cell and returns the rows in
/// canonical order: by method, dimension, seed, rank.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let cells: Vec<(usize, usize, Method)> = cfg
        .dims
        .iter()
        .flat_map(|&d| (0..cfg.n_functions).flat_map(move |i| cfg.methods.iter().map(move |&m| (d, i, m))))
        .collect();
    let work = || -> Vec<ResultRow> {
        cells
            .par_iter()
            .flat_map_iter(|&(d, i, m)| run_cell(cfg, d, i, m))
            .collect()
    };
    let mut rows = if cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::arg(format!("cannot start worker pool: {e}")))?
            .install(work)
    } else {
        work()
    };
    rows.sort_by_key(|r| (r.method, r.dim, r.seed, r.rank));
    Ok(rows)
}

pub fn write_results_csv<W: Write>(rows: &[ResultRow], mut out: W) -> Result<()> {
    writeln!(out, "{RESULTS_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{:e},{},{}",
            r.method, r.dim, r.beta, r.seed, r.rank, r.rel_residual, r.converged, r.error_flag
        )?;
    }
    Ok(())
}

pub fn read_results_csv<R: Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = reader.headers().map_err(|e| csv_error(1, e))?.clone();
    let expected: Vec<&str> = RESULTS_HEADER.split(',').collect();
    if header.iter().map(str::trim).ne(expected.iter().copied()) {
        return Err(Error::Csv {
            line: 1,
            message: format!("expected header `{RESULTS_HEADER}`"),
        });
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            csv_error(line, e)
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| rec.get(i).unwrap_or("").trim();
        let bad = |i: usize, what: &str| Error::Csv {
            line,
            message: format!("column `{}`: cannot parse '{}' as {what}", expected[i], field(i)),
        };
        rows.push(ResultRow {
            method: field(0).parse().map_err(|_| bad(0, "a method"))?,
            dim: field(1).parse().map_err(|_| bad(1, "an integer"))?,
            beta: field(2).parse().map_err(|_| bad(2, "a number"))?,
            seed: field(3).parse().map_err(|_| bad(3, "an integer"))?,
            rank: field(4).parse().map_err(|_| bad(4, "an integer"))?,
            rel_residual: field(5).parse().map_err(|_| bad(5, "a number"))?,
            converged: field(6).parse().map_err(|_| bad(6, "true/false"))?,
            error_flag: field(7).parse().map_err(|_| bad(7, "true/false"))?,
        });
    }
    Ok(rows)
}

fn csv_error(line: u64, e: csv::Error) -> Error {
    Error::Csv {
        line,
        message: e.to_string(),
    }
}

/// Mean and sample standard deviation of the residual across functions.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub dim: usize,
    pub method: Method,
    pub rank: usize,
    pub mean: f64,
    /// 0 when `n == 1`, NaN when `n == 0`.
    pub std: f64,
    pub n: usize,
    /// Error-flagged runs left out for this dimension and method.
    pub excluded: usize,
}

pub const SUMMARY_HEADER: &str = "dim,method,rank,mean,std,n,excluded";

pub fn summarize(rows: &[ResultRow], report_ranks: &[usize]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(usize, Method), (BTreeMap<usize, Vec<f64>>, usize)> = BTreeMap::new();
    for r in rows {
        let entry = groups.entry((r.dim, r.method)).or_default();
        if r.error_flag {
            entry.1 += 1;
        } else {
            entry.0.entry(r.rank).or_default().push(r.rel_residual);
        }
    }
    let mut out = Vec::new();
    for ((dim, method), (by_rank, excluded)) in &groups {
        for &rank in report_ranks {
            let vals = by_rank.get(&rank).map(Vec::as_slice).unwrap_or(&[]);
            let (mean, std) = mean_std(vals);
            out.push(SummaryRow {
                dim: *dim,
                method: *method,
                rank,
                mean,
                std,
                n: vals.len(),
                excluded: *excluded,
            });
        }
    }
    out
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    match v.len() {
        0 => (f64::NAN, f64::NAN),
        1 => (v[0], 0.0),
        n => {
            let mean = v.iter().sum::<f64>() / n as f64;
            let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
            (mean, var.sqrt())
        }
    }
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], mut out: W) -> Result<()> {
    writeln!(out, "{SUMMARY_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{:.6e},{:.6e},{},{}",
            r.dim, r.method, r.rank, r.mean, r.std, r.n, r.excluded
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cptt::cptt_rank1;
    use crate::tensor::axpy;

    #[test]
    fn single_multi_index_function() {
        // find a seed that draws l = (1, 1)
        let spec = (0..200)
            .map(|s| RandomFunctionSpec::new(2, 1.7, s))
            .find(|s| gen_random_function(s).unwrap().1.l_values == vec![1, 1])
            .expect("some seed draws l = (1, 1)");
        let (f, meta) = gen_random_function(&spec).unwrap();
        assert_eq!(meta.total_multi_indices, 1);
        assert_eq!(f.rank(), 1);
        // recover α from the materialized values
        let x = grid_points(25);
        let dense = f.to_dense().unwrap();
        let s = |xi: f64| (std::f64::consts::PI * xi).sin();
        let ratio = dense.get(&[3, 7]) / (s(x[3]) * s(x[7]));
        let alpha = ratio * 2f64.sqrt().powf(1.7);
        assert!(alpha.abs() <= 1.0);
        for i in 0..25 {
            for j in 0..25 {
                let expect = alpha * s(x[i]) * s(x[j]) / 2f64.sqrt().powf(1.7);
                assert!((dense.get(&[i, j]) - expect).abs() < 1e-14);
            }
        }
        assert!((f.weights()[0] - alpha.abs() / 2f64.sqrt().powf(1.7) * 12.5).abs() < 1e-12);
    }

    #[test]
    fn generator_is_deterministic_and_budgeted() {
        let spec = RandomFunctionSpec::new(4, 2.1, 9);
        let (a, ma) = gen_random_function(&spec).unwrap();
        let (b, mb) = gen_random_function(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(ma, mb);

        let spec = RandomFunctionSpec::new(12, 6.1, 3);
        let (f, meta) = gen_random_function(&spec).unwrap();
        assert_eq!(meta.total_multi_indices, meta.l_values.iter().map(|&l| l as u128).product::<u128>());
        assert_eq!(meta.retained_terms, meta.total_multi_indices.min(200) as usize);
        assert_eq!(f.rank(), meta.retained_terms);
        assert!(meta.l_values.iter().all(|&l| (1..=6).contains(&l)));
    }

    #[test]
    fn smooth_limit_is_nearly_rank_one() {
        let spec = RandomFunctionSpec::new(4, 50.0, 5);
        let (f, _) = gen_random_function(&spec).unwrap();
        let (t, _) = cptt_rank1(&f).unwrap();
        let rel = axpy(-1.0, &t.to_cp(), &f).unwrap().norm_stable() / f.norm();
        assert!(rel < 0.05, "{rel}");
    }

    #[test]
    fn amplitude_decays_in_each_index() {
        for beta in [0.5, 2.1, 6.1] {
            let mut ks = vec![1, 2, 3];
            let mut prev = amplitude(0.7, &ks, beta).abs();
            for _ in 0..5 {
                ks[1] += 1;
                let next = amplitude(0.7, &ks, beta).abs();
                assert!(next <= prev);
                prev = next;
            }
        }
        assert!((amplitude(-1.0, &[1, 1], 2.0) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn midpoint_modes_have_no_zero_fiber() {
        let x = grid_points(25);
        assert!((x[0] - 0.02).abs() < 1e-15 && (x[24] - 0.98).abs() < 1e-15);
        for k in 1..=6 {
            let norm: f64 = x.iter().map(|&xi| (std::f64::consts::PI * k as f64 * xi).sin().powi(2)).sum();
            assert!((norm - 12.5).abs() < 1e-10);
        }
    }

    #[test]
    fn regularity_rule() {
        assert_eq!(Regularity::L2.beta(4), 2.1);
        assert_eq!(Regularity::H1.beta(12), 7.1);
        assert_eq!("h1".parse::<Regularity>().unwrap(), Regularity::H1);
    }

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            n_functions: 1,
            base_seed: 4,
            ..ExperimentConfig::new(vec![2], Regularity::L2, Method::ALL.to_vec(), 1)
        }
    }

    #[test]
    fn tiny_campaign_matches_svd_tail() {
        let cfg = small_config();
        let rows = run_experiment(&cfg).unwrap();
        assert_eq!(rows.len(), 3);
        let cptt = rows.iter().find(|r| r.method == Method::Cptt).unwrap();
        let (f, _) = gen_random_function(&cfg.function_spec(2, 0)).unwrap();
        let mut sv: Vec<f64> = f.to_dense().unwrap().unfolding(0).unwrap().singular_values().iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        let total: f64 = sv.iter().map(|s| s * s).sum();
        let tail = (sv[1..].iter().map(|s| s * s).sum::<f64>() / total).sqrt();
        assert!((cptt.rel_residual - tail).abs() <= 1e-8 * tail.max(1e-300) + 1e-12);
    }

    #[test]
    fn rows_are_canonical_and_reproducible() {
        let cfg = ExperimentConfig {
            n_functions: 3,
            max_rank: 3,
            report_ranks: vec![1, 3],
            ..small_config()
        };
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&ExperimentConfig { workers: 2, ..cfg.clone() }).unwrap();
        assert_eq!(a.len(), 3 * 3 * 3);
        let (mut wa, mut wb) = (Vec::new(), Vec::new());
        write_results_csv(&a, &mut wa).unwrap();
        write_results_csv(&b, &mut wb).unwrap();
        assert_eq!(wa, wb);
        let mut sorted = a.clone();
        sorted.sort_by_key(|r| (r.method, r.dim, r.seed, r.rank));
        assert_eq!(a, sorted);
        assert!(a.iter().all(|r| (0.0..=1.0 + 1e-10).contains(&r.rel_residual)));
    }

    #[test]
    fn results_csv_round_trip_and_errors() {
        let rows = run_experiment(&ExperimentConfig {
            max_rank: 2,
            ..small_config()
        })
        .unwrap();
        let mut buf = Vec::new();
        write_results_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().all(|l| l.split(',').count() == 8));
        assert_eq!(read_results_csv(text.as_bytes()).unwrap(), rows);

        let broken = format!("{RESULTS_HEADER}\nALS,2,1.1,0,1,0.5,true,false\nALS,2,1.1,0,x,0.5,true,false\n");
        match read_results_csv(broken.as_bytes()).unwrap_err() {
            Error::Csv { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("rank"));
            }
            e => panic!("{e}"),
        }
        let short = format!("{RESULTS_HEADER}\nALS,2,1.1\n");
        assert!(matches!(read_results_csv(short.as_bytes()), Err(Error::Csv { line: 2, .. })));
        assert!(matches!(read_results_csv("a,b\n".as_bytes()), Err(Error::Csv { line: 1, .. })));
    }

    fn row(method: Method, seed: u64, rank: usize, res: f64, err: bool) -> ResultRow {
        ResultRow {
            method,
            dim: 4,
            beta: 2.1,
            seed,
            rank,
            rel_residual: res,
            converged: true,
            error_flag: err,
        }
    }

    #[test]
    fn summary_arithmetic() {
        let rows = vec![
            row(Method::Als, 0, 1, 0.1, false),
            row(Method::Als, 1, 1, 0.2, false),
            row(Method::Als, 2, 1, 0.3, false),
            row(Method::Als, 3, 0, f64::NAN, true),
            row(Method::Cptt, 0, 1, 0.25, false),
        ];
        let s = summarize(&rows, &[1]);
        assert_eq!(s.len(), 2);
        assert!((s[0].mean - 0.2).abs() < 1e-15);
        assert!((s[0].std - 0.1).abs() < 1e-15);
        assert_eq!((s[0].n, s[0].excluded), (3, 1));
        assert_eq!((s[1].mean, s[1].std, s[1].n), (0.25, 0.0, 1));
    }

    #[test]
    fn config_parsing() {
        let text = "# campaign\ndims = 4, 12\nregularity = L2\nmethods = als, cptt\nmax_rank = 60\nbase_seed = 7\nn_functions = 4\nworkers = 2\ntol = 1e-5\n";
        let cfg = ExperimentConfig::from_kv_str(text).unwrap();
        assert_eq!(cfg.dims, vec![4, 12]);
        assert_eq!(cfg.methods, vec![Method::Als, Method::Cptt]);
        assert_eq!(cfg.report_ranks, vec![25, 50]);
        assert_eq!((cfg.n_functions, cfg.workers, cfg.base_seed), (4, 2, 7));
        assert_eq!(cfg.solver.tol, 1e-5);

        match ExperimentConfig::from_kv_str("dims = 4\nmax_rank = 3\n").unwrap_err() {
            Error::Parse { field, .. } => assert_eq!(field, "regularity, methods, base_seed"),
            e => panic!("{e}"),
        }
        assert!(ExperimentConfig::from_kv_str(&format!("{text}colour = red\n")).is_err());
        assert!(ExperimentConfig::from_kv_str(&format!("{text}report_ranks = 80\n")).is_err());
        assert_eq!(
            ExperimentConfig::from_kv_str("dims=2\nregularity=H1\nmethods=cptt\nmax_rank=1\nbase_seed=0").unwrap().report_ranks,
            vec![1]
        );
    }

    #[test]
    fn meta_sidecar_layout() {
        let (_, meta) = gen_random_function(&RandomFunctionSpec::new(3, 1.6, 2)).unwrap();
        let mut buf = Vec::new();
        FunctionMeta::write_csv(std::slice::from_ref(&meta), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], FunctionMeta::CSV_HEADER);
        assert_eq!(lines[1].split(',').count(), 4);
        assert_eq!(lines[1].split(',').nth(1).unwrap().split('-').count(), 3);
    }
}
