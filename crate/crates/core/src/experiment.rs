//! Seeded attack/defense runs producing robustness-and-utility tables.
//!
//! Every table starts from an original relation `R`, computes the public
//! priors (pairwise joints and community similarities) from it, fingerprints
//! a copy for the leaking SP and scores each pirated variant against `R`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::attacks::{atk_integrated, atk_rnd, atk_row, ColumnAttack};
use crate::correlations::{
    bic_select_c, joint_distributions, kmeans_communities, stat_relations, CommunityAssignment,
    JointDistributionSet, StatRelationSet,
};
use crate::defenses::{dfs_row, robust_fingerprint, ColumnDefenseConfig, DEFAULT_TAU_COL_DFS};
use crate::error::{FpError, Result};
use crate::fingerprint::{extract, gen_fingerprint, insert, FingerprintCode, FingerprintKey};
use crate::metrics::{accusable_rank_partial, utility_report, Rank};
use crate::relation::Relation;
use crate::transport::{SinkhornOptions, DEFAULT_COST_SCALE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Table {
    AttackRounds,
    RndBaseline,
    RowDefense,
    Integrated,
}

impl Table {
    pub fn name(&self) -> &'static str {
        match self {
            Table::AttackRounds => "attack_rounds",
            Table::RndBaseline => "rnd_baseline",
            Table::RowDefense => "row_defense",
            Table::Integrated => "integrated",
        }
    }
}

impl std::str::FromStr for Table {
    type Err = FpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attack_rounds" => Ok(Table::AttackRounds),
            "rnd_baseline" => Ok(Table::RndBaseline),
            "row_defense" => Ok(Table::RowDefense),
            "integrated" => Ok(Table::Integrated),
            other => Err(FpError::InvalidParameter(format!("unknown table `{other}`"))),
        }
    }
}

/// Scheme, attack and defense parameters of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSettings {
    pub secret_key: String,
    /// Serial of the SP whose copy leaks.
    pub leaker: u64,
    /// Serials of the innocent SPs used for the accusation rank.
    pub innocents: Vec<u64>,
    pub gamma_inv: u64,
    pub length: usize,
    pub bit_level: u32,
    pub tau_col_atk: f64,
    pub tau_row_atk: f64,
    pub tau_col_dfs: f64,
    pub tau_col: f64,
    pub tau_row: f64,
    pub lambda: f64,
    /// Per-attribute override of `lambda`.
    pub lambdas: Option<Vec<f64>>,
    pub cost_scale: f64,
    pub sinkhorn: SinkhornOptions,
    pub rounds: usize,
    pub communities: usize,
    /// When set, the community count is chosen by BIC from this range instead.
    pub c_range: Option<Vec<usize>>,
    pub rnd_fractions: Vec<f64>,
    pub seed: u64,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            secret_key: "owner-secret".into(),
            leaker: 1,
            innocents: (2..=20).collect(),
            gamma_inv: 35,
            length: 128,
            bit_level: 1,
            tau_col_atk: 1e-4,
            tau_row_atk: 0.1,
            tau_col_dfs: DEFAULT_TAU_COL_DFS,
            tau_col: 1e-4,
            tau_row: 10.0,
            lambda: 500.0,
            lambdas: None,
            cost_scale: DEFAULT_COST_SCALE,
            sinkhorn: SinkhornOptions::default(),
            rounds: 5,
            communities: 10,
            c_range: None,
            rnd_fractions: vec![0.01, 0.02, 0.05, 0.10, 0.15],
            seed: 0,
        }
    }
}

impl ExperimentSettings {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("tau_col_atk", self.tau_col_atk),
            ("tau_row_atk", self.tau_row_atk),
            ("tau_col_dfs", self.tau_col_dfs),
            ("tau_col", self.tau_col),
            ("tau_row", self.tau_row),
            ("lambda", self.lambda),
            ("cost_scale", self.cost_scale),
        ] {
            if !(v > 0.0) {
                return Err(FpError::InvalidParameter(format!("{name} must be > 0")));
            }
        }
        if self.rounds == 0 {
            return Err(FpError::InvalidParameter("rounds must be >= 1".into()));
        }
        self.key().validate()
    }

    pub fn key(&self) -> FingerprintKey {
        FingerprintKey::new(self.secret_key.as_bytes().to_vec(), self.leaker, self.gamma_inv, self.length)
            .with_bit_level(self.bit_level)
    }

    pub fn gamma_ratio(&self) -> f64 {
        1.0 / self.gamma_inv as f64
    }

    pub fn column_defense(&self, n_attrs: usize) -> Result<ColumnDefenseConfig> {
        let lambdas = match &self.lambdas {
            Some(l) if l.len() != n_attrs => {
                return Err(FpError::ShapeError(format!("{} lambdas for {n_attrs} attributes", l.len())))
            }
            Some(l) => l.clone(),
            None => vec![self.lambda; n_attrs],
        };
        Ok(ColumnDefenseConfig {
            tau_col_dfs: self.tau_col_dfs,
            lambdas,
            cost_scale: self.cost_scale,
            sinkhorn: self.sinkhorn,
            seed: self.seed,
        })
    }
}

/// Owner and attacker knowledge derived from the original relation.
#[derive(Debug, Clone)]
pub struct Context {
    pub original: Relation,
    pub comm: CommunityAssignment,
    pub j_prior: JointDistributionSet,
    pub s_prior: StatRelationSet,
    pub key: FingerprintKey,
    pub innocent_codes: Vec<FingerprintCode>,
    pub settings: ExperimentSettings,
}

impl Context {
    pub fn new(original: Relation, settings: ExperimentSettings) -> Result<Self> {
        settings.validate()?;
        let c = match &settings.c_range {
            Some(range) => bic_select_c(&original, range, settings.seed)?,
            None => settings.communities,
        };
        let comm = kmeans_communities(&original, c, settings.seed)?;
        let j_prior = joint_distributions(&original);
        let s_prior = stat_relations(&original, &comm)?;
        let key = settings.key();
        let innocent_codes = settings
            .innocents
            .iter()
            .filter(|&&s| s != settings.leaker)
            .map(|&s| gen_fingerprint(settings.secret_key.as_bytes(), s, settings.length))
            .collect();
        Ok(Self {
            original,
            comm,
            j_prior,
            s_prior,
            key,
            innocent_codes,
            settings,
        })
    }

    /// Scores a pirated copy; `per_chg` is supplied by the caller since it is
    /// relative to whatever the attack started from.
    pub fn score(&self, label: impl Into<String>, pirated: &Relation, per_chg: f64) -> Result<ExperimentRow> {
        let ex = extract(pirated, &self.key)?;
        let rob = accusable_rank_partial(&ex.recovered_bits(), &self.key.code(), &self.innocent_codes)?;
        let util = utility_report(
            pirated,
            &self.original,
            &self.comm,
            self.settings.tau_col,
            self.settings.tau_row,
            &[],
        )?;
        Ok(ExperimentRow {
            step: label.into(),
            num_cmp: rob.num_cmp,
            rank: rob.rank,
            per_chg,
            acc: util.acc,
            p_col: util.p_col,
            p_row: util.p_row,
            p_cov: util.p_cov,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub step: String,
    pub num_cmp: usize,
    pub rank: Rank,
    /// Fraction of cells the step changed in its input copy.
    pub per_chg: f64,
    pub acc: f64,
    pub p_col: f64,
    pub p_row: f64,
    pub p_cov: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentTable {
    pub table: Table,
    pub length: usize,
    pub communities: usize,
    pub rows: Vec<ExperimentRow>,
}

impl ExperimentTable {
    pub fn row(&self, step: &str) -> Option<&ExperimentRow> {
        self.rows.iter().find(|r| r.step == step)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }

    pub fn to_text(&self) -> String {
        let header = ["step", "num_cmp", "r", "per_chg", "Acc", "P_col", "P_row", "P_cov"];
        let body: Vec<[String; 8]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.step.clone(),
                    r.num_cmp.to_string(),
                    r.rank.to_string(),
                    format!("{:.2}%", r.per_chg * 100.0),
                    format!("{:.4}", r.acc),
                    format!("{:.4}", r.p_col),
                    format!("{:.4}", r.p_row),
                    format!("{:.4}", r.p_cov),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &body {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let mut out = String::new();
        let _ = writeln!(out, "{} (L = {}, C = {})", self.table.name(), self.length, self.communities);
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, &w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect::<Vec<_>>()
                .join("  ")
        };
        let _ = writeln!(out, "{}", line(&header.map(String::from)));
        for row in &body {
            let _ = writeln!(out, "{}", line(row));
        }
        out
    }
}

/// Runs one table on `original`.
pub fn run(table: Table, original: &Relation, settings: &ExperimentSettings) -> Result<ExperimentTable> {
    let ctx = Context::new(original.clone(), settings.clone())?;
    run_with(table, &ctx)
}

pub fn run_with(table: Table, ctx: &Context) -> Result<ExperimentTable> {
    let s = &ctx.settings;
    let fp = insert(&ctx.original, &ctx.key)?;
    let vanilla = &fp.relation;
    let mut rows = vec![ctx.score("fingerprinted", vanilla, 0.0)?];
    match table {
        Table::AttackRounds => {
            let mut attack = ColumnAttack::new(vanilla, &ctx.j_prior, s.tau_col_atk, s.seed)?;
            for round in 1..=s.rounds {
                if attack.step().is_none() {
                    break;
                }
                let per_chg = changed_fraction(vanilla, attack.relation())?;
                rows.push(ctx.score(format!("atk_col round {round}"), attack.relation(), per_chg)?);
            }
            let (pirated, rep) = atk_row(vanilla, &ctx.s_prior, &ctx.comm, s.tau_row_atk)?;
            rows.push(ctx.score("atk_row", &pirated, rep.per_chg)?);
        }
        Table::RndBaseline => {
            for &f in &s.rnd_fractions {
                let (pirated, rep) = atk_rnd(vanilla, f, s.seed)?;
                rows.push(ctx.score(format!("atk_rnd {:.1}%", f * 100.0), &pirated, rep.per_chg)?);
            }
        }
        Table::RowDefense => {
            let (pirated, rep) = atk_row(vanilla, &ctx.s_prior, &ctx.comm, s.tau_row_atk)?;
            rows.push(ctx.score("vanilla + atk_row", &pirated, rep.per_chg)?);
            let (defended, drep) = dfs_row(vanilla, &ctx.s_prior, &ctx.comm, s.gamma_ratio(), &fp.marked)?;
            rows.push(ctx.score("dfs_row", &defended, drep.per_chg)?);
            let (pirated, rep) = atk_row(&defended, &ctx.s_prior, &ctx.comm, s.tau_row_atk)?;
            rows.push(ctx.score("dfs_row + atk_row", &pirated, rep.per_chg)?);
        }
        Table::Integrated => {
            let attack = |copy: &Relation| {
                atk_integrated(
                    copy,
                    &ctx.s_prior,
                    &ctx.comm,
                    &ctx.j_prior,
                    s.tau_row_atk,
                    s.tau_col_atk,
                    s.rounds,
                    s.seed,
                )
            };
            let (pirated, rep) = attack(vanilla)?;
            rows.push(ctx.score("vanilla + atk_int", &pirated, rep.per_chg)?);
            let robust = robust_fingerprint(
                &ctx.original,
                &ctx.key,
                &ctx.s_prior,
                &ctx.j_prior,
                &ctx.comm,
                &s.column_defense(ctx.original.n_attrs())?,
            )?;
            rows.push(ctx.score("robust", &robust.relation, robust.report.per_chg)?);
            let (pirated, rep) = attack(&robust.relation)?;
            rows.push(ctx.score("robust + atk_int", &pirated, rep.per_chg)?);
        }
    }
    Ok(ExperimentTable {
        table,
        length: s.length,
        communities: ctx.comm.n_communities,
        rows,
    })
}

fn changed_fraction(before: &Relation, after: &Relation) -> Result<f64> {
    let diff = before.diff_positions(after)?.len();
    Ok(diff as f64 / before.n_cells().max(1) as f64)
}
