//! Seeded generator of labelled transaction streams with planted fraud.
//!
//! Legitimate accounts have a home location, a few preferred merchants, a
//! preferred hour of day and a per-account lognormal amount scale. Fraud
//! episodes come in three shapes:
//!
//! * **tentative**: `k` (2 to 4) small, strictly increasing deals followed by
//!   one large deal, minutes apart, around midnight and off-site;
//! * **midnight**: a single large off-site deal at night, usually at one of a
//!   few hotspot locations;
//! * **marginal match**: deals copied field by field from legitimate
//!   transactions of other accounts and spread over the victim's active
//!   period. Each deal on its own looks like ordinary traffic; only its
//!   mismatch with the account's own history gives it away.
//!
//! Every transaction of an episode is labelled fraud. The number of fraud
//! transactions is exactly `round(legit / imbalance_ratio)`. When episodes
//! outnumber eligible accounts the remainder go to fraud-only accounts.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, LogNormal, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::feature_engineering::TransactionRecord;
use crate::{seed, Error, Result};

pub const CHANNELS: [&str; 3] = ["pos", "online", "atm"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Motif {
    Tentative,
    Midnight,
    MarginalMatch,
}

impl Motif {
    pub const ALL: [Motif; 3] = [Motif::Tentative, Motif::Midnight, Motif::MarginalMatch];
}

/// Shares of fraud transactions per motif.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotifWeights {
    pub tentative: f64,
    pub midnight: f64,
    pub marginal_match: f64,
}

impl Default for MotifWeights {
    fn default() -> Self {
        Self {
            tentative: 0.3,
            midnight: 0.2,
            marginal_match: 0.5,
        }
    }
}

impl MotifWeights {
    fn get(&self, m: Motif) -> f64 {
        match m {
            Motif::Tentative => self.tentative,
            Motif::Midnight => self.midnight,
            Motif::MarginalMatch => self.marginal_match,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub n_accounts: usize,
    /// Mean of the geometric transactions-per-account distribution.
    pub mean_transactions: f64,
    pub max_transactions: usize,
    /// Legitimate-to-fraud transaction ratio.
    pub imbalance_ratio: f64,
    pub motif_weights: MotifWeights,
    pub n_locations: usize,
    pub n_hotspots: usize,
    pub n_merchants: usize,
    pub start_timestamp: i64,
    pub span_days: u32,
    /// 0 keeps fraud behaviour stationary; 1 moves night-time, hotspot and
    /// large-amount traits of fraud towards legitimate traffic by the end of
    /// the span.
    pub drift: f64,
    /// Total-variation bound for the marginal-match self-test.
    pub marginal_tv_bound: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_accounts: 2_000,
            mean_transactions: 25.0,
            max_transactions: 400,
            imbalance_ratio: 100.0,
            motif_weights: MotifWeights::default(),
            n_locations: 50,
            n_hotspots: 3,
            n_merchants: 20,
            start_timestamp: 1_672_531_200,
            span_days: 180,
            drift: 0.0,
            marginal_tv_bound: 0.15,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let w = &self.motif_weights;
        let sum = w.tentative + w.midnight + w.marginal_match;
        if [w.tentative, w.midnight, w.marginal_match].iter().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "motif weights must be non-negative and sum to 1, got {sum}"
            )));
        }
        if !(self.imbalance_ratio >= 1.0) {
            return Err(Error::Config(format!(
                "imbalance_ratio must be >= 1, got {}",
                self.imbalance_ratio
            )));
        }
        if self.n_accounts == 0 || !(self.mean_transactions >= 1.0) || self.max_transactions == 0 {
            return Err(Error::Config(
                "need accounts and a mean of at least one transaction".into(),
            ));
        }
        if self.n_hotspots == 0 || self.n_hotspots >= self.n_locations || self.n_merchants < 4 {
            return Err(Error::Config(
                "need 0 < n_hotspots < n_locations and at least 4 merchants".into(),
            ));
        }
        if self.span_days == 0 || self.start_timestamp <= 0 || !(0.0..=1.0).contains(&self.drift) {
            return Err(Error::Config("invalid time span, start or drift".into()));
        }
        Ok(())
    }

    fn location(&self, i: usize) -> String {
        format!("L{i:02}")
    }

    fn merchant(&self, i: usize) -> String {
        format!("M{i:02}")
    }

    /// Hotspots are the last `n_hotspots` location codes.
    pub fn hotspots(&self) -> Vec<String> {
        (self.n_locations - self.n_hotspots..self.n_locations)
            .map(|i| self.location(i))
            .collect()
    }

    fn span_seconds(&self) -> i64 {
        i64::from(self.span_days) * 86_400
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotifCount {
    pub episodes: usize,
    pub transactions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDistance {
    pub feature: String,
    pub total_variation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalSelfTest {
    pub bound: f64,
    pub samples: usize,
    pub distances: Vec<FeatureDistance>,
    pub passed: bool,
}

/// One planted episode: the motif and the positions of its transactions in
/// the output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub motif: Motif,
    pub account_id: String,
    pub rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorManifest {
    pub seed: u64,
    pub config: GeneratorConfig,
    pub legit_transactions: usize,
    pub fraud_transactions: usize,
    pub accounts: usize,
    pub fraud_only_accounts: usize,
    pub motifs: BTreeMap<Motif, MotifCount>,
    pub marginal_self_test: MarginalSelfTest,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    /// Sorted by timestamp, then account, then position in the account.
    pub records: Vec<TransactionRecord>,
    pub episodes: Vec<Episode>,
    pub manifest: GeneratorManifest,
}

#[derive(Debug, Clone)]
struct Profile {
    home: usize,
    merchants: [usize; 3],
    channel_p: [f64; 3],
    hour_center: f64,
    amount: LogNormal<f64>,
    median_amount: f64,
}

#[derive(Debug, Clone)]
struct Draft {
    timestamp: i64,
    amount: f64,
    location: usize,
    merchant: usize,
    channel: usize,
    fraud: bool,
    episode: Option<usize>,
}

fn cents(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn pick_weighted(rng: &mut ChaCha8Rng, p: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &w) in p.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

fn profile(cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Profile {
    let regular = cfg.n_locations - cfg.n_hotspots;
    let mut merchants: Vec<usize> = (0..cfg.n_merchants).collect();
    merchants.shuffle(rng);
    let pos = rng.random_range(0.4..0.9);
    let mu = Normal::new(3.5, 1.0).expect("valid normal").sample(rng);
    Profile {
        home: rng.random_range(0..regular),
        merchants: [merchants[0], merchants[1], merchants[2]],
        channel_p: [pos, (1.0 - pos) * 0.75, (1.0 - pos) * 0.25],
        hour_center: Normal::new(14.0f64, 2.5)
            .expect("valid normal")
            .sample(rng)
            .clamp(8.0, 20.0),
        amount: LogNormal::new(mu, 0.35).expect("valid lognormal"),
        median_amount: mu.exp(),
    }
}

fn time_of_day(hour: f64, rng: &mut ChaCha8Rng) -> i64 {
    let h = hour.rem_euclid(24.0).floor() as i64;
    h * 3600 + rng.random_range(0..3600)
}

fn legit_transaction(cfg: &GeneratorConfig, p: &Profile, day: i64, rng: &mut ChaCha8Rng) -> Draft {
    let regular = cfg.n_locations - cfg.n_hotspots;
    let location = if rng.random_bool(0.9) {
        p.home
    } else if rng.random_bool(0.05) {
        rng.random_range(regular..cfg.n_locations)
    } else {
        rng.random_range(0..regular)
    };
    let merchant = if rng.random_bool(0.85) {
        *p.merchants.choose(rng).expect("three merchants")
    } else {
        rng.random_range(0..cfg.n_merchants)
    };
    let hour = Normal::new(p.hour_center, 2.0).expect("valid normal").sample(rng);
    Draft {
        timestamp: cfg.start_timestamp + day * 86_400 + time_of_day(hour, rng),
        amount: cents(p.amount.sample(rng)).max(0.01),
        location,
        merchant,
        channel: pick_weighted(rng, &p.channel_p),
        fraud: false,
        episode: None,
    }
}

fn legit_account(cfg: &GeneratorConfig, index: usize) -> (Profile, Vec<Draft>) {
    let mut rng = seed::rng(seed::derive_indexed(cfg.seed, "account", index as u64));
    let p = profile(cfg, &mut rng);
    let geo = Geometric::new(1.0 / cfg.mean_transactions).expect("valid geometric");
    let count = (1 + geo.sample(&mut rng) as usize).min(cfg.max_transactions);
    let mut drafts: Vec<Draft> = (0..count)
        .map(|_| {
            let day = rng.random_range(0..i64::from(cfg.span_days));
            legit_transaction(cfg, &p, day, &mut rng)
        })
        .collect();
    drafts.sort_by_key(|d| d.timestamp);
    (p, drafts)
}

/// Position of time `t` in the span, in `[0, 1]`.
fn progress(cfg: &GeneratorConfig, t: i64) -> f64 {
    ((t - cfg.start_timestamp) as f64 / cfg.span_seconds() as f64).clamp(0.0, 1.0)
}

struct EpisodePlan {
    motif: Motif,
    size: usize,
}

/// Episode sizes whose total is exactly `fraud_total`, split by weight.
fn plan_episodes(cfg: &GeneratorConfig, fraud_total: usize, rng: &mut ChaCha8Rng) -> Vec<EpisodePlan> {
    let w = &cfg.motif_weights;
    let mut budget: BTreeMap<Motif, usize> = BTreeMap::new();
    let mut assigned = 0;
    for m in [Motif::Tentative, Motif::MarginalMatch] {
        let n = (fraud_total as f64 * w.get(m)).round() as usize;
        let n = n.min(fraud_total - assigned);
        budget.insert(m, n);
        assigned += n;
    }
    budget.insert(Motif::Midnight, fraud_total - assigned);

    let mut plans = Vec::new();
    for (&motif, &total) in &budget {
        let mut left = total;
        while left > 0 {
            let want = match motif {
                Motif::Tentative => rng.random_range(2..=4) + 1,
                Motif::Midnight => 1,
                Motif::MarginalMatch => rng.random_range(3..=6),
            };
            let size = if motif == Motif::Tentative && left < 3 {
                // too small for a tentative chain; finish with midnight deals
                for _ in 0..left {
                    plans.push(EpisodePlan {
                        motif: Motif::Midnight,
                        size: 1,
                    });
                }
                break;
            } else {
                want.min(left)
            };
            plans.push(EpisodePlan { motif, size });
            left -= size;
        }
    }
    plans.shuffle(rng);
    plans
}

fn night_hour(cfg: &GeneratorConfig, q: f64, rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(0.0..4.0) + cfg.drift * q * 12.0
}

fn off_site_location(cfg: &GeneratorConfig, home: Option<usize>, q: f64, rng: &mut ChaCha8Rng) -> usize {
    let regular = cfg.n_locations - cfg.n_hotspots;
    let hotspot_p = 0.8 * (1.0 - cfg.drift * q);
    if rng.random_bool(hotspot_p.clamp(0.0, 1.0)) {
        rng.random_range(regular..cfg.n_locations)
    } else {
        loop {
            let l = rng.random_range(0..regular);
            if Some(l) != home {
                return l;
            }
        }
    }
}

/// Start time for a short night-time block on a random day that does not
/// overlap the account's existing transactions.
fn night_slot(cfg: &GeneratorConfig, existing: &[Draft], len_secs: i64, rng: &mut ChaCha8Rng) -> i64 {
    for _ in 0..64 {
        let day = rng.random_range(0..i64::from(cfg.span_days));
        let base = cfg.start_timestamp + day * 86_400;
        let q = progress(cfg, base);
        let t = base + time_of_day(night_hour(cfg, q, rng), rng);
        if !existing
            .iter()
            .any(|d| d.timestamp >= t - 60 && d.timestamp <= t + len_secs + 60)
        {
            return t;
        }
    }
    cfg.start_timestamp + rng.random_range(0..cfg.span_seconds())
}

/// Marginal-match source: every legitimate transaction as (account,
/// position), and each account's time-ordered legitimate transactions.
type Donors = (Vec<(usize, usize)>, Vec<Vec<Draft>>);

#[allow(clippy::too_many_arguments)]
fn implant(
    cfg: &GeneratorConfig,
    plan: &EpisodePlan,
    episode: usize,
    profile: Option<&Profile>,
    existing: &[Draft],
    donors: &Donors,
    owner: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Draft> {
    let home = profile.map(|p| p.home);
    let median = profile.map_or_else(
        || LogNormal::new(3.5, 1.0).expect("valid").sample(rng),
        |p| p.median_amount,
    );
    let mk = |timestamp, amount, location, merchant, channel| Draft {
        timestamp,
        amount: cents(amount).max(0.01),
        location,
        merchant,
        channel,
        fraud: true,
        episode: Some(episode),
    };
    match plan.motif {
        Motif::Tentative => {
            let k = plan.size - 1;
            let gaps: Vec<i64> = (0..plan.size).map(|_| rng.random_range(120..900)).collect();
            let start = night_slot(cfg, existing, gaps.iter().sum(), rng);
            let location = off_site_location(cfg, home, progress(cfg, start), rng);
            let merchant = rng.random_range(0..cfg.n_merchants);
            let base: f64 = rng.random_range(1.0..5.0);
            let mut amounts = Vec::with_capacity(plan.size);
            let mut a = base;
            for _ in 0..k {
                amounts.push(cents(a));
                a += base * rng.random_range(0.2..0.6);
            }
            let mut sorted = amounts.clone();
            sorted.sort_by(f64::total_cmp);
            let med = sorted[k / 2];
            amounts.push(med * rng.random_range(12.0..30.0));
            let mut t = start;
            amounts
                .into_iter()
                .zip(gaps)
                .map(|(amt, gap)| {
                    let d = mk(t, amt, location, merchant, 1);
                    t += gap;
                    d
                })
                .collect()
        }
        Motif::Midnight => {
            let t = night_slot(cfg, existing, 0, rng);
            let q = progress(cfg, t);
            let mult = rng.random_range(10.0..40.0) * (1.0 - 0.9 * cfg.drift * q) + cfg.drift * q;
            let channel = if rng.random_bool(0.5) { 1 } else { 2 };
            vec![mk(
                t,
                median * mult,
                off_site_location(cfg, home, q, rng),
                rng.random_range(0..cfg.n_merchants),
                channel,
            )]
        }
        Motif::MarginalMatch => {
            let (lo, hi) = match (existing.first(), existing.last()) {
                (Some(a), Some(b)) => (a.timestamp, b.timestamp),
                _ => (cfg.start_timestamp, cfg.start_timestamp + cfg.span_seconds() - 1),
            };
            // a run of one other account's consecutive transactions, moved
            // into this account with its own spacing and times of day
            let mut pick = None;
            for _ in 0..64 {
                let &(a, j) = donors.0.choose(rng).expect("donor pool is non-empty");
                let len = donors.1[a].len();
                if (a != owner || donors.1.len() == 1) && len >= plan.size {
                    pick = Some((a, j.min(len - plan.size)));
                    break;
                }
            }
            let start_day = (rng.random_range(lo..=hi) - cfg.start_timestamp).div_euclid(86_400);
            let day_of = |d: &Draft| (d.timestamp - cfg.start_timestamp).div_euclid(86_400);
            let mut out: Vec<Draft> = Vec::with_capacity(plan.size);
            for k in 0..plan.size {
                // without a long enough donor history, single copies a week apart
                let (d, day) = match pick {
                    Some((a, first)) => {
                        let run = &donors.1[a][first..first + plan.size];
                        (&run[k], start_day + day_of(&run[k]) - day_of(&run[0]))
                    }
                    None => {
                        let &(a, j) = donors.0.choose(rng).expect("donor pool is non-empty");
                        (&donors.1[a][j], start_day + 7 * k as i64)
                    }
                };
                let tod = (d.timestamp - cfg.start_timestamp).rem_euclid(86_400);
                out.push(mk(
                    cfg.start_timestamp + day * 86_400 + tod,
                    d.amount,
                    d.location,
                    d.merchant,
                    d.channel,
                ));
            }
            // same amounts, escalating in time: no single row gives it away
            let mut amounts: Vec<f64> = out.iter().map(|d| d.amount).collect();
            amounts.sort_by(f64::total_cmp);
            out.sort_by_key(|d| d.timestamp);
            for (d, a) in out.iter_mut().zip(amounts) {
                d.amount = a;
            }
            out.sort_by_key(|d| d.timestamp);
            out
        }
    }
}

/// Generates the dataset for `cfg`.
pub fn generate(cfg: &GeneratorConfig) -> Result<Dataset> {
    cfg.validate()?;
    let accounts: Vec<(Profile, Vec<Draft>)> = (0..cfg.n_accounts)
        .into_par_iter()
        .map(|i| legit_account(cfg, i))
        .collect();
    let legit: usize = accounts.iter().map(|a| a.1.len()).sum();
    let fraud_total = (legit as f64 / cfg.imbalance_ratio).round() as usize;

    let mut rng = seed::rng(seed::derive_seed(cfg.seed, "episodes"));
    let plans = plan_episodes(cfg, fraud_total, &mut rng);

    let donors: Donors = (
        accounts
            .iter()
            .enumerate()
            .flat_map(|(i, a)| (0..a.1.len()).map(move |j| (i, j)))
            .collect(),
        accounts.iter().map(|a| a.1.clone()).collect(),
    );

    let mut eligible: Vec<usize> = (0..accounts.len()).filter(|&i| accounts[i].1.len() >= 2).collect();
    eligible.shuffle(&mut rng);
    let mut per_account: Vec<Vec<Draft>> = accounts.iter().map(|a| a.1.clone()).collect();
    let mut profiles: Vec<Option<Profile>> = accounts.into_iter().map(|a| Some(a.0)).collect();
    let mut episodes = Vec::with_capacity(plans.len());
    let mut fraud_only = 0;
    for (e, plan) in plans.iter().enumerate() {
        let owner = match eligible.pop() {
            Some(i) => i,
            None => {
                per_account.push(Vec::new());
                profiles.push(None);
                fraud_only += 1;
                per_account.len() - 1
            }
        };
        let drafts = implant(
            cfg,
            plan,
            e,
            profiles[owner].as_ref(),
            &per_account[owner],
            &donors,
            owner,
            &mut rng,
        );
        per_account[owner].extend(drafts);
        per_account[owner].sort_by_key(|d| d.timestamp);
        episodes.push((plan.motif, owner));
    }

    // flatten, time-ordered
    let width = per_account.len().to_string().len().max(6);
    let mut rows: Vec<(i64, usize, usize, Draft)> = Vec::with_capacity(legit + fraud_total);
    for (a, drafts) in per_account.into_iter().enumerate() {
        for (k, d) in drafts.into_iter().enumerate() {
            rows.push((d.timestamp, a, k, d));
        }
    }
    rows.sort_by_key(|r| (r.0, r.1, r.2));
    let mut episode_rows: Vec<Vec<usize>> = vec![Vec::new(); episodes.len()];
    let records: Vec<TransactionRecord> = rows
        .into_iter()
        .enumerate()
        .map(|(pos, (_, a, _, d))| {
            if let Some(e) = d.episode {
                episode_rows[e].push(pos);
            }
            TransactionRecord {
                account_id: format!("A{a:0width$}"),
                timestamp: d.timestamp,
                amount: d.amount,
                location_code: cfg.location(d.location),
                merchant_type: cfg.merchant(d.merchant),
                channel: CHANNELS[d.channel].to_string(),
                label: Some(d.fraud),
            }
        })
        .collect();
    let episodes: Vec<Episode> = episodes
        .into_iter()
        .zip(episode_rows)
        .map(|((motif, owner), rows)| Episode {
            motif,
            account_id: format!("A{owner:0width$}"),
            rows,
        })
        .collect();

    let mut motifs: BTreeMap<Motif, MotifCount> = Motif::ALL
        .iter()
        .map(|&m| {
            (
                m,
                MotifCount {
                    episodes: 0,
                    transactions: 0,
                },
            )
        })
        .collect();
    for e in &episodes {
        let c = motifs.get_mut(&e.motif).expect("all motifs present");
        c.episodes += 1;
        c.transactions += e.rows.len();
    }
    let marginal_self_test = marginal_self_test(&records, &episodes, cfg.marginal_tv_bound);
    if !marginal_self_test.passed && marginal_self_test.samples > 0 {
        log::warn!(
            "marginal-match self-test above bound {} on {} transactions",
            cfg.marginal_tv_bound,
            marginal_self_test.samples
        );
    }
    let manifest = GeneratorManifest {
        seed: cfg.seed,
        config: cfg.clone(),
        legit_transactions: legit,
        fraud_transactions: fraud_total,
        accounts: profiles.len(),
        fraud_only_accounts: fraud_only,
        motifs,
        marginal_self_test,
    };
    Ok(Dataset {
        records,
        episodes,
        manifest,
    })
}

fn total_variation(a: &[usize], b: &[usize]) -> f64 {
    let (na, nb) = (a.iter().sum::<usize>() as f64, b.iter().sum::<usize>() as f64);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    0.5 * a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 / na - y as f64 / nb).abs())
        .sum::<f64>()
}

/// Compares one-dimensional histograms of marginal-match transactions with
/// legitimate ones: amount deciles of the legitimate data, six 4-hour blocks,
/// and for each categorical field its ten most common legitimate values plus
/// one bucket for the rest.
pub fn marginal_self_test(records: &[TransactionRecord], episodes: &[Episode], bound: f64) -> MarginalSelfTest {
    let motif_rows: Vec<usize> = episodes
        .iter()
        .filter(|e| e.motif == Motif::MarginalMatch)
        .flat_map(|e| e.rows.iter().copied())
        .collect();
    let legit: Vec<&TransactionRecord> = records.iter().filter(|r| r.label == Some(false)).collect();
    let fraud: Vec<&TransactionRecord> = motif_rows.iter().map(|&i| &records[i]).collect();
    let mut distances = Vec::new();
    if !fraud.is_empty() && !legit.is_empty() {
        let mut amounts: Vec<f64> = legit.iter().map(|r| r.amount).collect();
        amounts.sort_by(f64::total_cmp);
        let edges: Vec<f64> = (1..10).map(|k| amounts[k * amounts.len() / 10]).collect();
        let amount_bin = |r: &TransactionRecord| edges.partition_point(|&e| e < r.amount);
        let hour_bin = |r: &TransactionRecord| (r.hour_of_day() / 4.0) as usize;
        let hist = |rows: &[&TransactionRecord], bins: usize, f: &dyn Fn(&TransactionRecord) -> usize| {
            let mut h = vec![0usize; bins];
            rows.iter().for_each(|r| h[f(r).min(bins - 1)] += 1);
            h
        };
        distances.push(FeatureDistance {
            feature: "amount".into(),
            total_variation: total_variation(&hist(&legit, 10, &amount_bin), &hist(&fraud, 10, &amount_bin)),
        });
        distances.push(FeatureDistance {
            feature: "hour".into(),
            total_variation: total_variation(&hist(&legit, 6, &hour_bin), &hist(&fraud, 6, &hour_bin)),
        });
        for field in crate::feature_engineering::CategoricalField::ALL {
            let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
            legit
                .iter()
                .for_each(|r| *freq.entry(r.categorical(field)).or_default() += 1);
            let mut top: Vec<(&str, usize)> = freq.into_iter().collect();
            top.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
            top.truncate(10);
            let bin = |r: &TransactionRecord| {
                top.iter()
                    .position(|(v, _)| *v == r.categorical(field))
                    .unwrap_or(top.len())
            };
            let bins = top.len() + 1;
            distances.push(FeatureDistance {
                feature: field.name().into(),
                total_variation: total_variation(&hist(&legit, bins, &bin), &hist(&fraud, bins, &bin)),
            });
        }
    }
    let passed = distances.iter().all(|d| d.total_variation <= bound);
    MarginalSelfTest {
        bound,
        samples: fraud.len(),
        distances,
        passed,
    }
}
