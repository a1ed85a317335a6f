//! Acceptance suite.
//!
//! One test per criterion, each printing a single `criterion N: PASS|FAIL`
//! line straight to stderr so the verdicts show up without `--nocapture`.
//! Thresholds and runtime limits are fixed constants below. The tests share a
//! lock so the wall-clock limits are measured one criterion at a time.

use std::io::Write;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use camd_core::candidate::{Candidate, EvidenceContext};
use camd_core::clustering::{Cluster, ClusterSet};
use camd_core::config::{CampaignConfig, Profile, PINNED_SEED};
use camd_core::controller::{init_state, update_posterior, ControllerConfig, StoppingPolicy};
use camd_core::coverage::{delta_coverage_size, residual};
use camd_core::distribution::DifficultyDistribution;
use camd_core::experiment::{
    run_policy_comparison, run_theory_case, run_theory_suite, ComparisonSetup, Estimator,
    ExperimentRecord, TheoryCase,
};
use camd_core::report;
use camd_core::scoring::{
    combine, combine_scores, normalize_weights, score_components, PreparedContext, ScoreComponents,
    ScoringConfig,
};
use camd_core::seed::{derive_path, rng_from};
use camd_core::synthetic::{SyntheticBackend, SyntheticConfig};
use rand::Rng;
use rand_distr::StandardNormal;

static SERIAL: Mutex<()> = Mutex::new(());

struct Verdict {
    criterion: u32,
    checks: Vec<(String, bool)>,
    elapsed: Duration,
    limit: Duration,
}

impl Verdict {
    fn new(criterion: u32, limit_secs: u64) -> Self {
        Self {
            criterion,
            checks: Vec::new(),
            elapsed: Duration::ZERO,
            limit: Duration::from_secs(limit_secs),
        }
    }

    fn check(&mut self, what: impl Into<String>, ok: bool) {
        self.checks.push((what.into(), ok));
    }

    /// Prints the verdict line and fails the test if any check failed.
    fn finish(mut self, started: Instant) {
        self.elapsed = started.elapsed();
        let in_time = self.elapsed < self.limit;
        let ok = in_time && self.checks.iter().all(|(_, ok)| *ok);
        let details: Vec<String> = self
            .checks
            .iter()
            .map(|(what, ok)| format!("{}{what}", if *ok { "" } else { "FAILED " }))
            .collect();
        let line = format!(
            "criterion {}: {} ({:.2}s, limit {}s) {}\n",
            self.criterion,
            if ok { "PASS" } else { "FAIL" },
            self.elapsed.as_secs_f64(),
            self.limit.as_secs(),
            details.join("; ")
        );
        let _ = std::io::stderr().write_all(line.as_bytes());
        assert!(ok, "{line}");
    }
}

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

#[test]
fn criterion_01_delta_coverage_size_is_minimal() {
    let _guard = serial();
    let started = Instant::now();
    let mut v = Verdict::new(1, 1);
    let mut rng = rng_from(derive_path(PINNED_SEED, &[10, 1]));
    let mut wrong = 0;
    for _ in 0..1000 {
        let s: f64 = rng.random_range(1e-6..1.0);
        let delta: f64 = rng.random_range(1e-6..1.0);
        let n = delta_coverage_size(s, delta).expect("valid inputs");
        let miss = |m: u64| (1.0 - s).powf(m as f64);
        let reaches = miss(n) <= delta;
        let minimal = n == 1 || miss(n - 1) > delta;
        if !(reaches && minimal) {
            wrong += 1;
        }
    }
    v.check(format!("{wrong} of 1000 sizes not minimal"), wrong == 0);
    v.finish(started);
}

#[test]
fn criterion_02_uniform_residual_closed_form() {
    let _guard = serial();
    let started = Instant::now();
    let mut v = Verdict::new(2, 1);
    let uniform = DifficultyDistribution::beta(1.0, 1.0).unwrap();
    let mut worst = 0.0f64;
    for k in 1..=10_000u64 {
        let got = residual(&uniform, k).unwrap();
        worst = worst.max((got - 1.0 / (k as f64 + 1.0)).abs());
    }
    v.check(format!("max |error| {worst:.3e} <= 1e-10"), worst <= 1e-10);
    v.finish(started);
}

fn slope_check(v: &mut Verdict, case: &TheoryCase, seed: u64, tolerance: f64, min_r2: Option<f64>) {
    let (_, fit) = run_theory_case(case, seed).expect("theory case runs");
    let err = (fit.fitted - fit.theoretical).abs();
    v.check(
        format!(
            "{} slope {:.4} vs {:.4} (|diff| {:.4} <= {tolerance})",
            case.name, fit.fitted, fit.theoretical, err
        ),
        err <= tolerance,
    );
    if let Some(min) = min_r2 {
        v.check(
            format!("{} R^2 {:.5} >= {min}", case.name, fit.r_squared),
            fit.r_squared >= min,
        );
    }
}

#[test]
fn criterion_03_heavy_tail_power_law() {
    let _guard = serial();
    let started = Instant::now();
    let mut v = Verdict::new(3, 60);
    for (i, alpha) in [0.5, 0.7, 1.0].into_iter().enumerate() {
        let case = TheoryCase {
            name: format!("heavy_tail_{alpha}"),
            distribution: DifficultyDistribution::heavy_tail(alpha, alpha, 1.0).unwrap(),
            ks: vec![64, 128, 256, 512, 1024],
            estimator: Estimator::MonteCarlo,
            draws: 1_000_000,
        };
        slope_check(&mut v, &case, derive_path(PINNED_SEED, &[10, 3, i as u64]), 0.15, None);
    }
    v.finish(started);
}

#[test]
fn criterion_04_light_tail_geometric_decay() {
    let _guard = serial();
    let started = Instant::now();
    let mut v = Verdict::new(4, 30);
    let case = TheoryCase {
        name: "light_truncated_0.2".into(),
        distribution: DifficultyDistribution::light_truncated(
            0.2,
            DifficultyDistribution::beta(1.0, 1.0).unwrap(),
        )
        .unwrap(),
        ks: (1..=16).map(|i| 64 * i).collect(),
        estimator: Estimator::Quadrature,
        draws: 0,
    };
    slope_check(&mut v, &case, derive_path(PINNED_SEED, &[10, 4]), 0.02, Some(0.99));
    v.finish(started);
}

#[test]
fn criterion_05_stretched_exponential() {
    let _guard = serial();
    let started = Instant::now();
    let mut v = Verdict::new(5, 120);
    for theta in [0.5, 1.0] {
        let case = TheoryCase {
            name: format!("stretched_exp_{theta}"),
            distribution: DifficultyDistribution::stretched_exp(theta, 1.0).unwrap(),
            ks: (6..=14).map(|e| 1u64 << e).collect(),
            estimator: Estimator::Quadrature,
            draws: 0,
        };
        slope_check(&mut v, &case, derive_path(PINNED_SEED, &[10, 5]), 0.10, None);
    }
    v.finish(started);
}

fn fixed_clusters(labels: &[usize], m: usize) -> ClusterSet {
    let clusters = (0..m)
        .map(|k| {
            let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == k).collect();
            Cluster {
                representative: members[0],
                members,
                weight: 1.0 / m as f64,
            }
        })
        .collect();
    ClusterSet {
        clusters,
        similarity_threshold: 0.85,
        round: 0,
        p_star: 1.0 / m as f64,
    }
}

#[test]
fn criterion_06_sequential_updates_match_one_shot() {
    let _guard = serial();
    let started = Instant::now();
    let mut v = Verdict::new(6, 5);
    let mut rng = rng_from(derive_path(PINNED_SEED, &[10, 6]));
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let m = rng.random_range(1..=8usize);
        let n = rng.random_range(m..=m + 40);
        // every cluster gets at least one member
        let mut labels: Vec<usize> = (0..n).map(|i| if i < m { i } else { rng.random_range(0..m) }).collect();
        for i in (1..n).rev() {
            labels.swap(i, rng.random_range(0..=i));
        }
        let weights: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let prior = rng.random_range(0.1..3.0);
        let clusters = fixed_clusters(&labels, m);

        let start = init_state(m, prior).unwrap();
        let one_shot = update_posterior(&start, &clusters, &weights).unwrap();
        let expected: Vec<f64> = one_shot.alpha.iter().zip(&one_shot.soft_counts).map(|(a, c)| a + c).collect();

        for _ in 0..100 {
            let mut state = start.clone();
            let mut from = 0;
            while from < n {
                let to = rng.random_range(from + 1..=n);
                let mut batch = vec![0.0; n];
                batch[from..to].copy_from_slice(&weights[from..to]);
                state = update_posterior(&state, &clusters, &batch).unwrap();
                from = to;
            }
            for (k, want) in expected.iter().enumerate() {
                worst = worst.max((state.alpha[k] + state.soft_counts[k] - want).abs());
            }
        }
    }
    v.check(format!("max |error| {worst:.3e} <= 1e-12"), worst <= 1e-12);
    v.finish(started);
}

fn gaussian_vec(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn random_candidate(rng: &mut impl Rng, dim: usize) -> Candidate {
    let len = rng.random_range(1..=12);
    Candidate {
        answer_text: format!("answer {}", rng.random_range(0..20)),
        token_logprobs: (0..len).map(|_| -rng.random_range(0.0..5.0)).collect(),
        token_embeddings: (0..len).map(|_| gaussian_vec(rng, dim)).collect(),
        hidden_states: Some((0..len).map(|_| gaussian_vec(rng, dim)).collect()),
    }
}

#[test]
fn criterion_07_scoring_algebra() {
    let _guard = serial();
    let started = Instant::now();
    let mut v = Verdict::new(7, 5);
    let mut rng = rng_from(derive_path(PINNED_SEED, &[10, 7]));
    let dim = 16;
    let (mut shift_err, mut scale_err, mut affine_err) = (0.0f64, 0.0f64, 0.0f64);
    let pools = 1000;
    let per_pool = 10;
    for _ in 0..pools {
        let ctx = EvidenceContext {
            visual_features: (0..3).map(|_| gaussian_vec(&mut rng, dim)).collect(),
            text_features: (0..2).map(|_| gaussian_vec(&mut rng, dim)).collect(),
        };
        let prepared = PreparedContext::new(&ctx).unwrap();
        let config = ScoringConfig {
            lambda_g: rng.random_range(0.0..2.0),
            lambda_c: rng.random_range(0.0..2.0),
            normalize_components: rng.random(),
        };
        let mut parts = Vec::with_capacity(per_pool);
        for _ in 0..per_pool {
            let c = random_candidate(&mut rng, dim);
            let p = score_components(&c, &prepared).unwrap();

            // positive rescaling of every embedding leaves alignment and
            // coherence unchanged
            let factor = rng.random_range(1e-3..1e3);
            let scaled = Candidate {
                token_embeddings: c.token_embeddings.iter().map(|e| e.iter().map(|x| x * factor).collect()).collect(),
                hidden_states: c
                    .hidden_states
                    .as_ref()
                    .map(|h| h.iter().map(|e| e.iter().map(|x| x * factor).collect()).collect()),
                ..c.clone()
            };
            let q = score_components(&scaled, &prepared).unwrap();
            scale_err = scale_err.max((p.s_align - q.s_align).abs()).max((p.s_coh - q.s_coh).abs());

            let h = rng.random_range(-1.0..1.0);
            let bumped = ScoreComponents {
                s_align: p.s_align + h,
                ..p
            };
            let slope = (combine(bumped, &config) - combine(p, &config)) / h;
            affine_err = affine_err.max((slope - config.lambda_g).abs());
            parts.push(p);
        }
        let scores = combine_scores(&parts, &config);
        let shift = rng.random_range(-100.0..100.0);
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        let a = normalize_weights(&scores).unwrap();
        let b = normalize_weights(&shifted).unwrap();
        for (x, y) in a.iter().zip(&b) {
            shift_err = shift_err.max((x - y).abs());
        }
    }
    let n = pools * per_pool;
    v.check(format!("softmax shift {shift_err:.2e} <= 1e-9"), shift_err <= 1e-9);
    v.check(format!("cosine scale {scale_err:.2e} <= 1e-9"), scale_err <= 1e-9);
    v.check(format!("dS/dS_align - lambda_g {affine_err:.2e} <= 1e-9"), affine_err <= 1e-9);
    v.check(format!("{n} candidates"), n == 10_000);
    v.finish(started);
}

fn mean_samples<'a>(records: impl Iterator<Item = &'a ExperimentRecord>) -> (f64, usize) {
    let (sum, n) = records.fold((0u64, 0usize), |(s, n), r| (s + r.samples_used, n + 1));
    (sum as f64 / n as f64, n)
}

fn coverage(records: &[&ExperimentRecord]) -> (f64, f64) {
    let n = records.len() as f64;
    let p = records.iter().filter(|r| r.covered).count() as f64 / n;
    (p, (p * (1.0 - p) / n).sqrt())
}

fn policy_records<'a>(records: &'a [ExperimentRecord], label: &str) -> Vec<&'a ExperimentRecord> {
    records.iter().filter(|r| r.policy == label).collect()
}

#[test]
fn criterion_08_controller_coverage_guarantee() {
    let _guard = serial();
    let started = Instant::now();
    let mut v = Verdict::new(8, 60);
    let dist = DifficultyDistribution::point_mass(0.9).unwrap();
    let camd = StoppingPolicy::Camd { delta: 0.05 };
    let setup = ComparisonSetup {
        controller: ControllerConfig::default(),
        policies: vec![camd],
        num_instances: 10_000,
        seed: PINNED_SEED,
    };
    let report = run_policy_comparison(&setup, || {
        SyntheticBackend::new(dist.clone(), SyntheticConfig::default(), PINNED_SEED)
    })
    .unwrap();
    let records = policy_records(&report.records, &camd.label());
    let (cov, se) = coverage(&records);
    let (mean, n) = mean_samples(records.iter().copied());
    let floor = 0.95 - 1.5 * se;
    v.check(format!("coverage {cov:.4} >= {floor:.4}"), cov >= floor);
    v.check(format!("mean samples {mean:.3} <= 3"), mean <= 3.0);
    v.check(format!("{n} instances"), n == 10_000);
    v.finish(started);
}

#[test]
fn criterion_09_adaptive_efficiency() {
    let _guard = serial();
    let started = Instant::now();
    let mut v = Verdict::new(9, 300);
    let dist = DifficultyDistribution::heavy_tail(0.7, 0.7, 1.0).unwrap();
    let camd = StoppingPolicy::camd();
    let backend = || SyntheticBackend::new(dist.clone(), SyntheticConfig::default(), PINNED_SEED);
    let mut setup = ComparisonSetup {
        controller: ControllerConfig::default(),
        policies: vec![camd],
        num_instances: 10_000,
        seed: PINNED_SEED,
    };
    let adaptive = run_policy_comparison(&setup, backend).unwrap();
    let camd_records = policy_records(&adaptive.records, &camd.label());
    let (camd_mean, _) = mean_samples(camd_records.iter().copied());
    let (camd_cov, camd_se) = coverage(&camd_records);

    // FixedN at the smallest integer budget not below the adaptive mean, on
    // the same instances and candidate streams
    let matched = StoppingPolicy::FixedN {
        n: camd_mean.ceil() as u64,
    };
    let fixed8 = StoppingPolicy::FixedN { n: 8 };
    setup.policies = vec![matched, fixed8];
    let fixed = run_policy_comparison(&setup, backend).unwrap();
    let matched_records = policy_records(&fixed.records, &matched.label());
    let (fixed_cov, fixed_se) = coverage(&matched_records);
    let floor = fixed_cov - fixed_se;
    v.check(
        format!(
            "camd coverage {camd_cov:.4} (se {camd_se:.4}, mean {camd_mean:.2}) >= {} coverage {fixed_cov:.4} - 1 se = {floor:.4}",
            matched.label()
        ),
        camd_cov >= floor,
    );

    let easy = |r: &&&ExperimentRecord| r.true_s.is_some_and(|s| s >= 0.8);
    let (easy_camd, easy_n) = mean_samples(camd_records.iter().filter(easy).copied());
    let fixed8_records = policy_records(&fixed.records, &fixed8.label());
    let (easy_fixed8, _) = mean_samples(fixed8_records.iter().filter(easy).copied());
    let budget = 0.4 * easy_fixed8;
    v.check(
        format!("easy subpopulation ({easy_n} instances) camd mean {easy_camd:.3} <= 0.4 x {easy_fixed8:.0} = {budget:.2}"),
        easy_n > 0 && easy_camd <= budget,
    );
    v.finish(started);
}

fn ci_campaign_csv() -> Vec<String> {
    let config = CampaignConfig::profile(Profile::Ci);
    let theory = run_theory_suite(&config.theory.cases, config.seed).unwrap();
    let comparison = run_policy_comparison(&config.comparison_setup(), || {
        SyntheticBackend::new(config.comparison.distribution.clone(), config.synthetic, config.seed)
    })
    .unwrap();
    vec![
        report::theory_csv(&theory).unwrap(),
        report::fits_csv(&theory).unwrap(),
        report::records_csv(&comparison.records).unwrap(),
        report::summary_csv(&comparison.summaries).unwrap(),
    ]
}

#[test]
fn criterion_10_pinned_campaign_is_reproducible() {
    let _guard = serial();
    let started = Instant::now();
    let mut v = Verdict::new(10, 120);
    let first = ci_campaign_csv();
    let second = ci_campaign_csv();
    let bytes: usize = first.iter().map(String::len).sum();
    v.check(format!("{bytes} CSV bytes identical across reruns"), first == second);
    v.finish(started);
}
