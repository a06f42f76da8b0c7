//! Acceptance suite: one test per release criterion, each printing a single
//! `[PASS]`/`[FAIL]` line (visible under `--nocapture`) with the measured
//! numbers before asserting. The criteria pin the numeric tolerances, the
//! corpus sizes, and the runtime budgets; the implementations below stick to
//! those exactly.

use std::time::Instant;

use rand::Rng;

use tipo_core::align::{align_pair, AlignedPair};
use tipo_core::dataset::{Dataset, Split};
use tipo_core::intensity::{intensity_weight, ScoreConfig};
use tipo_core::metrics::evaluate_references;
use tipo_core::objectives::{
    dpo_batch, sft_batch, step_dpo_batch, step_family_batch, weighted_step_batch, Method,
    ObjectiveConfig,
};
use tipo_core::oracles::{brute_force_align, central_diff_at, max_rel_err};
use tipo_core::pipeline::{reproduce, RunConfig};
use tipo_core::policy::{PolicyParams, N_PARAMS};
use tipo_core::synthgen::{generate, GenConfig};
use tipo_core::traj::{
    task_map, ActionType, Persona, PreferencePair, Step, Trajectory, ALL_ACTIONS,
};
use tipo_core::util::seeded_rng;

fn check(ok: bool, line: &str) {
    println!("[{}] {line}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "{line}");
}

fn dataset(n_tasks: usize, seed: u64) -> Dataset {
    Dataset::from_gen(
        generate(&GenConfig::default().with_n_tasks(n_tasks).with_seed(seed)).unwrap(),
    )
}

fn random_params(seed: u64) -> PolicyParams {
    let mut rng = seeded_rng(seed);
    PolicyParams { w: (0..N_PARAMS).map(|_| rng.gen_range(-0.8..0.8)).collect() }
}

const PREF_METHODS: [Method; 5] =
    [Method::Dpo, Method::StepDpo, Method::Tipo, Method::TipoWoPw, Method::TipoWoPg];

/// Criterion 1: analytic gradients of every objective agree with central
/// finite differences (eps 1e-5, max relative error < 1e-5) over at least
/// 50 random probes, in under ten seconds.
#[test]
fn criterion_01_gradient_fidelity() {
    let start = Instant::now();
    let ds = dataset(10, 101);
    let tasks = task_map(&ds.tasks);
    let aligned: Vec<AlignedPair> = ds.pairs.iter().map(|p| align_pair(p).unwrap()).collect();
    let mut rng = seeded_rng(102);

    let mut probes = 0usize;
    let mut resolvable = 0usize;
    let mut worst = 0.0f64;
    let methods = [
        Method::Sft,
        Method::Dpo,
        Method::StepDpo,
        Method::Tipo,
        Method::TipoWoPw,
        Method::TipoWoPg,
    ];
    for (mi, &method) in methods.iter().enumerate() {
        for probe in 0..9u64 {
            let params = random_params(1_000 + 100 * mi as u64 + probe);
            let cfg = ObjectiveConfig::default().with_method(method);
            let reference = random_params(2_000 + probe);
            let traj_batch: Vec<&Trajectory> = ds.trajectories.iter().take(2).collect();
            let pair_batch: Vec<&PreferencePair> = ds.pairs.iter().take(2).collect();
            let pick = rng.gen_range(0..aligned.len() - 1);
            let aligned_batch: Vec<&AlignedPair> = aligned[pick..pick + 2].iter().collect();

            let eval = match method {
                Method::Sft => sft_batch(&params, &tasks, &traj_batch).unwrap(),
                Method::Dpo => dpo_batch(&params, &reference, &tasks, &pair_batch, &cfg).unwrap(),
                _ => step_family_batch(&params, &reference, &tasks, &aligned_batch, &cfg).unwrap(),
            };
            let mut scratch = params.clone();
            let mut w = params.w.clone();
            let mut f = |x: &[f64]| {
                scratch.w.copy_from_slice(x);
                match method {
                    Method::Sft => sft_batch(&scratch, &tasks, &traj_batch).unwrap().loss,
                    Method::Dpo => {
                        dpo_batch(&scratch, &reference, &tasks, &pair_batch, &cfg).unwrap().loss
                    }
                    _ => {
                        step_family_batch(&scratch, &reference, &tasks, &aligned_batch, &cfg)
                            .unwrap()
                            .loss
                    }
                }
            };
            // Entries smaller than the probe step cannot be resolved by an
            // eps-wide central difference; the shared helper treats them as
            // matching zeros, so the floor is set to eps itself.
            let mut analytic = Vec::with_capacity(80);
            let mut numeric = Vec::with_capacity(80);
            for _ in 0..80 {
                let i = rng.gen_range(0..N_PARAMS);
                analytic.push(eval.grad[i]);
                numeric.push(central_diff_at(&mut f, &mut w, i, 1e-5));
            }
            resolvable +=
                analytic.iter().zip(&numeric).filter(|(a, n)| a.abs().max(n.abs()) >= 1e-5).count();
            worst = worst.max(max_rel_err(&analytic, &numeric, 1e-5));
            probes += 1;
        }
    }
    let elapsed = start.elapsed();
    check(
        worst < 1e-5 && probes >= 50 && resolvable >= 500 && elapsed.as_secs() < 10,
        &format!(
            "criterion 1 gradient fidelity: max rel err {worst:.2e} over {probes} probes \
             ({resolvable} resolvable coordinates) across 6 objectives in {elapsed:.2?} \
             (needs <1e-5, >=50, <10s)"
        ),
    );
}

/// Criterion 2: with the policy equal to its reference, every preference
/// loss is exactly log 2 per comparison unit (tolerance 1e-9).
#[test]
fn criterion_02_initialization_identity() {
    let ds = dataset(10, 201);
    let tasks = task_map(&ds.tasks);
    let aligned: Vec<AlignedPair> = ds.pairs.iter().map(|p| align_pair(p).unwrap()).collect();
    let aligned_refs: Vec<&AlignedPair> = aligned.iter().collect();
    let pair_refs: Vec<&PreferencePair> = ds.pairs.iter().collect();

    let mut worst = 0.0f64;
    for trial in 0..10u64 {
        let params = random_params(2_100 + trial);
        let reference = params.clone();
        for method in PREF_METHODS {
            let cfg = ObjectiveConfig::default().with_method(method);
            let loss = match method {
                Method::Dpo => dpo_batch(&params, &reference, &tasks, &pair_refs, &cfg),
                _ => step_family_batch(&params, &reference, &tasks, &aligned_refs, &cfg),
            }
            .unwrap()
            .loss;
            worst = worst.max((loss - std::f64::consts::LN_2).abs());
        }
    }
    check(
        worst < 1e-9,
        &format!(
            "criterion 2 initialization identity: |loss - ln 2| <= {worst:.2e} for all 5 \
             preference objectives over 10 random parameter draws (needs <1e-9)"
        ),
    );
}

/// Criterion 3: a column whose chosen side is the padding placeholder
/// contributes bitwise-zero gradient, and its rejected-side content cannot
/// leak into loss or gradient.
#[test]
fn criterion_03_gate_nullification() {
    let ds = dataset(40, 301);
    let tasks = task_map(&ds.tasks);
    let cfg = ObjectiveConfig::default().with_method(Method::Tipo);
    let params = random_params(302);
    let reference = random_params(303);

    // Every utility-first pair whose rejected branch carries an epilogue
    // aligns with chosen-side placeholders; collect those pairs.
    let gated: Vec<AlignedPair> = ds
        .pairs
        .iter()
        .map(|p| align_pair(p).unwrap())
        .filter(|ap| ap.columns.iter().any(|c| c.chosen.is_placeholder()))
        .collect();
    assert!(gated.len() >= 10, "corpus too small: {} gated pairs", gated.len());

    let mut lone_ok = true;
    let mut leak_ok = true;
    for ap in &gated {
        let gate_at = ap.columns.iter().position(|c| c.chosen.is_placeholder()).unwrap();

        // A batch holding only the gated column: loss is exactly ln 2 and
        // the accumulated gradient is bitwise zero.
        let mut lone = ap.clone();
        lone.columns = vec![ap.columns[gate_at].clone()];
        let eval =
            weighted_step_batch(&params, &reference, &tasks, &[&lone], &cfg, true, true).unwrap();
        lone_ok &= eval.loss.to_bits() == std::f64::consts::LN_2.to_bits();
        lone_ok &= eval.grad.iter().all(|g| g.to_bits() == 0.0f64.to_bits());

        // The rejected step of a gated column anchors later prev-action
        // contexts, so truncate right after the gate, then mutate the
        // rejected content: nothing may change, bit for bit.
        let mut truncated = ap.clone();
        truncated.columns.truncate(gate_at + 1);
        let mut mutated = truncated.clone();
        let swapped = match mutated.columns[gate_at].rejected.step().unwrap().action {
            ActionType::Logout => ActionType::ClearTraces,
            _ => ActionType::Logout,
        };
        mutated.columns[gate_at].rejected =
            tipo_core::align::AlignedSlot::Step(Step::new(gate_at, swapped).with_arg("k", "v"));
        let a = weighted_step_batch(&params, &reference, &tasks, &[&truncated], &cfg, true, true)
            .unwrap();
        let b = weighted_step_batch(&params, &reference, &tasks, &[&mutated], &cfg, true, true)
            .unwrap();
        leak_ok &= a.loss.to_bits() == b.loss.to_bits();
        leak_ok &= a.grad.iter().zip(&b.grad).all(|(x, y)| x.to_bits() == y.to_bits());
    }
    check(
        lone_ok && leak_ok,
        &format!(
            "criterion 3 gate nullification: {} gated pairs give bitwise-zero gradient \
             (lone column: {lone_ok}) and bitwise-identical results under rejected-side \
             mutation (no leak: {leak_ok})",
            gated.len()
        ),
    );
}

/// Criterion 4: the weighted family with both mechanisms disabled is the
/// step-DPO loss, within 1e-12, on 100 random aligned batches.
#[test]
fn criterion_04_reduction_identity() {
    let ds = dataset(40, 401);
    let tasks = task_map(&ds.tasks);
    let aligned: Vec<AlignedPair> = ds.pairs.iter().map(|p| align_pair(p).unwrap()).collect();
    let mut rng = seeded_rng(402);

    let mut worst = 0.0f64;
    for batch_idx in 0..100u64 {
        let params = random_params(4_000 + batch_idx);
        let reference = random_params(5_000 + batch_idx);
        let size = rng.gen_range(2..=6);
        let batch: Vec<&AlignedPair> =
            (0..size).map(|_| &aligned[rng.gen_range(0..aligned.len())]).collect();
        let mut cfg = ObjectiveConfig::default().with_method(Method::StepDpo);
        cfg.beta = [0.05, 0.1, 0.2, 0.5][rng.gen_range(0..4)];

        let plain = step_dpo_batch(&params, &reference, &tasks, &batch, &cfg).unwrap();
        let unweighted =
            weighted_step_batch(&params, &reference, &tasks, &batch, &cfg, false, false).unwrap();
        worst = worst.max((plain.loss - unweighted.loss).abs());
    }
    check(
        worst < 1e-12,
        &format!(
            "criterion 4 reduction identity: |tipo(alpha=1, m=1) - step_dpo| <= {worst:.2e} \
             over 100 random batches (needs <1e-12)"
        ),
    );
}

/// Criterion 5: the aligner reproduces the exhaustive optimum on a 500-pair
/// corpus of branches up to length 8, strips back to the originals on 1,000
/// generated pairs, always uses max(|chosen|, |rejected|) columns, and does
/// all of that in under 30 seconds.
#[test]
fn criterion_05_alignment_oracle() {
    let start = Instant::now();
    let emittable: Vec<ActionType> =
        ALL_ACTIONS.into_iter().filter(|a| *a != ActionType::NoAction).collect();
    let mut rng = seeded_rng(501);
    let mut optimum_ok = true;
    let mut length_ok = true;
    for _ in 0..500 {
        let mut branch = |persona: Persona| {
            let len = rng.gen_range(1..=8);
            let steps = (0..len)
                .map(|i| Step::new(i, emittable[rng.gen_range(0..emittable.len())]))
                .collect();
            Trajectory { task_id: "corpus".into(), persona, steps }
        };
        let pair = PreferencePair {
            task_id: "corpus".into(),
            persona: Persona::PrivacyFirst,
            chosen: branch(Persona::PrivacyFirst),
            rejected: branch(Persona::UtilityFirst),
        };
        let ap = align_pair(&pair).unwrap();
        length_ok &= ap.len() == pair.chosen.steps.len().max(pair.rejected.steps.len());

        let ck: Vec<String> = pair.chosen.steps.iter().map(tipo_core::align::match_key).collect();
        let rk: Vec<String> = pair.rejected.steps.iter().map(tipo_core::align::match_key).collect();
        let (longer, shorter) = if ck.len() >= rk.len() { (&ck, &rk) } else { (&rk, &ck) };
        let (best, gaps) = brute_force_align(longer, shorter);
        optimum_ok &= ap.matched_columns() == best && ap.placeholder_columns() == gaps;
    }

    let mut recovered = 0usize;
    for seed in [502, 503, 504, 505] {
        let out = generate(&GenConfig::default().with_seed(seed)).unwrap();
        for pair in &out.pairs {
            let ap = align_pair(pair).unwrap();
            length_ok &= ap.len() == pair.chosen.steps.len().max(pair.rejected.steps.len());
            if ap.chosen_steps() == pair.chosen.steps && ap.rejected_steps() == pair.rejected.steps
            {
                recovered += 1;
            }
        }
        if recovered >= 1_000 {
            break;
        }
    }
    let elapsed = start.elapsed();
    check(
        optimum_ok && length_ok && recovered >= 1_000 && elapsed.as_secs() < 30,
        &format!(
            "criterion 5 alignment oracle: exhaustive optimum matched on 500 random pairs \
             ({optimum_ok}), {recovered} generated pairs recovered, column count always \
             max(|chosen|,|rejected|) ({length_ok}), in {elapsed:.2?} (needs <30s)"
        ),
    );
}

/// Criterion 6: the intensity weight lies in [0,1], is monotone in the
/// score difference, vanishes at or below zero and saturates at or beyond
/// the configured maximum — 10,000 samples.
#[test]
fn criterion_06_weight_function() {
    let mut rng = seeded_rng(601);
    let mut ok = true;
    for _ in 0..10_000 {
        let cfg = ScoreConfig::default().with_gamma([0.0, 0.5, 1.0, 2.0][rng.gen_range(0..4)]);
        let lo = rng.gen_range(-10.0..10.0);
        let hi = rng.gen_range(-10.0..10.0);
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        let (a_lo, a_hi) = (intensity_weight(lo, &cfg), intensity_weight(hi, &cfg));
        ok &= (0.0..=1.0).contains(&a_lo) && (0.0..=1.0).contains(&a_hi);
        ok &= a_lo <= a_hi;
        ok &= intensity_weight(-lo.abs(), &cfg) == 0.0 && intensity_weight(0.0, &cfg) == 0.0;
        ok &= intensity_weight(cfg.delta_max + lo.abs(), &cfg) == 1.0
            && intensity_weight(cfg.delta_max, &cfg) == 1.0;
    }
    check(
        ok,
        "criterion 6 weight function: bounded to [0,1], monotone, zero at or below 0, \
         one at or beyond delta_max over 10,000 samples",
    );
}

/// Criterion 7: scoring the stored references against themselves maxes out
/// every metric on every seeded dataset.
#[test]
fn criterion_07_metric_maxima() {
    let mut ok = true;
    for seed in [7, 13, 42, 1, 2, 3] {
        let ds = dataset(150, seed);
        for split in [Split::Train, Split::Val, Split::Test] {
            let s = evaluate_references(&ds, split).unwrap().summary;
            ok &= s.sr_overall == 1.0
                && s.compliance == 100.0
                && s.non_compliance == 0.0
                && s.pd == 1.0;
        }
    }
    check(
        ok,
        "criterion 7 metric maxima: references give SR 1.0, compliance 100.0, \
         non-compliance 0.0, PD 1.0 on all splits of six seeded datasets",
    );
}

/// Criterion 8: on the stock benchmark (150 tasks, 0.6/0.1/0.3 split),
/// averaged over the three derived seeds, the headline trends hold and the
/// whole reproduction stays under two minutes.
#[test]
fn criterion_08_end_to_end_trend() {
    let start = Instant::now();
    let outcome = reproduce(&RunConfig::reproduce_defaults(), 7).unwrap();
    let elapsed = start.elapsed();
    let all = outcome.trends_pass();
    let detail: Vec<String> = outcome
        .trends
        .iter()
        .map(|t| format!("{}={}", t.name, if t.passed { "ok" } else { "FAIL" }))
        .collect();
    check(
        all && elapsed.as_secs() < 120,
        &format!(
            "criterion 8 end-to-end trend: {} in {elapsed:.2?} (needs all four and <120s)",
            detail.join(", ")
        ),
    );
}

/// Criterion 9: two CLI reproductions with the same base seed write
/// byte-identical summaries.
#[test]
fn criterion_09_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_tipo"))
            .args(["reproduce", "--seed", "7", "--out"])
            .arg(&out)
            .output()
            .unwrap();
        assert!(
            status.status.success(),
            "reproduce run {name} failed: {}",
            String::from_utf8_lossy(&status.stderr)
        );
        runs.push(std::fs::read(out.join("summary.csv")).unwrap());
    }
    check(
        runs[0] == runs[1],
        &format!(
            "criterion 9 determinism: `tipo reproduce --seed 7` twice gives byte-identical \
             summary.csv ({} bytes)",
            runs[0].len()
        ),
    );
}

/// Criterion 10: no task id appears in more than one split, and the splits
/// cover every task, on each benchmark seed.
#[test]
fn criterion_10_split_hygiene() {
    let mut ok = true;
    for seed in [7, 13, 42] {
        let ds = dataset(150, seed);
        ds.check_split_hygiene().unwrap();
        let mut seen = std::collections::BTreeMap::new();
        for split in [Split::Train, Split::Val, Split::Test] {
            for id in ds.split_ids(split) {
                *seen.entry(id.clone()).or_insert(0usize) += 1;
            }
        }
        ok &= seen.len() == ds.tasks.len();
        ok &= seen.values().all(|&n| n == 1);
        ok &= ds.tasks.iter().all(|t| seen.contains_key(&t.task_id));
    }
    check(
        ok,
        "criterion 10 split hygiene: every task id sits in exactly one split across \
         seeds 7, 13, 42",
    );
}
